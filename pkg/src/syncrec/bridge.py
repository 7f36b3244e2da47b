"""WebSocket bridge between the hub and the browser dashboard.

The binary wire protocol stays untouched; browsers get JSON:

    hub -> client:
      {"type": "streams", "payload": [{"id","name","rate","offset","rtt"}]}
      {"type": "samples", "id": N, "t": [...], "v": [[...per channel...]]}
      {"type": "marker", "t": T, "label": L, "origin": "auto|investigator|subject"}
      {"type": "zone", "value": "Normal|Reduced|Stop"}
      {"type": "error", "detail": "..."}
    client -> hub (the only allowed direction):
      {"type": "inject", "label": TEXT}

Samples are decimated hub-side to at most 30 points per second per channel
(min and max of 1/15 s buckets), so the browser never sees full-rate data.
Display timestamps are raw timestamps corrected by the source's latest
known offset.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field

from websockets.sync.server import serve

from .hub import Hub
from .streams import MarkerOrigin, StreamInfo

DEFAULT_BRIDGE_PORT = 16572
MAX_POINTS_PER_SECOND = 30
BUCKET_HZ = MAX_POINTS_PER_SECOND / 2  # min + max per bucket
FLUSH_INTERVAL = 0.1

ZONE_BY_MARKER = {
    "Robot is stopping": "Stop",
    "Robot is slowing down": "Reduced",
    "Robot is speeding up": "Normal",
}


@dataclass
class _Bucket:
    t_min: float = 0.0
    v_min: float = math.inf
    t_max: float = 0.0
    v_max: float = -math.inf

    def add(self, t: float, v: float) -> None:
        if v < self.v_min:
            self.t_min, self.v_min = t, v
        if v > self.v_max:
            self.t_max, self.v_max = t, v


@dataclass
class _StreamState:
    info: StreamInfo
    source_ref: int
    buckets: dict[int, list[_Bucket]] = field(default_factory=dict)

    def add_sample(self, t: float, values) -> None:
        index = int(math.floor(t * BUCKET_HZ))
        per_channel = self.buckets.setdefault(
            index, [_Bucket() for _ in range(self.info.channel_count)])
        for bucket, v in zip(per_channel, values):
            bucket.add(t, float(v))

    def drain(self) -> tuple[list[float], list[list[float]]]:
        """Emit every complete bucket as up to two points per channel,
        merged on their timestamps."""
        if not self.buckets:
            return [], []
        points: dict[float, list[float | None]] = {}
        channels = self.info.channel_count
        for index in sorted(self.buckets):
            for ch, bucket in enumerate(self.buckets[index]):
                for t, v in ((bucket.t_min, bucket.v_min),
                             (bucket.t_max, bucket.v_max)):
                    row = points.setdefault(t, [None] * channels)
                    row[ch] = v
        self.buckets.clear()
        ts = sorted(points)
        rows = []
        last = [0.0] * channels
        for t in ts:
            row = points[t]
            filled = [last[i] if v is None else v for i, v in enumerate(row)]
            last = filled
            rows.append(filled)
        return ts, rows


class MonitorBridge:
    """Runs the WebSocket server and fans decimated hub traffic to every
    connected dashboard."""

    def __init__(self, hub: Hub, host: str = "127.0.0.1",
                 port: int = DEFAULT_BRIDGE_PORT,
                 flush_interval: float = FLUSH_INTERVAL):
        self.hub = hub
        self.flush_interval = flush_interval
        self._lock = threading.Lock()
        self._streams: dict[int, _StreamState] = {}
        self._offsets: dict[int, float] = {}
        self._pending_markers: list[dict] = []
        self._zone: str | None = None
        self._zone_dirty = False
        self._clients: set = set()
        self._stop = threading.Event()

        self._server = serve(self._handle_client, host, port)
        self.port = self._server.socket.getsockname()[1]
        self._server_thread = threading.Thread(
            target=self._server.serve_forever, name="bridge-serve", daemon=True)
        self._server_thread.start()
        self._flusher = threading.Thread(target=self._flush_loop,
                                         name="bridge-flush", daemon=True)
        self._flusher.start()
        self._subscriber = hub.subscribe("monitor-bridge", self._on_event)

    # -- hub side ---------------------------------------------------------

    def _on_event(self, event: tuple) -> None:
        kind = event[0]
        with self._lock:
            if kind == "decl":
                _, stream_id, info, source_ref = event
                self._streams[stream_id] = _StreamState(info, source_ref)
            elif kind == "chunk":
                _, stream_id, payload, _hub_t = event
                state = self._streams.get(stream_id)
                if state is None:
                    return
                from . import wire
                _, samples = wire.decode_sample_chunk(
                    payload, state.info.channel_count)
                offset = self._offsets.get(state.source_ref, 0.0)
                for s in samples:
                    state.add_sample(s.raw_timestamp + offset, s.values)
            elif kind == "marker":
                _, marker, _hub_t = event
                offset = self._offsets.get(marker.source_ref, 0.0)
                self._pending_markers.append({
                    "type": "marker",
                    "t": marker.raw_timestamp + offset,
                    "label": marker.label,
                    "origin": marker.origin.name.lower(),
                })
                zone = ZONE_BY_MARKER.get(marker.label)
                if zone is not None and zone != self._zone:
                    self._zone = zone
                    self._zone_dirty = True
            elif kind == "offset":
                _, source_ref, _measured_at, offset = event
                self._offsets[source_ref] = offset

    def _streams_message(self) -> dict:
        payload = []
        for stream_id, info, rtt, offset in self.hub.list_streams():
            payload.append({"id": stream_id, "name": info.name,
                            "rate": info.nominal_rate_hz,
                            "offset": offset, "rtt": rtt})
        return {"type": "streams", "payload": payload}

    # -- websocket side ------------------------------------------------------

    def _handle_client(self, ws) -> None:
        with self._lock:
            self._clients.add(ws)
        try:
            self._send(ws, self._streams_message())
            if self._zone is not None:
                self._send(ws, {"type": "zone", "value": self._zone})
            for raw in ws:
                self._handle_inbound(ws, raw)
        except Exception:
            pass
        finally:
            with self._lock:
                self._clients.discard(ws)

    def _handle_inbound(self, ws, raw) -> None:
        try:
            doc = json.loads(raw)
        except (json.JSONDecodeError, TypeError):
            self._send(ws, {"type": "error", "detail": "not json"})
            return
        if not isinstance(doc, dict) or doc.get("type") != "inject":
            self._send(ws, {"type": "error",
                            "detail": "clients may only send inject messages"})
            return
        label = doc.get("label", "")
        if not isinstance(label, str) or not label:
            self._send(ws, {"type": "error", "detail": "empty marker label"})
            return
        # the hub stamps the time; the dashboard operator is the investigator
        self.hub.inject_marker(label, MarkerOrigin.INVESTIGATOR,
                               raw_t=self.hub.clock.now())

    def _send(self, ws, doc: dict) -> None:
        try:
            ws.send(json.dumps(doc, separators=(",", ":")))
        except Exception:
            with self._lock:
                self._clients.discard(ws)

    def _flush_loop(self) -> None:
        ticks = 0
        while not self._stop.wait(self.flush_interval):
            ticks += 1
            messages = []
            with self._lock:
                for stream_id, state in self._streams.items():
                    ts, rows = state.drain()
                    if ts:
                        messages.append({"type": "samples", "id": stream_id,
                                         "t": ts, "v": rows})
                messages.extend(self._pending_markers)
                self._pending_markers = []
                if self._zone_dirty:
                    messages.append({"type": "zone", "value": self._zone})
                    self._zone_dirty = False
                clients = list(self._clients)
            if ticks % 10 == 0:
                messages.append(self._streams_message())
            for doc in messages:
                for ws in clients:
                    self._send(ws, doc)

    def close(self) -> None:
        self._stop.set()
        self.hub.unsubscribe(self._subscriber)
        self._server.shutdown()
        self._flusher.join(timeout=5.0)
        self._server_thread.join(timeout=5.0)
