"""The acquisition hub: accepts producer sessions, registers streams,
estimates per-producer clock offsets, and fans declarations, chunks,
markers, and offset entries out to subscribers.

Delivery contract: per-stream FIFO. Cross-stream ordering at delivery time
is not guaranteed and is reconstructed offline from corrected timestamps.
Producers are never blocked by a slow subscriber; a subscriber that
overflows its bounded queue is disconnected and a diagnostic marker is
emitted instead.
"""

from __future__ import annotations

import collections
import queue
import socket
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from . import wire
from .clocksync import (OffsetMeasurement, OffsetTable, WallClock,
                        measure_offset_hub_initiated)
from .streams import (MarkerOrigin, MarkerSample, StreamInfo, StreamKind,
                      validate_marker, validate_stream_info)

MARKER_STREAM_ID = 0
HUB_SOURCE_REF = 0
DEFAULT_QUEUE_CAPACITY = 65536
DEFAULT_PING_INTERVAL = 5.0
SYNC_WINDOW = 12


class HubError(Exception):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


class SessionPhase(Enum):
    HANDSHAKING = "handshaking"
    ACTIVE = "active"
    CLOSED = "closed"


@dataclass
class SessionState:
    session_id: int
    source_id: str = ""
    role: str = "producer"
    phase: SessionPhase = SessionPhase.HANDSHAKING
    stream_ids: set[int] = field(default_factory=set)
    offset_table: OffsetTable = field(default_factory=OffsetTable)
    sync_window: collections.deque = field(
        default_factory=lambda: collections.deque(maxlen=SYNC_WINDOW))
    pending_pings: dict[float, bool] = field(default_factory=dict)
    declared_sim_offset: float | None = None
    run_meta: dict = field(default_factory=dict)

    @property
    def source_ref(self) -> int:
        return self.session_id

    def last_measurement(self) -> OffsetMeasurement | None:
        return self.sync_window[-1] if self.sync_window else None


class Subscriber:
    """Bounded-queue fan-out endpoint. ``deliver`` runs on a dedicated
    worker thread; overflow marks the subscriber dead instead of blocking
    the producer path."""

    def __init__(self, name: str, deliver: Callable[[tuple], None],
                 capacity: int = DEFAULT_QUEUE_CAPACITY,
                 markers_only: bool = False,
                 on_close: Callable[[], None] | None = None):
        self.name = name
        self.markers_only = markers_only
        self._deliver = deliver
        self._on_close = on_close
        self._q: queue.Queue = queue.Queue(maxsize=capacity)
        self._dead = threading.Event()
        self._thread = threading.Thread(target=self._run, name=f"sub-{name}",
                                        daemon=True)
        self._thread.start()

    def offer(self, event: tuple) -> bool:
        if self._dead.is_set():
            return False
        try:
            self._q.put_nowait(event)
            return True
        except queue.Full:
            self._dead.set()
            return False

    def _run(self):
        while True:
            try:
                event = self._q.get(timeout=0.1)
            except queue.Empty:
                if self._dead.is_set():
                    break
                continue
            if event[0] == "close":
                break
            if self._dead.is_set():
                continue
            try:
                self._deliver(event)
            except Exception:
                self._dead.set()
                break
        if self._on_close is not None:
            try:
                self._on_close()
            except Exception:
                pass

    def close(self, drain: bool = True):
        if drain and not self._dead.is_set():
            self._q.put(("close",))
        else:
            self._dead.set()
        if threading.current_thread() is not self._thread:
            self._thread.join(timeout=10.0)

    @property
    def dead(self) -> bool:
        return self._dead.is_set()


class Hub:
    """Session registry, stream table, clock-sync bookkeeping, and fan-out."""

    def __init__(self, clock=None, ping_interval: float = DEFAULT_PING_INTERVAL,
                 queue_capacity: int = DEFAULT_QUEUE_CAPACITY):
        self.clock = clock if clock is not None else WallClock()
        self.ping_interval = ping_interval
        self.queue_capacity = queue_capacity
        self._lock = threading.RLock()
        self._sessions: dict[int, SessionState] = {}
        self._streams: dict[int, tuple[StreamInfo, SessionState]] = {}
        self._stream_keys: set[tuple[str, str]] = set()
        self._subscribers: list[Subscriber] = []
        self._next_session = 1
        self._next_stream = 1
        self._pushed_counts: collections.Counter = collections.Counter()
        self._marker_log: list[MarkerSample] = []
        self.run_meta: dict = {}

    # -- sessions ----------------------------------------------------------

    def open_session(self) -> SessionState:
        with self._lock:
            session = SessionState(session_id=self._next_session)
            self._next_session += 1
            self._sessions[session.session_id] = session
            return session

    def hello(self, session: SessionState, doc: dict) -> None:
        source_id = doc.get("source_id", "")
        if not source_id:
            raise HubError("bad-hello", "source_id required")
        with self._lock:
            session.source_id = source_id
            session.role = doc.get("role", "producer")
            session.run_meta = doc.get("run_meta", {}) or {}
            if session.run_meta:
                self.run_meta.update(session.run_meta)
            session.phase = SessionPhase.ACTIVE
            session.offset_table.source_id = source_id
            clock_doc = doc.get("clock") or {}
            if "sim_offset" in clock_doc:
                # Producer declares producer_time = hub_time + sim_offset,
                # so the correction offset (hub - producer) is its negation.
                session.declared_sim_offset = float(clock_doc["sim_offset"])
                self._add_offset_entry(session, self.clock.now(),
                                       -session.declared_sim_offset)

    def close_session(self, session: SessionState, lost: bool = False) -> None:
        with self._lock:
            if session.phase is SessionPhase.CLOSED:
                return
            session.phase = SessionPhase.CLOSED
            # free the (source_id, name) claims so the producer can reconnect;
            # stream ids themselves are never reused
            for stream_id in session.stream_ids:
                info, _ = self._streams[stream_id]
                self._stream_keys.discard((info.source_id, info.name))
            if lost and session.source_id:
                self._inject_marker_locked(
                    f"SOURCE-LOST:{session.source_id}", MarkerOrigin.AUTO,
                    self.clock.now(), HUB_SOURCE_REF)

    # -- streams -----------------------------------------------------------

    def register_stream(self, session: SessionState, info: StreamInfo) -> int:
        problems = validate_stream_info(info)
        if problems:
            raise HubError("bad-decl", "; ".join(problems))
        with self._lock:
            if session.phase is SessionPhase.CLOSED:
                raise HubError("bad-decl", "session is closed")
            key = (info.source_id, info.name)
            if key in self._stream_keys:
                raise HubError("duplicate-stream",
                               f"{info.source_id}/{info.name} already registered")
            stream_id = self._next_stream
            self._next_stream += 1
            self._stream_keys.add(key)
            self._streams[stream_id] = (info, session)
            session.stream_ids.add(stream_id)
            self._broadcast(("decl", stream_id, info, session.source_ref))
            return stream_id

    def route_chunk(self, session: SessionState, payload: bytes) -> int:
        """Validate and fan out an encoded SampleChunk; returns the sample
        count. The payload bytes pass through verbatim."""
        stream_id = wire.peek_chunk_stream_id(payload)
        with self._lock:
            entry = self._streams.get(stream_id)
            if entry is None or stream_id not in session.stream_ids:
                raise HubError("unknown-stream",
                               f"stream {stream_id} not registered to this session")
            if session.phase is not SessionPhase.ACTIVE:
                raise HubError("unknown-stream", "session not active")
            info, _ = entry
            count = wire.chunk_sample_count(payload)
            expected = 8 + count * (8 + 4 * info.channel_count)
            if len(payload) != expected:
                raise HubError("bad-chunk",
                               f"payload {len(payload)} bytes, expected {expected}")
            hub_t = self.clock.now()
            self._pushed_counts[stream_id] += count
            self._broadcast(("chunk", stream_id, payload, hub_t))
            return count

    # -- markers -----------------------------------------------------------

    def inject_marker(self, label: str, origin: MarkerOrigin,
                      raw_t: float | None = None,
                      session: SessionState | None = None) -> MarkerSample:
        if not label:
            raise HubError("empty-marker", "marker label must be non-empty")
        source_ref = session.source_ref if session is not None else HUB_SOURCE_REF
        if raw_t is None:
            raw_t = self.clock.now()
        with self._lock:
            return self._inject_marker_locked(label, origin, raw_t, source_ref)

    def _inject_marker_locked(self, label: str, origin: MarkerOrigin,
                              raw_t: float, source_ref: int) -> MarkerSample:
        marker = MarkerSample(raw_timestamp=raw_t, label=label, origin=origin,
                              source_ref=source_ref)
        problems = validate_marker(marker)
        if problems:
            raise HubError("bad-marker", "; ".join(problems))
        self._marker_log.append(marker)
        self._broadcast(("marker", marker, self.clock.now()))
        return marker

    # -- clock sync ----------------------------------------------------------

    def make_ping(self, session: SessionState) -> bytes | None:
        """Start one hub-initiated exchange; returns the PING frame to send,
        or None for sessions with a declared simulated clock."""
        if session.declared_sim_offset is not None:
            return None
        t0 = self.clock.now()
        session.pending_pings[t0] = True
        return wire.encode_frame(wire.MSG_PING, wire.encode_ping(t0))

    def complete_pong(self, session: SessionState, t0: float, t1: float,
                      t2: float) -> OffsetMeasurement | None:
        """Finish the exchange opened by make_ping (t0 echo matches)."""
        if session.pending_pings.pop(t0, None) is None:
            return None
        t3 = self.clock.now()
        m = measure_offset_hub_initiated(t0, t1, t2, t3)
        session.sync_window.append(m)
        selected = self._select_from_window(session)
        self._add_offset_entry(session, t3, selected)
        return m

    def _select_from_window(self, session: SessionState) -> float:
        best = session.sync_window[0]
        for m in session.sync_window:
            if m.rtt <= best.rtt:
                best = m
        return best.offset

    def _add_offset_entry(self, session: SessionState, measured_at: float,
                          offset: float) -> None:
        with self._lock:
            if session.offset_table.add(measured_at, offset):
                self._broadcast(("offset", session.source_ref, measured_at,
                                 offset))

    # -- subscribers ---------------------------------------------------------

    def subscribe(self, name: str, deliver: Callable[[tuple], None],
                  markers_only: bool = False,
                  capacity: int | None = None,
                  on_close: Callable[[], None] | None = None) -> Subscriber:
        sub = Subscriber(name, deliver,
                         capacity=capacity or self.queue_capacity,
                         markers_only=markers_only, on_close=on_close)
        with self._lock:
            # state sync, not replay: current declarations so the subscriber
            # can decode chunks that follow
            for stream_id, (info, session) in sorted(self._streams.items()):
                sub.offer(("decl", stream_id, info, session.source_ref))
            self._subscribers.append(sub)
        return sub

    def unsubscribe(self, sub: Subscriber, drain: bool = True) -> None:
        with self._lock:
            if sub in self._subscribers:
                self._subscribers.remove(sub)
        sub.close(drain=drain)

    def _broadcast(self, event: tuple) -> None:
        overflowed = []
        for sub in self._subscribers:
            if sub.markers_only and event[0] not in ("marker", "decl"):
                continue
            if not sub.offer(event):
                overflowed.append(sub)
        for sub in overflowed:
            self._subscribers.remove(sub)
        for sub in overflowed:
            self._inject_marker_locked("RECORDER-OVERFLOW", MarkerOrigin.AUTO,
                                       self.clock.now(), HUB_SOURCE_REF)

    # -- introspection ---------------------------------------------------------

    def list_streams(self) -> list[tuple[int, StreamInfo, float | None, float | None]]:
        """Snapshot of streams belonging to Active sessions, with the latest
        sync diagnostics per owning source."""
        out = []
        with self._lock:
            for stream_id, (info, session) in sorted(self._streams.items()):
                if session.phase is not SessionPhase.ACTIVE:
                    continue
                if session.declared_sim_offset is not None:
                    rtt, offset = 0.0, -session.declared_sim_offset
                else:
                    m = session.last_measurement()
                    rtt = m.rtt if m else None
                    offset = session.offset_table.last[1] \
                        if session.offset_table.last else None
                out.append((stream_id, info, rtt, offset))
        return out

    def pushed_count(self, stream_id: int) -> int:
        return self._pushed_counts[stream_id]

    def marker_log(self) -> list[MarkerSample]:
        with self._lock:
            return list(self._marker_log)

    def sessions(self) -> list[SessionState]:
        with self._lock:
            return list(self._sessions.values())

    def close(self) -> None:
        with self._lock:
            subs = list(self._subscribers)
            self._subscribers.clear()
        for sub in subs:
            sub.close(drain=True)


# --- recorder hookup ---------------------------------------------------------

def attach_recorder(hub: Hub, fh) -> tuple[Subscriber, "RecorderBridge"]:
    """Subscribe a RecordingWriter to the hub. Returns (subscriber, bridge);
    call bridge.finalize() after unsubscribing to write the footer."""
    from .recorder import RecordingWriter

    writer = RecordingWriter(fh)
    writer.write_declaration(
        MARKER_STREAM_ID,
        StreamInfo(name="markers", source_id="hub", kind=StreamKind.MARKER,
                   channel_count=1, nominal_rate_hz=0.0,
                   channel_labels=("label",), units=("text",)),
        HUB_SOURCE_REF)
    bridge = RecorderBridge(hub, writer)
    sub = hub.subscribe("recorder", bridge.deliver)
    return sub, bridge


class RecorderBridge:
    def __init__(self, hub: Hub, writer):
        self._hub = hub
        self._writer = writer
        self._finalized = False

    def deliver(self, event: tuple) -> None:
        kind = event[0]
        if kind == "decl":
            _, stream_id, info, source_ref = event
            self._writer.write_declaration(stream_id, info, source_ref)
        elif kind == "chunk":
            _, stream_id, payload, _hub_t = event
            self._writer.write_chunk_payload(payload)
        elif kind == "marker":
            _, marker, _hub_t = event
            self._writer.write_marker(marker)
        elif kind == "offset":
            _, source_ref, measured_at, offset = event
            self._writer.write_offset_entry(source_ref, measured_at, offset)

    def finalize(self) -> None:
        if self._finalized:
            return
        for session in self._hub.sessions():
            if session.source_id:
                self._writer.set_source(session.source_ref, session.source_id)
        self._writer.update_metadata(self._hub.run_meta)
        self._writer.close()
        self._finalized = True


# --- TCP front end -------------------------------------------------------------

class HubServer:
    """Socket server speaking the framed wire protocol on top of a Hub."""

    def __init__(self, hub: Hub, host: str = "127.0.0.1", port: int = 0):
        self.hub = hub
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(64)
        self._sock.settimeout(0.2)  # lets the accept loop notice shutdown
        self.address = self._sock.getsockname()
        self._stop = threading.Event()
        self._conns: list[_Connection] = []
        self._conn_lock = threading.Lock()
        self._accept_thread = threading.Thread(target=self._accept_loop,
                                               name="hub-accept", daemon=True)
        self._accept_thread.start()
        self._ping_thread = threading.Thread(target=self._ping_loop,
                                             name="hub-ping", daemon=True)
        self._ping_thread.start()

    @property
    def port(self) -> int:
        return self.address[1]

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            conn.settimeout(None)
            handler = _Connection(self, conn)
            with self._conn_lock:
                self._conns.append(handler)

    def _ping_loop(self):
        while not self._stop.wait(self.hub.ping_interval):
            self.ping_all()

    def ping_all(self) -> None:
        with self._conn_lock:
            conns = list(self._conns)
        for c in conns:
            c.send_ping()

    def close(self) -> None:
        self._stop.set()
        try:
            self._sock.close()
        except OSError:
            pass
        with self._conn_lock:
            conns = list(self._conns)
        for c in conns:
            c.close()
        self._accept_thread.join(timeout=5.0)
        self._ping_thread.join(timeout=self.hub.ping_interval + 5.0)

    def _forget(self, conn: "_Connection") -> None:
        with self._conn_lock:
            if conn in self._conns:
                self._conns.remove(conn)


class _Connection:
    """One socket session: reader thread parses frames and drives the hub;
    a writer thread serializes every outbound frame (replies and, for
    subscribers, fan-out events)."""

    def __init__(self, server: HubServer, sock: socket.socket):
        self.server = server
        self.hub = server.hub
        self.sock = sock
        self.session = self.hub.open_session()
        self.subscriber: Subscriber | None = None
        self._said_bye = False
        self._closing = False
        self._out: queue.Queue = queue.Queue(maxsize=self.hub.queue_capacity)
        self._writer = threading.Thread(target=self._write_loop, daemon=True)
        self._writer.start()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    # -- outbound --------------------------------------------------------

    def _enqueue(self, frame: bytes) -> bool:
        try:
            self._out.put_nowait(frame)
            return True
        except queue.Full:
            return False

    def _write_loop(self):
        while True:
            frame = self._out.get()
            if frame is None:
                break
            try:
                self.sock.sendall(frame)
            except OSError:
                break

    def send_err(self, code: str, detail: str = "") -> None:
        self._enqueue(wire.encode_frame(wire.MSG_ERR, wire.encode_err(code, detail)))

    def send_ping(self) -> None:
        if self.session.phase is not SessionPhase.ACTIVE:
            return
        frame = self.hub.make_ping(self.session)
        if frame is not None:
            self._enqueue(frame)

    # -- inbound ---------------------------------------------------------

    def _read_loop(self):
        decoder = wire.FrameDecoder()
        try:
            while True:
                data = self.sock.recv(65536)
                if not data:
                    break
                try:
                    messages = decoder.feed(data)
                except wire.ProtocolError as exc:
                    self.send_err(exc.code, exc.detail)
                    break
                for msg_type, payload in messages:
                    if not self._dispatch(msg_type, payload):
                        break
                else:
                    continue
                break
        except OSError:
            pass
        finally:
            self._teardown()

    def _dispatch(self, msg_type: int, payload: bytes) -> bool:
        try:
            if msg_type == wire.MSG_HELLO:
                self.hub.hello(self.session, wire.decode_json(payload))
                self.send_ping()  # sync immediately, not a ping-interval later
            elif msg_type == wire.MSG_STREAM_DECL:
                info = StreamInfo.from_dict(wire.decode_json(payload))
                stream_id = self.hub.register_stream(self.session, info)
                self._enqueue(wire.encode_frame(wire.MSG_ACK,
                                                wire.encode_ack(stream_id)))
            elif msg_type == wire.MSG_SAMPLE_CHUNK:
                self.hub.route_chunk(self.session, payload)
            elif msg_type == wire.MSG_MARKER:
                raw_t, label, origin, _ = wire.decode_marker(payload)
                self.hub.inject_marker(label, origin, raw_t, self.session)
            elif msg_type == wire.MSG_PING:
                t0 = wire.decode_ping(payload)
                t1 = self.hub.clock.now()
                self._enqueue(wire.encode_frame(
                    wire.MSG_PONG,
                    wire.encode_pong(t0, t1, self.hub.clock.now())))
            elif msg_type == wire.MSG_PONG:
                t0, t1, t2 = wire.decode_pong(payload)
                self.hub.complete_pong(self.session, t0, t1, t2)
            elif msg_type == wire.MSG_SUBSCRIBE:
                doc = wire.decode_json(payload)
                mode = doc.get("mode", "all")
                if mode not in ("all", "markers"):
                    raise HubError("bad-subscribe", f"unknown mode {mode!r}")
                if self.subscriber is None:
                    self.subscriber = self.hub.subscribe(
                        f"conn-{self.session.session_id}",
                        self._deliver_event,
                        markers_only=(mode == "markers"),
                        on_close=self._subscriber_died)
            elif msg_type == wire.MSG_BYE:
                self._said_bye = True
                return False
            elif msg_type == wire.MSG_ERR:
                pass  # peers may report errors; nothing to do server-side
            elif msg_type == wire.MSG_ACK:
                pass
        except HubError as exc:
            self.send_err(exc.code, exc.detail)
        except (wire.ProtocolError, KeyError, ValueError, TypeError) as exc:
            code = exc.code if isinstance(exc, wire.ProtocolError) else "bad-payload"
            self.send_err(code, str(exc))
        return True

    def _deliver_event(self, event: tuple) -> None:
        kind = event[0]
        if kind == "decl":
            _, stream_id, info, source_ref = event
            doc = info.to_dict()
            doc["stream_id"] = stream_id
            doc["source_ref"] = source_ref
            frame = wire.encode_frame(wire.MSG_STREAM_DECL, wire.encode_json(doc))
        elif kind == "chunk":
            _, _, payload, _ = event
            frame = wire.encode_frame(wire.MSG_SAMPLE_CHUNK, payload)
        elif kind == "marker":
            _, marker, _ = event
            frame = wire.encode_frame(
                wire.MSG_MARKER,
                wire.encode_marker(marker.raw_timestamp, marker.label,
                                   marker.origin, marker.source_ref))
        else:
            return  # offset entries are delivered to in-process subscribers only
        if not self._enqueue(frame):
            raise RuntimeError("subscriber connection backlogged")

    def _subscriber_died(self):
        self.close()

    # -- lifecycle ---------------------------------------------------------

    def _teardown(self):
        if self._closing:
            return
        self._closing = True
        if self.subscriber is not None:
            self.hub.unsubscribe(self.subscriber, drain=False)
        lost = (not self._said_bye
                and self.session.phase is SessionPhase.ACTIVE
                and self.session.role == "producer")
        self.hub.close_session(self.session, lost=lost)
        try:
            self._out.put_nowait(None)
        except queue.Full:
            pass
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
        self.server._forget(self)

    def close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
