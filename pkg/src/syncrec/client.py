"""Socket clients for producer and monitor sessions.

A producer declares streams, pushes chunks and markers, and answers the
hub's sync pings with its local clock. A monitor subscribes to the fan-out
and can inject investigator markers. Both run a background reader thread;
public calls are safe from one caller thread at a time.
"""

from __future__ import annotations

import queue
import socket
import threading
import time
from typing import Callable, Sequence

from . import wire
from .streams import MarkerOrigin, MarkerSample, Sample, StreamInfo


class ClientError(Exception):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


class _BaseClient:
    def __init__(self, host: str, port: int, clock: Callable[[], float] | None = None,
                 timeout: float = 10.0):
        self.clock = clock if clock is not None else time.monotonic
        self.timeout = timeout
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._sock.settimeout(None)
        self._send_lock = threading.Lock()
        self._acks: queue.Queue = queue.Queue()
        self._expecting_ack = 0
        self._events: queue.Queue = queue.Queue()
        self._closed = threading.Event()
        self.async_errors: list[ClientError] = []
        self.last_sync: tuple[float, float] | None = None  # (offset, rtt) self-view
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    # -- plumbing -----------------------------------------------------------

    def _send(self, msg_type: int, payload: bytes = b"") -> None:
        frame = wire.encode_frame(msg_type, payload)
        with self._send_lock:
            self._sock.sendall(frame)

    def _read_loop(self):
        decoder = wire.FrameDecoder()
        try:
            while not self._closed.is_set():
                data = self._sock.recv(65536)
                if not data:
                    break
                for msg_type, payload in decoder.feed(data):
                    self._handle(msg_type, payload)
        except (OSError, wire.ProtocolError):
            pass
        finally:
            self._closed.set()
            self._events.put(None)
            self._acks.put(ClientError("connection-lost", "hub closed the session"))

    def _handle(self, msg_type: int, payload: bytes) -> None:
        if msg_type == wire.MSG_PING:
            # hub-initiated sync exchange: echo with our receive/send stamps
            t0 = wire.decode_ping(payload)
            t1 = self.clock()
            self._send(wire.MSG_PONG, wire.encode_pong(t0, t1, self.clock()))
        elif msg_type == wire.MSG_ACK:
            self._acks.put(wire.decode_ack(payload))
        elif msg_type == wire.MSG_ERR:
            doc = wire.decode_json(payload)
            err = ClientError(doc.get("code", "error"), doc.get("detail", ""))
            if self._expecting_ack > 0:
                self._acks.put(err)
            else:
                self.async_errors.append(err)
        elif msg_type == wire.MSG_PONG:
            # completes a client-initiated ping; diagnostic only
            t0, t1, t2 = wire.decode_pong(payload)
            t3 = self.clock()
            rtt = (t3 - t0) - (t2 - t1)
            offset = ((t1 - t0) + (t2 - t3)) / 2.0
            self.last_sync = (offset, rtt)
        else:
            self._events.put((msg_type, payload))

    def hello(self, source_id: str, role: str, sim_offset: float | None = None,
              run_meta: dict | None = None) -> None:
        doc: dict = {"source_id": source_id, "role": role}
        if sim_offset is not None:
            doc["clock"] = {"sim_offset": sim_offset}
        if run_meta:
            doc["run_meta"] = run_meta
        self._send(wire.MSG_HELLO, wire.encode_json(doc))

    def ping(self) -> None:
        """Client-initiated exchange; the result lands in ``last_sync``."""
        self._send(wire.MSG_PING, wire.encode_ping(self.clock()))

    def inject_marker(self, label: str, origin: MarkerOrigin,
                      raw_t: float | None = None) -> None:
        if raw_t is None:
            raw_t = self.clock()
        self._send(wire.MSG_MARKER, wire.encode_marker(raw_t, label, origin))

    def bye(self) -> None:
        if self._closed.is_set():
            return
        try:
            self._send(wire.MSG_BYE)
        except OSError:
            pass

    def close(self, send_bye: bool = True) -> None:
        if send_bye:
            self.bye()
        self._closed.set()
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
        self._reader.join(timeout=5.0)

    @property
    def connected(self) -> bool:
        return not self._closed.is_set()


class ProducerClient(_BaseClient):
    def __init__(self, host: str, port: int, source_id: str,
                 clock: Callable[[], float] | None = None,
                 sim_offset: float | None = None,
                 run_meta: dict | None = None, timeout: float = 10.0):
        super().__init__(host, port, clock=clock, timeout=timeout)
        self.source_id = source_id
        self._channels: dict[int, int] = {}
        self.hello(source_id, "producer", sim_offset=sim_offset, run_meta=run_meta)

    def declare_stream(self, info: StreamInfo) -> int:
        """Register a stream and wait for the hub-assigned id."""
        self._expecting_ack += 1
        try:
            self._send(wire.MSG_STREAM_DECL, wire.encode_json(info.to_dict()))
            try:
                result = self._acks.get(timeout=self.timeout)
            except queue.Empty:
                raise ClientError("timeout", "no ACK for stream declaration")
        finally:
            self._expecting_ack -= 1
        if isinstance(result, ClientError):
            raise result
        self._channels[result] = info.channel_count
        return result

    def push_chunk(self, stream_id: int, samples: Sequence[Sample]) -> None:
        channels = self._channels.get(stream_id)
        if channels is None:
            raise ClientError("unknown-stream",
                              f"stream {stream_id} was not declared here")
        payload = wire.encode_sample_chunk(stream_id, samples, channels)
        self._send(wire.MSG_SAMPLE_CHUNK, payload)


class MonitorClient(_BaseClient):
    """Subscriber view of the hub: declarations, chunks, and markers arrive
    on ``events()``; markers can be injected back."""

    def __init__(self, host: str, port: int, source_id: str = "monitor",
                 clock: Callable[[], float] | None = None,
                 mode: str = "all", timeout: float = 10.0):
        super().__init__(host, port, clock=clock, timeout=timeout)
        self.hello(source_id, "monitor")
        self._send(wire.MSG_SUBSCRIBE, wire.encode_json({"mode": mode}))
        self._decls: dict[int, StreamInfo] = {}
        # the hub handles frames in order, so a completed ping means the
        # subscription is live
        self.ping()
        deadline = time.monotonic() + timeout
        while self.last_sync is None and time.monotonic() < deadline:
            if self._closed.is_set():
                raise ClientError("connection-lost", "hub closed during subscribe")
            time.sleep(0.001)
        if self.last_sync is None:
            raise ClientError("timeout", "subscription was not confirmed")

    def events(self, timeout: float | None = None):
        """Yield decoded events: ("decl", id, StreamInfo, source_ref),
        ("chunk", id, [Sample]...), ("marker", MarkerSample). Stops on
        disconnect or timeout."""
        while True:
            try:
                item = self._events.get(timeout=timeout)
            except queue.Empty:
                return
            if item is None:
                return
            msg_type, payload = item
            if msg_type == wire.MSG_STREAM_DECL:
                doc = wire.decode_json(payload)
                info = StreamInfo.from_dict(doc)
                stream_id = int(doc["stream_id"])
                self._decls[stream_id] = info
                yield ("decl", stream_id, info, int(doc.get("source_ref", 0)))
            elif msg_type == wire.MSG_SAMPLE_CHUNK:
                stream_id = wire.peek_chunk_stream_id(payload)
                info = self._decls.get(stream_id)
                if info is None:
                    continue
                _, samples = wire.decode_sample_chunk(payload, info.channel_count)
                yield ("chunk", stream_id, samples)
            elif msg_type == wire.MSG_MARKER:
                raw_t, label, origin, source_ref = wire.decode_marker(payload)
                yield ("marker", MarkerSample(raw_timestamp=raw_t, label=label,
                                              origin=origin,
                                              source_ref=source_ref or 0))


def parse_address(addr: str, default_port: int = wire.DEFAULT_PORT
                  ) -> tuple[str, int]:
    """Parse HOST[:PORT]."""
    if ":" in addr:
        host, port = addr.rsplit(":", 1)
        return host or "127.0.0.1", int(port)
    return addr or "127.0.0.1", default_port
