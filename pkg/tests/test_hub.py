import threading
import time

import pytest

from syncrec import wire
from syncrec.client import ClientError, MonitorClient, ProducerClient
from syncrec.clocksync import SimClock
from syncrec.epoching import correct_recording
from syncrec.hub import Hub, HubError, HubServer, attach_recorder
from syncrec.recorder import read_recording
from syncrec.streams import MarkerOrigin, Sample, StreamInfo, StreamKind


@pytest.fixture
def server():
    hub = Hub(ping_interval=60.0)  # tests trigger pings explicitly
    srv = HubServer(hub)
    yield srv
    srv.close()
    hub.close()


def gsr_info(source="gsr-sim", name="gsr"):
    return StreamInfo(name=name, source_id=source, kind=StreamKind.NUMERIC,
                      channel_count=1, nominal_rate_hz=32.0,
                      channel_labels=("conductance",), units=("microsiemens",))


def producer(srv, source="gsr-sim", **kw):
    return ProducerClient("127.0.0.1", srv.port, source, **kw)


def ramp(start_t, n, dt=1 / 32.0):
    return [Sample(start_t + i * dt, (float(i),)) for i in range(n)]


def collect(monitor, want, timeout=10.0):
    """Drain monitor events until `want(events)` is satisfied."""
    events = []
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        for ev in monitor.events(timeout=0.2):
            events.append(ev)
            if want(events):
                return events
            if time.monotonic() > deadline:
                break
        if want(events):
            return events
    raise AssertionError(f"condition not met; got {len(events)} events")


def test_first_stream_gets_id_one(server):
    p = producer(server)
    assert p.declare_stream(gsr_info()) == 1
    p.close()


def test_sequential_ids_and_duplicate_rejected(server):
    p = producer(server)
    assert p.declare_stream(gsr_info(name="a")) == 1
    assert p.declare_stream(gsr_info(name="b")) == 2
    with pytest.raises(ClientError) as err:
        p.declare_stream(gsr_info(name="a"))
    assert err.value.code == "duplicate-stream"
    p.close()


def test_invalid_declaration_rejected(server):
    p = producer(server)
    bad = StreamInfo(name="m", source_id="gsr-sim", kind=StreamKind.MARKER,
                     channel_count=3, nominal_rate_hz=0.0)
    with pytest.raises(ClientError) as err:
        p.declare_stream(bad)
    assert err.value.code == "bad-decl"
    p.close()


def test_unknown_stream_chunk_errs_but_session_survives(server):
    p = producer(server)
    sid = p.declare_stream(gsr_info())
    m = MonitorClient("127.0.0.1", server.port)

    payload = wire.encode_sample_chunk(999, ramp(0.0, 3), 1)
    p._send(wire.MSG_SAMPLE_CHUNK, payload)

    p.push_chunk(sid, ramp(0.0, 5))
    events = collect(m, lambda es: sum(1 for e in es if e[0] == "chunk") >= 1)
    chunks = [e for e in events if e[0] == "chunk"]
    assert chunks[0][1] == sid and len(chunks[0][2]) == 5
    deadline = time.monotonic() + 5.0
    while not p.async_errors and time.monotonic() < deadline:
        time.sleep(0.01)
    assert p.async_errors and p.async_errors[0].code == "unknown-stream"
    p.close(); m.close()


def test_per_stream_fifo_order(server):
    p = producer(server)
    sid = p.declare_stream(gsr_info())
    m = MonitorClient("127.0.0.1", server.port)
    p.push_chunk(sid, ramp(0.0, 4))
    p.push_chunk(sid, ramp(0.2, 4))
    events = collect(m, lambda es: sum(1 for e in es if e[0] == "chunk") >= 2)
    chunks = [e for e in events if e[0] == "chunk"]
    t_first = [s.raw_timestamp for s in chunks[0][2]]
    t_second = [s.raw_timestamp for s in chunks[1][2]]
    assert max(t_first) < min(t_second)
    p.close(); m.close()


def test_ten_concurrent_producers_register_distinct_ids(server):
    m = MonitorClient("127.0.0.1", server.port)
    ids = []
    lock = threading.Lock()

    def run(i):
        p = producer(server, source=f"dev{i}")
        sid = p.declare_stream(gsr_info(source=f"dev{i}"))
        with lock:
            ids.append(sid)
        p.close()

    threads = [threading.Thread(target=run, args=(i,)) for i in range(10)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sorted(ids) == list(range(1, 11))
    events = collect(m, lambda es: sum(1 for e in es if e[0] == "decl") >= 10)
    decl_ids = [e[1] for e in events if e[0] == "decl"]
    assert sorted(decl_ids) == list(range(1, 11))
    assert len(set(decl_ids)) == 10  # each declaration seen exactly once
    m.close()


def test_soak_four_producers_lossless_and_ordered(server):
    """4 producers, 10k samples total: every subscriber sees all samples in
    per-stream push order."""
    m = MonitorClient("127.0.0.1", server.port)
    per_stream = 2500
    clients = []
    sids = []
    for i in range(4):
        p = producer(server, source=f"dev{i}")
        clients.append(p)
        sids.append(p.declare_stream(gsr_info(source=f"dev{i}")))

    def push(p, sid):
        t = 0.0
        for _ in range(per_stream // 50):
            p.push_chunk(sid, ramp(t, 50))
            t += 50 / 32.0

    threads = [threading.Thread(target=push, args=(c, s))
               for c, s in zip(clients, sids)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()

    def done(events):
        got = sum(len(e[2]) for e in events if e[0] == "chunk")
        return got >= 4 * per_stream

    events = collect(m, done, timeout=30.0)
    counts = {}
    last_t = {}
    for e in events:
        if e[0] != "chunk":
            continue
        _, sid, samples = e
        counts[sid] = counts.get(sid, 0) + len(samples)
        for s in samples:
            assert s.raw_timestamp >= last_t.get(sid, -1.0)
            last_t[sid] = s.raw_timestamp
    assert counts == {sid: per_stream for sid in sids}
    for sid in sids:
        assert server.hub.pushed_count(sid) == per_stream
    for c in clients:
        c.close()
    m.close()


# -- markers ---------------------------------------------------------------------

def test_marker_injection_auto_and_investigator(server):
    m = MonitorClient("127.0.0.1", server.port)
    p = producer(server, source="orchestrator")
    p.inject_marker("Experiment start", MarkerOrigin.AUTO, raw_t=1.0)
    p.inject_marker("subject adjusted glasses", MarkerOrigin.INVESTIGATOR,
                    raw_t=2.0)
    events = collect(m, lambda es: sum(1 for e in es if e[0] == "marker") >= 2)
    markers = [e[1] for e in events if e[0] == "marker"]
    assert markers[0].label == "Experiment start"
    assert markers[0].origin is MarkerOrigin.AUTO
    assert markers[1].origin is MarkerOrigin.INVESTIGATOR
    p.close(); m.close()


def test_empty_marker_rejected():
    hub = Hub()
    session = hub.open_session()
    hub.hello(session, {"source_id": "x", "role": "producer"})
    with pytest.raises(HubError) as err:
        hub.inject_marker("", MarkerOrigin.INVESTIGATOR, 0.0, session)
    assert err.value.code == "empty-marker"


def test_noncatalog_auto_marker_rejected():
    hub = Hub()
    session = hub.open_session()
    hub.hello(session, {"source_id": "x", "role": "producer"})
    with pytest.raises(HubError) as err:
        hub.inject_marker("improvised", MarkerOrigin.AUTO, 0.0, session)
    assert err.value.code == "bad-marker"


def test_markers_from_two_sessions_order_by_corrected_time(tmp_path, server):
    rec_path = tmp_path / "markers.srec"
    fh = open(rec_path, "wb")
    sub, bridge = attach_recorder(server.hub, fh)

    # a's clock runs 100 ms ahead of the hub, b's 50 ms behind
    a = producer(server, source="a", sim_offset=0.100)
    b = producer(server, source="b", sim_offset=-0.050)
    # corrected times: a -> 10.000, b -> 10.001, but b arrives first
    b.inject_marker("note-b", MarkerOrigin.INVESTIGATOR, raw_t=10.001 - 0.050)
    time.sleep(0.2)
    a.inject_marker("note-a", MarkerOrigin.INVESTIGATOR, raw_t=10.000 + 0.100)
    deadline = time.monotonic() + 5.0
    while len(server.hub.marker_log()) < 2 and time.monotonic() < deadline:
        time.sleep(0.01)
    a.close(); b.close()
    server.hub.unsubscribe(sub)
    bridge.finalize()
    fh.close()

    rec = read_recording(rec_path)
    assert len(rec.markers) == 2
    assert rec.markers[0].label == "note-b"  # arrival order preserved in file
    corrected = correct_recording(rec)
    labels = [m.label for _, m in corrected.markers]
    times = [t for t, _ in corrected.markers]
    assert labels == ["note-a", "note-b"]
    assert times[0] == pytest.approx(10.000, abs=1e-9)
    assert times[1] == pytest.approx(10.001, abs=1e-9)


# -- sync ------------------------------------------------------------------------

def test_list_streams_empty():
    assert Hub().list_streams() == []


def test_list_streams_shows_ping_diagnostics(server):
    true_offset = 0.25  # producer clock ahead of hub
    p = producer(server, clock=lambda: time.monotonic() + true_offset)
    sid = p.declare_stream(gsr_info())
    server.ping_all()
    deadline = time.monotonic() + 5.0
    session = server.hub.sessions()[0]
    while not session.offset_table.entries and time.monotonic() < deadline:
        time.sleep(0.01)
    listed = server.hub.list_streams()
    assert len(listed) == 1
    stream_id, info, rtt, offset = listed[0]
    assert stream_id == sid and info.name == "gsr"
    assert rtt is not None and rtt >= 0.0
    # hub - producer = -0.25; recovered within rtt/2
    assert offset == pytest.approx(-true_offset, abs=rtt / 2 + 1e-3)
    p.close()


def test_declared_sim_offset_writes_table_entry(server):
    p = producer(server, sim_offset=0.05)
    p.declare_stream(gsr_info())
    listed = server.hub.list_streams()
    _, _, rtt, offset = listed[0]
    assert rtt == 0.0
    assert offset == pytest.approx(-0.05)
    session = server.hub.sessions()[0]
    assert len(session.offset_table.entries) == 1
    p.close()


def test_closed_sessions_leave_the_listing(server):
    p1 = producer(server, source="keep")
    p2 = producer(server, source="drop")
    p1.declare_stream(gsr_info(source="keep"))
    p2.declare_stream(gsr_info(source="drop"))
    assert len(server.hub.list_streams()) == 2
    p2.close()  # sends BYE
    deadline = time.monotonic() + 5.0
    while len(server.hub.list_streams()) != 1 and time.monotonic() < deadline:
        time.sleep(0.01)
    listed = server.hub.list_streams()
    assert len(listed) == 1
    assert listed[0][1].source_id == "keep"
    p1.close()


def test_bye_session_is_not_marked_lost(server):
    p = producer(server)
    p.declare_stream(gsr_info())
    p.close()  # graceful
    time.sleep(0.3)
    labels = [m.label for m in server.hub.marker_log()]
    assert not any(l.startswith("SOURCE-LOST") for l in labels)


def test_abrupt_disconnect_emits_source_lost(server):
    p = producer(server, source="flaky")
    p.declare_stream(gsr_info(source="flaky"))
    p.close(send_bye=False)
    deadline = time.monotonic() + 5.0
    while time.monotonic() < deadline:
        labels = [m.label for m in server.hub.marker_log()]
        if "SOURCE-LOST:flaky" in labels:
            break
        time.sleep(0.01)
    assert "SOURCE-LOST:flaky" in [m.label for m in server.hub.marker_log()]


# -- subscriber overflow ------------------------------------------------------------

def test_slow_subscriber_disconnected_with_diagnostic_marker():
    hub = Hub(clock=SimClock())
    gate = threading.Event()
    seen = []

    def slow_deliver(event):
        gate.wait(timeout=30.0)
        seen.append(event)

    sub = hub.subscribe("slow", slow_deliver, capacity=4)
    session = hub.open_session()
    hub.hello(session, {"source_id": "orch", "role": "producer"})
    for i in range(8):
        hub.clock.advance(0.01)
        hub.inject_marker("Experiment start", MarkerOrigin.AUTO,
                          raw_t=float(i), session=session)
    assert sub.dead
    labels = [m.label for m in hub.marker_log()]
    assert "RECORDER-OVERFLOW" in labels
    gate.set()
    sub.close(drain=False)
    hub.close()


def test_markers_only_subscription(server):
    p = producer(server)
    sid = p.declare_stream(gsr_info())
    m = MonitorClient("127.0.0.1", server.port, mode="markers")
    p.push_chunk(sid, ramp(0.0, 10))
    p.inject_marker("Experiment start", MarkerOrigin.AUTO, raw_t=0.0)
    events = collect(m, lambda es: any(e[0] == "marker" for e in es))
    assert not any(e[0] == "chunk" for e in events)
    p.close(); m.close()
