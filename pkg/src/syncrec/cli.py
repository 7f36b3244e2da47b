"""Single entry point: hub, simulators, experiments, recording tools.

Exit codes: 0 success, 1 usage error, 2 runtime error. The hub address
defaults to the SYNCREC_HUB environment variable.
"""

from __future__ import annotations

import argparse
import fnmatch
import json
import math
import os
import signal
import sys
import threading
import time

import numpy as np

from . import wire
from .client import ClientError, ProducerClient, parse_address
from .clocksync import SimClock
from .epoching import (EpochingError, correct_recording, export_epochs,
                       extract_epochs)
from .hub import Hub, HubServer, attach_recorder
from .orchestrator import (CASE1_HOME, CASE1_PLATE, CaseOneConfig,
                           CaseTwoConfig, OrchestratorError, _GridDevice,
                           crossing_script, device_stream_info,
                           load_experiment_config, run_case1, run_case2)
from .recorder import MARKER_STREAM_ID, RecordingError, read_recording
from .simdevices import (DEFAULT_RATES, IndexedNoise, TrajectoryMode,
                         TrajectoryPlan, execute_profile, gen_ecg, gen_gsr,
                         gen_ppg, mocap_values)
from .streams import MarkerOrigin

USAGE_EXIT = 1
RUNTIME_EXIT = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="syncrec",
                     description="Synchronized multi-stream recording for "
                                 "human-robot collaboration experiments.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND",
                                parser_class=_Parser)

    p_hub = sub.add_parser("hub", help="run the hub")
    hub_sub = p_hub.add_subparsers(dest="hub_command", metavar="ACTION",
                                   parser_class=_Parser)
    p_serve = hub_sub.add_parser("serve",
                                 help="serve producers and record")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=wire.DEFAULT_PORT)
    p_serve.add_argument("--record", metavar="FILE.srec",
                         help="record everything to this file")
    p_serve.add_argument("--bridge-port", type=int, default=None,
                         help="expose the WebSocket monitor bridge")
    p_serve.add_argument("--ui", metavar="DIR", default=None,
                         help="serve the dashboard assets from DIR over HTTP")
    p_serve.add_argument("--ping-interval", type=float, default=5.0)

    p_sim = sub.add_parser("sim",
                           help="run a simulated device")
    p_sim.add_argument("kind", choices=["gsr", "ppg", "ecg", "mocap", "robot"])
    p_sim.add_argument("--hub", default=None, metavar="HOST:PORT")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--rate", type=float, default=None,
                       help="sampling rate override (Hz)")
    p_sim.add_argument("--duration", type=float, default=60.0)
    p_sim.add_argument("--accelerate", action="store_true",
                       help="push without pacing (simulated timestamps)")
    p_sim.add_argument("--sim-offset", type=float, default=0.0,
                       help="simulated clock offset in accelerated mode")

    p_exp = sub.add_parser("experiment",
                           help="run a case study")
    exp_sub = p_exp.add_subparsers(dest="case", metavar="CASE",
                                   parser_class=_Parser)
    p_c1 = exp_sub.add_parser("case1",
                              help="loading/unloading task")
    p_c1.add_argument("--task", type=int, required=True)
    p_c1.add_argument("--subject", default="S01")
    p_c1.add_argument("--config", default=None)
    p_c1.add_argument("--hub", default=None, metavar="HOST:PORT")
    p_c1.add_argument("--seed", type=int, default=0)
    p_c2 = exp_sub.add_parser("case2",
                              help="speed and separation monitoring task")
    p_c2.add_argument("--subject", default="S01")
    p_c2.add_argument("--config", default=None)
    p_c2.add_argument("--hub", default=None, metavar="HOST:PORT")
    p_c2.add_argument("--seed", type=int, default=0)

    p_epoch = sub.add_parser("epoch",
                             help="cut marker-aligned windows from a recording")
    p_epoch.add_argument("--in", dest="infile", required=True)
    p_epoch.add_argument("--marker", required=True)
    p_epoch.add_argument("--pre", type=float, required=True)
    p_epoch.add_argument("--post", type=float, required=True)
    p_epoch.add_argument("--out", required=True)
    p_epoch.add_argument("--glob", action="store_true",
                         help="treat --marker as a glob pattern")

    p_inspect = sub.add_parser("inspect",
                               help="print the stream table and marker timeline")
    p_inspect.add_argument("--in", dest="infile", required=True)

    p_marker = sub.add_parser("marker",
                              help="marker utilities")
    marker_sub = p_marker.add_subparsers(dest="marker_command", metavar="ACTION",
                                         parser_class=_Parser)
    p_inject = marker_sub.add_parser("inject",
                                     help="inject an investigator marker")
    p_inject.add_argument("--hub", default=None, metavar="HOST:PORT")
    p_inject.add_argument("--label", required=True)

    return parser


def _hub_address(explicit: str | None) -> str:
    addr = explicit or os.environ.get("SYNCREC_HUB", "")
    if not addr:
        raise ClientError("no-hub",
                          "set --hub or the SYNCREC_HUB environment variable")
    return addr


# -- hub serve ------------------------------------------------------------------

def _conventional_name(run_meta: dict, started_at: str) -> str:
    experiment = str(run_meta.get("experiment", "session"))
    subject = str(run_meta.get("subject", "anon"))
    return f"{experiment}_{subject}_{started_at}.srec"


def cmd_hub_serve(args) -> int:
    import datetime
    import pathlib

    hub = Hub(ping_interval=args.ping_interval)
    server = HubServer(hub, host=args.host, port=args.port)
    recorder_parts = None
    record_path = None
    record_dir = None
    if args.record:
        record_path = pathlib.Path(args.record)
        started_at = datetime.datetime.now().strftime("%Y%m%dT%H%M%S")
        if record_path.is_dir():
            # name per convention once the run metadata is known; record to
            # a temp file until then
            record_dir = record_path
            record_path = record_dir / f".recording-{started_at}.part"
        fh = open(record_path, "wb")
        sub, bridge = attach_recorder(hub, fh)
        recorder_parts = (fh, sub, bridge, started_at)
    bridge_server = None
    if args.bridge_port is not None:
        from .bridge import MonitorBridge
        bridge_server = MonitorBridge(hub, host=args.host, port=args.bridge_port)
    ui_server = None
    if args.ui:
        import functools
        import http.server
        handler = functools.partial(http.server.SimpleHTTPRequestHandler,
                                    directory=args.ui)
        ui_server = http.server.ThreadingHTTPServer((args.host, 0), handler)
        threading.Thread(target=ui_server.serve_forever, daemon=True).start()
        print(f"ui: http://{args.host}:{ui_server.server_address[1]}/")

    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    print(f"hub listening on {args.host}:{server.port}"
          + (f", recording to {record_path}" if args.record else ""))
    if bridge_server is not None:
        print(f"monitor bridge on ws://{args.host}:{bridge_server.port}/")
    try:
        while not stop.wait(0.2):
            pass
    finally:
        if bridge_server is not None:
            bridge_server.close()
        if ui_server is not None:
            ui_server.shutdown()
        server.close()
        if recorder_parts is not None:
            fh, sub, bridge, started_at = recorder_parts
            hub.unsubscribe(sub)
            bridge.finalize()
            fh.close()
            if record_dir is not None:
                final = record_dir / _conventional_name(hub.run_meta, started_at)
                record_path.rename(final)
                record_path = final
            print(f"recording finalized: {record_path}")
        hub.close()
    return 0


# -- device simulators ---------------------------------------------------------------

def _sim_values_fn(kind: str, seed: int, rate: float):
    if kind == "gsr":
        noise = IndexedNoise(seed=seed, std=0.01)

        def gsr_fn(ts):
            k0 = int(round(float(ts[0]) * rate)) if len(ts) else 0
            return gen_gsr(ts, 2.0) + noise.slice(k0, len(ts))
        return gsr_fn
    if kind == "ppg":
        return lambda ts: gen_ppg(ts, 72.0)
    if kind == "ecg":
        return lambda ts: gen_ecg(ts, 72.0)
    if kind == "mocap":
        script = crossing_script(start=5.0, dwell=3.0)
        return lambda ts: np.array([mocap_values(float(t), script) for t in ts])
    if kind == "robot":
        plan = TrajectoryPlan(waypoints=(CASE1_HOME, CASE1_PLATE, CASE1_HOME),
                              v_max=100.0, a_max=150.0,
                              mode=TrajectoryMode.RANDOM)
        profile = execute_profile(plan, 0.02)

        def robot_fn(ts):
            rows = np.empty((len(ts), 12))
            for i, t in enumerate(ts):
                tau = math.fmod(t, max(profile.duration, 1e-9))
                q = [np.interp(tau, profile.times, profile.positions[:, j])
                     for j in range(6)]
                qd = [np.interp(tau, profile.times, profile.velocities[:, j])
                      for j in range(6)]
                rows[i] = q + qd
            return rows
        return robot_fn
    raise ValueError(kind)


def cmd_sim(args) -> int:
    import dataclasses

    host, port = parse_address(_hub_address(args.hub))
    rate = args.rate or DEFAULT_RATES.get(args.kind, 50.0)
    values_fn = _sim_values_fn(args.kind, args.seed, rate)
    info = device_stream_info(args.kind)
    if args.rate:
        info = dataclasses.replace(info, nominal_rate_hz=rate)

    if args.accelerate:
        client = ProducerClient(host, port, info.source_id,
                                sim_offset=args.sim_offset)
        clock = SimClock()
        device = _GridDevice(client, info, rate, args.sim_offset, values_fn)
        while clock.now() < args.duration:
            clock.advance(0.25)
            device.advance(min(clock.now(), args.duration))
        device.flush()
        client.close()
        print(f"{args.kind}: pushed {device.pushed} samples (accelerated)")
        return 0

    # live pacing: sample index k maps to wall time anchor + k/rate
    client = ProducerClient(host, port, info.source_id)
    anchor = time.monotonic()
    device = _GridDevice(client, info, rate, anchor, values_fn, chunk_min=8)
    stop = threading.Event()
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    while not stop.is_set():
        elapsed = time.monotonic() - anchor
        if elapsed >= args.duration:
            break
        device.advance(elapsed)
        stop.wait(0.05)
    device.flush()
    client.close()
    print(f"{args.kind}: pushed {device.pushed} samples over "
          f"{min(args.duration, time.monotonic() - anchor):.1f} s")
    return 0


# -- experiments ------------------------------------------------------------------------

def cmd_experiment(args) -> int:
    if args.case == "case1" and args.task not in (1, 2, 3, 4):
        print("task must be 1..4", file=sys.stderr)
        return USAGE_EXIT
    address = _hub_address(args.hub)
    model = None
    if args.case == "case1":
        if args.config:
            cfg, model = load_experiment_config(
                args.config, "case1", task_id=args.task,
                subject_id=args.subject, seed=args.seed)
        else:
            cfg = CaseOneConfig(task_id=args.task, subject_id=args.subject,
                                seed=args.seed)
        result = run_case1(cfg, address, model=model)
        print(f"case1 task {args.task} ({cfg.acceleration_mode.value} accel, "
              f"{cfg.trajectory_mode.value} trajectory) complete: "
              f"{result.duration:.2f} s simulated")
    else:
        if args.config:
            cfg, model = load_experiment_config(
                args.config, "case2", subject_id=args.subject, seed=args.seed)
        else:
            cfg = CaseTwoConfig(subject_id=args.subject, seed=args.seed)
        result = run_case2(cfg, address, model=model)
        print(f"case2 complete: {result.products_placed} products in "
              f"{result.duration:.2f} s simulated, "
              f"{result.zone_change_count} zone changes")
    for t, label in result.markers:
        print(f"  {t:9.3f}  {label}")
    return 0


# -- offline tools ------------------------------------------------------------------------

def cmd_epoch(args) -> int:
    rec = read_recording(args.infile)
    if args.glob:
        labels = sorted({m.label for m in rec.markers
                         if fnmatch.fnmatchcase(m.label, args.marker)})
    else:
        labels = [args.marker]
    epochs = []
    for label in labels:
        epochs.extend(extract_epochs(rec, label, args.pre, args.post))
    epochs.sort(key=lambda e: e.marker_t)
    export_epochs(epochs, args.out)
    print(f"wrote {len(epochs)} epochs to {args.out}")
    return 0


def cmd_inspect(args) -> int:
    rec = read_recording(args.infile)
    print(f"recording: {args.infile}")
    if rec.truncated:
        print("  (truncated: footer missing, counts rebuilt by scan)")
    if rec.metadata:
        print(f"  metadata: {json.dumps(rec.metadata, sort_keys=True)}")
    print()
    print(f"{'id':>4}  {'name':<12} {'source':<20} {'kind':<8} "
          f"{'rate':>7} {'ch':>3} {'count':>8}")
    for stream_id, ds in sorted(rec.streams.items()):
        count = (len(rec.markers) if stream_id == MARKER_STREAM_ID
                 else rec.counts.get(stream_id, 0))
        print(f"{stream_id:>4}  {ds.info.name:<12} {ds.info.source_id:<20} "
              f"{ds.info.kind.value:<8} {ds.info.nominal_rate_hz:>7.1f} "
              f"{ds.info.channel_count:>3} {count:>8}")
    print()
    print("sync sources:")
    for source_ref, table in sorted(rec.offset_tables.items()):
        if table.entries:
            first, last = table.entries[0][1], table.entries[-1][1]
            print(f"  source {source_ref} ({table.source_id}): "
                  f"{len(table.entries)} entries, offset {first:+.6f} s "
                  f"-> {last:+.6f} s")
    print()
    try:
        corrected = correct_recording(rec)
        print("marker timeline (corrected):")
        timeline = corrected.markers
    except EpochingError as exc:
        print(f"marker timeline (raw; correction unavailable: {exc}):")
        timeline = sorted(((m.raw_timestamp, m) for m in rec.markers),
                          key=lambda pair: pair[0])
    for t, marker in timeline:
        print(f"  {t:12.4f}  {marker.origin.name:<12} {marker.label}")
    return 0


def cmd_marker_inject(args) -> int:
    if not args.label:
        print("marker label must be non-empty", file=sys.stderr)
        return USAGE_EXIT
    host, port = parse_address(_hub_address(args.hub))
    client = ProducerClient(host, port, "marker-cli")
    # land the stamp on the hub timeline: measure our offset first
    client.ping()
    deadline = time.monotonic() + 5.0
    while client.last_sync is None and time.monotonic() < deadline:
        time.sleep(0.005)
    offset = client.last_sync[0] if client.last_sync else 0.0
    client.inject_marker(args.label, MarkerOrigin.INVESTIGATOR,
                         raw_t=client.clock() + offset)
    client.close()
    print(f"injected: {args.label}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "hub":
            if args.hub_command != "serve":
                print("usage: syncrec hub serve [options]", file=sys.stderr)
                return USAGE_EXIT
            return cmd_hub_serve(args)
        if args.command == "sim":
            return cmd_sim(args)
        if args.command == "experiment":
            if args.case not in ("case1", "case2"):
                print("usage: syncrec experiment {case1,case2} [options]",
                      file=sys.stderr)
                return USAGE_EXIT
            return cmd_experiment(args)
        if args.command == "epoch":
            return cmd_epoch(args)
        if args.command == "inspect":
            return cmd_inspect(args)
        if args.command == "marker":
            if args.marker_command != "inject":
                print("usage: syncrec marker inject [options]", file=sys.stderr)
                return USAGE_EXIT
            return cmd_marker_inject(args)
        parser.print_help()
        return USAGE_EXIT
    except (ClientError, OrchestratorError, RecordingError, EpochingError,
            wire.ProtocolError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
