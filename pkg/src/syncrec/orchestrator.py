"""Experiment orchestration for the two case studies.

The orchestrator owns a stepped simulated clock and drives everything that
"happens" in an experiment: robot motion, the simulated human, the safety
monitor, master-pin polls, and device sample generation. All state flows
out through ordinary producer sessions against a live hub, so the recorded
artifact is exactly what real devices would have produced. Device sessions
declare their (simulated) clock offsets in HELLO, which keeps corrected
timestamps, marker sequences, and epoch exports bit-for-bit reproducible
for a given seed and configuration.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .client import ProducerClient, parse_address
from .clocksync import SimClock
from .simdevices import (DEFAULT_RATES, DEFAULT_V_MAX, AccelerationMode,
                         MotionSegment, StimulusEvent, TrajectoryMode,
                         TrajectoryProfile, TrajectoryPlan, execute_profile,
                         gen_ecg, gen_gsr, gen_mocap, gen_ppg, mocap_values,
                         plan_trajectory, validate_script, MOCAP_LABELS)
from .streams import MarkerOrigin, Sample, StreamInfo, StreamKind
from .twin import (KinematicModel, SSMConfig, SeparationState, Zone,
                   forward_kinematics, min_distance, robot_segments, ssm_step,
                   with_speed)


class OrchestratorError(Exception):
    pass


# A generic 6R arm (meters/radians): shoulder pan on a riser, two in-plane
# links, and a short 3R wrist. Used by both case studies unless a model
# file is supplied.
DEFAULT_ARM = {
    "joints": [
        {"a": 0.0, "alpha": math.pi / 2, "d": 0.20, "theta_offset": 0.0},
        {"a": 0.45, "alpha": 0.0, "d": 0.0, "theta_offset": 0.0},
        {"a": 0.35, "alpha": 0.0, "d": 0.0, "theta_offset": 0.0},
        {"a": 0.0, "alpha": math.pi / 2, "d": 0.12, "theta_offset": 0.0},
        {"a": 0.0, "alpha": -math.pi / 2, "d": 0.10, "theta_offset": 0.0},
        {"a": 0.0, "alpha": 0.0, "d": 0.08, "theta_offset": 0.0},
    ],
    "inflation_radius": 0.05,
}

# Joint-space postures in degrees. Home sits beyond the container, away
# from the human side, so only plate-bound moves read as approaching.
CASE1_HOME = (-75.0, -55.0, 100.0, -50.0, -90.0, 0.0)
CASE1_PLATE = (50.0, -35.0, 95.0, -60.0, -90.0, 0.0)
CASE1_CONTAINER = (-55.0, -45.0, 100.0, -55.0, -90.0, 0.0)
# Candidate intermediate waypoints (three planes between plate and container)
CASE1_PLANES = [
    [(20.0, -50.0, 95.0, -45.0, -90.0, 0.0),
     (25.0, -40.0, 100.0, -60.0, -85.0, 0.0),
     (15.0, -55.0, 90.0, -35.0, -95.0, 0.0),
     (30.0, -45.0, 105.0, -60.0, -90.0, 0.0)],
    [(0.0, -55.0, 95.0, -40.0, -90.0, 0.0),
     (-5.0, -45.0, 100.0, -55.0, -85.0, 0.0),
     (5.0, -60.0, 90.0, -30.0, -95.0, 0.0),
     (0.0, -40.0, 105.0, -65.0, -90.0, 0.0)],
    [(-25.0, -50.0, 95.0, -45.0, -90.0, 0.0),
     (-30.0, -40.0, 100.0, -60.0, -85.0, 0.0),
     (-20.0, -55.0, 90.0, -35.0, -95.0, 0.0),
     (-35.0, -45.0, 105.0, -60.0, -90.0, 0.0)],
]

CASE2_PICK = (0.0, -40.0, 80.0, -40.0, -90.0, 0.0)

DEVICE_SIM_OFFSETS = {"gsr": 0.040, "ppg": -0.025, "ecg": 0.010,
                      "mocap": -0.015, "robot": 0.005}

ACCEL_BY_NAME = {"normal": AccelerationMode.NORMAL,
                 "high": AccelerationMode.HIGH,
                 "random": AccelerationMode.RANDOM}

# Table of per-task (acceleration, trajectory) pairs for Case Study I.
CASE1_TASKS = {
    1: (AccelerationMode.NORMAL, TrajectoryMode.FIXED),
    2: (AccelerationMode.HIGH, TrajectoryMode.FIXED),
    3: (AccelerationMode.NORMAL, TrajectoryMode.RANDOM),
    4: (AccelerationMode.HIGH, TrajectoryMode.RANDOM),
}


@dataclass(frozen=True)
class CaseOneConfig:
    """Case Study I parameters. Acceleration and trajectory modes are
    derived from the task id; they cannot be set independently."""

    task_id: int
    subject_id: str = "S01"
    insert_count: int = 8
    poll_period: float = 5.0
    load_latency: float = 12.0
    human_strategy: str = "wait"  # or "concurrent"
    seed: int = 0
    dt: float = 0.02
    gsr_tonic: float = 2.0
    gsr_coupling: float = 0.6     # SCR magnitude per "Robot approaching"
    heart_rate: float = 72.0
    compliance_threshold: float = 0.15
    pick_dwell: float = 0.2
    place_dwell: float = 0.2

    def __post_init__(self):
        if self.task_id not in CASE1_TASKS:
            raise ValueError("task must be 1..4")
        if self.insert_count < 1:
            raise ValueError("insert_count must be >= 1")
        if self.poll_period <= 0 or self.dt <= 0:
            raise ValueError("poll_period and dt must be positive")
        if self.human_strategy not in ("wait", "concurrent"):
            raise ValueError("human_strategy must be 'wait' or 'concurrent'")

    @property
    def acceleration_mode(self) -> AccelerationMode:
        return CASE1_TASKS[self.task_id][0]

    @property
    def trajectory_mode(self) -> TrajectoryMode:
        return CASE1_TASKS[self.task_id][1]

    @classmethod
    def from_json(cls, path: str | Path, **overrides) -> "CaseOneConfig":
        doc = json.loads(Path(path).read_text())
        doc.pop("model", None)  # resolved by load_experiment_config
        doc.update(overrides)
        return cls(**doc)


@dataclass(frozen=True)
class CaseTwoConfig:
    subject_id: str = "S01"
    product_count: int = 10
    base_rotation: float = math.pi  # radians swept by the base per transfer
    ssm: SSMConfig = field(default_factory=SSMConfig)
    human_script: str = "crossing"  # "far", "crossing", or explicit segments
    script_segments: tuple[MotionSegment, ...] | None = None
    seed: int = 0
    dt: float = 0.02
    v_max: float = DEFAULT_V_MAX
    a_max: float = 300.0
    reduced_scale: float = 0.33
    gsr_tonic: float = 2.0
    heart_rate: float = 75.0
    pick_dwell: float = 0.3
    place_dwell: float = 0.3
    max_sim_time: float = 900.0

    def __post_init__(self):
        if self.product_count < 1:
            raise ValueError("product_count must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @classmethod
    def from_json(cls, path: str | Path, **overrides) -> "CaseTwoConfig":
        doc = json.loads(Path(path).read_text())
        doc.pop("model", None)  # resolved by load_experiment_config
        doc.update(overrides)
        if "ssm" in doc and isinstance(doc["ssm"], dict):
            doc["ssm"] = SSMConfig.from_dict(doc["ssm"])
        if "script_segments" in doc and doc["script_segments"]:
            doc["script_segments"] = tuple(
                MotionSegment(start=s["start"],
                              from_point=tuple(s["from_point"]),
                              to_point=tuple(s["to_point"]),
                              speed=s["speed"])
                for s in doc["script_segments"])
        return cls(**doc)


def load_experiment_config(path: str | Path, case: str, **overrides):
    """Read a scenario config file; returns (config, kinematic model or
    None). A "model" entry may be an inline model document or a path
    relative to the config file."""
    path = Path(path)
    doc = json.loads(path.read_text())
    model = None
    model_ref = doc.get("model")
    if isinstance(model_ref, dict):
        model = KinematicModel.from_dict(model_ref)
    elif isinstance(model_ref, str):
        model_path = Path(model_ref)
        if not model_path.is_absolute():
            candidate = path.parent / model_path
            model_path = candidate if candidate.exists() else model_path
        model = KinematicModel.from_json(model_path)
    if case == "case1":
        return CaseOneConfig.from_json(path, **overrides), model
    return CaseTwoConfig.from_json(path, **overrides), model


# -- plate ----------------------------------------------------------------------

@dataclass
class PlateState:
    inserts: int = 0

    @property
    def master_pin_loaded(self) -> bool:
        return self.inserts > 0


def master_pin_poll(plate: PlateState) -> str:
    """Loaded iff the master pin position holds inserts."""
    return "loaded" if plate.master_pin_loaded else "empty"


# -- compliance -------------------------------------------------------------------

@dataclass
class GsrComplianceRule:
    """Default Compliance rule: halve the speed for the next segment when
    the phasic skin-conductance amplitude within 3 s of the last "Robot
    approaching" event exceeds the threshold."""

    threshold: float = 0.15
    reduced_scale: float = 0.5

    def __call__(self, features: dict[str, dict[str, float]]) -> float:
        amplitude = features.get("gsr", {}).get("phasic_max", 0.0)
        return self.reduced_scale if amplitude > self.threshold else 1.0


def compliance_hook(features: dict[str, dict[str, float]],
                    rule: Callable[[dict], float] | None = None) -> float:
    """Evaluate the pluggable compliance rule; result scales the next
    segment's peak speed and must lie in (0, 1]."""
    rule = rule if rule is not None else GsrComplianceRule()
    scale = float(rule(features))
    if not (0.0 < scale <= 1.0):
        raise OrchestratorError(f"compliance scale {scale} outside (0, 1]")
    return scale


# -- human scripts -------------------------------------------------------------------

FAR_POINT = (3.5, 3.5, 0.8)


def far_script() -> list[MotionSegment]:
    return [MotionSegment(0.0, FAR_POINT, FAR_POINT, 0.0)]


def crossing_script(start: float = 6.0, near=(0.45, 0.35, 0.6),
                    away=(2.5, 1.5, 0.8), dwell: float = 2.5,
                    speed: float = 1.0) -> list[MotionSegment]:
    """Walk from a far spot to ``near`` (inside the reduced/stop envelope of
    the arm), hold there, and walk back out."""
    d_in = math.dist(away, near)
    t_arrive = start + d_in / speed
    t_leave = t_arrive + dwell
    return [
        MotionSegment(0.0, away, away, 0.0),
        MotionSegment(start, away, near, speed),
        MotionSegment(t_arrive, near, near, 0.0),
        MotionSegment(t_leave, near, away, speed),
    ]


def resolve_script(cfg: CaseTwoConfig) -> list[MotionSegment]:
    if cfg.script_segments:
        script = list(cfg.script_segments)
    elif cfg.human_script == "far":
        script = far_script()
    elif cfg.human_script == "crossing":
        script = crossing_script()
    else:
        raise OrchestratorError(f"unknown human script {cfg.human_script!r}")
    validate_script(script)
    return script


# -- streaming devices ----------------------------------------------------------------

class _GridDevice:
    """Pushes samples on a fixed k/rate grid as simulated time advances.
    raw timestamps carry the device's declared clock offset."""

    def __init__(self, client: ProducerClient, info: StreamInfo, rate: float,
                 sim_offset: float, values_fn, chunk_min: int = 32):
        self.client = client
        self.stream_id = client.declare_stream(info)
        self.rate = rate
        self.sim_offset = sim_offset
        self.values_fn = values_fn
        self.chunk_min = chunk_min
        self._next_k = 0
        self._buffer: list[Sample] = []
        self.pushed = 0

    def advance(self, now: float) -> None:
        last_k = int(math.floor(now * self.rate + 1e-9))
        if last_k < self._next_k:
            return
        ks = np.arange(self._next_k, last_k + 1)
        ts = ks / self.rate
        values = np.atleast_2d(self.values_fn(ts))
        if values.shape[0] != len(ts):
            values = values.T
        for t, row in zip(ts, values):
            self._buffer.append(Sample(float(t) + self.sim_offset,
                                       tuple(float(v) for v in row)))
        self._next_k = last_k + 1
        if len(self._buffer) >= self.chunk_min:
            self.flush()

    def flush(self) -> None:
        if self._buffer:
            self.client.push_chunk(self.stream_id, self._buffer)
            self.pushed += len(self._buffer)
            self._buffer = []


class RobotSim:
    """Joint-space playback of trapezoidal profiles with a live rate scale
    (the SSM zone gates it in Case Study II)."""

    def __init__(self, model: KinematicModel, q0: Sequence[float]):
        self.model = model
        self.q = np.asarray(q0, dtype=float)
        self.profile: TrajectoryProfile | None = None
        self.tau = 0.0
        self.rate_scale = 1.0
        # interval description of the last step, for grid sampling
        self._step_t0 = 0.0
        self._step_tau0 = 0.0
        self._step_rate = 0.0
        self._step_profile: TrajectoryProfile | None = None

    @property
    def moving(self) -> bool:
        return self.profile is not None

    def start_motion(self, profile: TrajectoryProfile) -> None:
        if self.profile is not None:
            raise OrchestratorError("robot is already executing a motion")
        self.profile = profile
        self.tau = 0.0

    @staticmethod
    def _interp(prof: TrajectoryProfile, tau: float, table: np.ndarray
                ) -> np.ndarray:
        return np.array([np.interp(tau, prof.times, table[:, j])
                         for j in range(table.shape[1])])

    def step(self, now: float, dt: float) -> bool:
        """Advance playback by one control step; returns True when the
        current motion completed within this step."""
        self._step_t0 = now - dt
        self._step_tau0 = self.tau
        self._step_profile = self.profile
        self._step_rate = self.rate_scale if self.profile is not None else 0.0
        if self.profile is None:
            return False
        self.tau += self.rate_scale * dt
        if self.tau >= self.profile.duration - 1e-12:
            self.q = self.profile.positions[-1].copy()
            self.profile = None
            self.tau = 0.0
            return True
        self.q = self._interp(self.profile, self.tau, self.profile.positions)
        return False

    def sample_grid(self, ts: np.ndarray) -> np.ndarray:
        """(q, qdot) rows for grid times inside the last step interval."""
        rows = np.empty((len(ts), 2 * len(self.q)))
        prof = self._step_profile
        for i, t in enumerate(ts):
            if prof is None:
                q, qd = self.q, np.zeros_like(self.q)
            else:
                tau = min(self._step_tau0 + self._step_rate * (t - self._step_t0),
                          prof.duration)
                q = self._interp(prof, tau, prof.positions)
                qd = self._interp(prof, tau, prof.velocities) * self._step_rate
            rows[i, :len(self.q)] = q
            rows[i, len(self.q):] = qd
        return rows


# -- experiment session ------------------------------------------------------------------

@dataclass
class RunResult:
    markers: list[tuple[float, str]]
    duration: float
    segment_speed_limits: list[float]
    max_emitted_speed: float
    poll_log: list[tuple[float, str]] = field(default_factory=list)
    products_placed: int = 0
    zone_change_count: int = 0
    pushed_counts: dict[str, int] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def marker_labels(self) -> list[str]:
        return [label for _, label in self.markers]


class _Session:
    """Shared plumbing: clock, marker session, device bundle."""

    def __init__(self, address: str, experiment: str, cfg, device_names,
                 values_fns, run_meta: dict):
        host, port = parse_address(address)
        self.clock = SimClock()
        self.cfg = cfg
        self.markers: list[tuple[float, str]] = []
        try:
            self.marker_client = ProducerClient(
                host, port, f"{experiment}-orchestrator", sim_offset=0.0,
                run_meta=run_meta)
        except OSError as exc:
            raise OrchestratorError(f"hub unreachable at {address}: {exc}")
        self.clients: list[ProducerClient] = [self.marker_client]
        self.devices: dict[str, _GridDevice] = {}
        for name in device_names:
            client = ProducerClient(host, port, f"{name}-sim",
                                    sim_offset=DEVICE_SIM_OFFSETS[name])
            self.clients.append(client)
            self.devices[name] = _GridDevice(
                client, device_stream_info(name), DEFAULT_RATES.get(name, 50.0),
                DEVICE_SIM_OFFSETS[name], values_fns[name])

    def emit(self, label: str, origin=MarkerOrigin.AUTO) -> None:
        t = self.clock.now()
        self.marker_client.inject_marker(label, origin, raw_t=t)
        self.markers.append((t, label))

    def advance_devices(self) -> None:
        now = self.clock.now()
        for dev in self.devices.values():
            dev.advance(now)

    def finish(self) -> dict[str, int]:
        counts = {}
        for name, dev in self.devices.items():
            dev.flush()
            counts[name] = dev.pushed
        for client in self.clients:
            client.close()
        return counts


ROBOT_LABELS = tuple(f"q{j + 1}" for j in range(6)) + \
    tuple(f"qd{j + 1}" for j in range(6))


def device_stream_info(name: str) -> StreamInfo:
    if name == "gsr":
        return StreamInfo(name="gsr", source_id="gsr-sim",
                          kind=StreamKind.NUMERIC, channel_count=1,
                          nominal_rate_hz=DEFAULT_RATES["gsr"],
                          channel_labels=("conductance",),
                          units=("microsiemens",))
    if name == "ppg":
        return StreamInfo(name="ppg", source_id="ppg-sim",
                          kind=StreamKind.NUMERIC, channel_count=1,
                          nominal_rate_hz=DEFAULT_RATES["ppg"],
                          channel_labels=("pulse",), units=("normalized",))
    if name == "ecg":
        return StreamInfo(name="ecg", source_id="ecg-sim",
                          kind=StreamKind.NUMERIC, channel_count=1,
                          nominal_rate_hz=DEFAULT_RATES["ecg"],
                          channel_labels=("lead1",), units=("millivolts",))
    if name == "mocap":
        return StreamInfo(name="mocap", source_id="mocap-sim",
                          kind=StreamKind.NUMERIC, channel_count=12,
                          nominal_rate_hz=DEFAULT_RATES["mocap"],
                          channel_labels=MOCAP_LABELS, units=("meters",) * 12)
    if name == "robot":
        return StreamInfo(name="robot", source_id="robot-sim",
                          kind=StreamKind.NUMERIC, channel_count=12,
                          nominal_rate_hz=50.0, channel_labels=ROBOT_LABELS,
                          units=("degrees",) * 6 + ("deg_per_s",) * 6)
    raise OrchestratorError(f"unknown device {name!r}")


def _config_hash(cfg) -> str:
    doc = {k: repr(v) for k, v in sorted(vars(cfg).items())} \
        if not hasattr(cfg, "__dataclass_fields__") else \
        {k: repr(getattr(cfg, k)) for k in sorted(cfg.__dataclass_fields__)}
    return hashlib.sha256(json.dumps(doc).encode()).hexdigest()[:16]


def _toward_human(model: KinematicModel, q_from, q_to, human_point) -> bool:
    """A move counts as approaching when its end point is closer to the
    human region than its start point."""
    p_from = forward_kinematics(model, np.radians(q_from))[-1]
    p_to = forward_kinematics(model, np.radians(q_to))[-1]
    h = np.asarray(human_point)
    return np.linalg.norm(p_to - h) < np.linalg.norm(p_from - h)


# -- Case Study I ----------------------------------------------------------------------

def run_case1(cfg: CaseOneConfig, address: str,
              rule: Callable[[dict], float] | None = None,
              model: KinematicModel | None = None) -> RunResult:
    model = model or KinematicModel.from_dict(DEFAULT_ARM)
    if rule is None:
        rule = GsrComplianceRule(threshold=cfg.compliance_threshold)
    stimuli: list[StimulusEvent] = []
    robot = RobotSim(model, CASE1_HOME)

    values = {
        "gsr": lambda ts: gen_gsr(ts, cfg.gsr_tonic, stimuli),
        "ppg": lambda ts: gen_ppg(ts, cfg.heart_rate),
        "ecg": lambda ts: gen_ecg(ts, cfg.heart_rate),
        "robot": lambda ts: robot.sample_grid(ts),
    }
    run_meta = {
        "experiment": "case1", "task": cfg.task_id, "subject": cfg.subject_id,
        "acceleration": cfg.acceleration_mode.value,
        "trajectory": cfg.trajectory_mode.value,
        "seed": cfg.seed, "config_hash": _config_hash(cfg),
        "human_strategy": cfg.human_strategy,
    }
    session = _Session(address, "case1", cfg, ("gsr", "ppg", "ecg", "robot"),
                       values, run_meta)
    clock = session.clock
    plate = PlateState(inserts=0)
    # the human region sits just beyond the plate posture
    plate_xyz = forward_kinematics(model, np.radians(CASE1_PLATE))[-1]
    human_point = tuple(plate_xyz + np.array([0.25, 0.25, 0.0]))

    poll_log: list[tuple[float, str]] = []
    speed_limits: list[float] = []
    max_speed = 0.0
    segment_index = 0
    last_approach_t: float | None = None
    speed_scale = 1.0

    def step():
        clock.advance(cfg.dt)
        done = robot.step(clock.now(), cfg.dt)
        session.advance_devices()
        return done

    def wait(duration: float):
        end = clock.now() + duration
        while clock.now() < end - 1e-9:
            step()

    def run_motion(q_to, mode: TrajectoryMode, seed_k: int):
        nonlocal segment_index, max_speed, speed_scale, last_approach_t
        q_from = tuple(robot.q)
        accel = cfg.acceleration_mode
        plan = plan_trajectory(q_from, tuple(q_to), CASE1_PLANES, mode,
                               rng_seed=cfg.seed * 1000 + seed_k,
                               v_max=DEFAULT_V_MAX * speed_scale,
                               accel_mode=accel)
        if _toward_human(model, q_from, q_to, human_point):
            session.emit("Robot approaching")
            last_approach_t = clock.now()
            stimuli.append(StimulusEvent(at=clock.now(),
                                         magnitude=cfg.gsr_coupling))
        profile = execute_profile(plan, cfg.dt)
        speed_limits.append(plan.v_max)
        max_speed = max(max_speed, float(np.abs(profile.velocities).max()))
        robot.start_motion(profile)
        while robot.moving:
            step()
        segment_index += 1
        # Compliance is consulted between segments only
        speed_scale = compliance_hook(gsr_features(), rule)

    def gsr_features() -> dict[str, dict[str, float]]:
        if last_approach_t is None:
            return {}
        lo = last_approach_t
        hi = min(clock.now(), last_approach_t + 3.0)
        rate = DEFAULT_RATES["gsr"]
        ks = np.arange(math.ceil(lo * rate), math.floor(hi * rate) + 1)
        if len(ks) == 0:
            return {"gsr": {"phasic_max": 0.0}}
        vals = gen_gsr(ks / rate, cfg.gsr_tonic, stimuli)
        return {"gsr": {"phasic_max": float(np.max(vals) - cfg.gsr_tonic)}}

    try:
        session.emit("Experiment start")
        session.emit(f"Task {cfg.task_id} init")

        # polling phase: check the master pin every poll_period seconds
        next_poll = 0.0
        loaded = False
        while not loaded:
            if clock.now() + 1e-9 >= next_poll:
                if clock.now() >= cfg.load_latency:
                    plate.inserts = cfg.insert_count
                outcome = master_pin_poll(plate)
                poll_log.append((clock.now(), outcome))
                if outcome == "loaded":
                    session.emit("Pick up successful")
                    loaded = True
                else:
                    session.emit("Pick up failed")
                next_poll += cfg.poll_period
            if not loaded:
                step()

        session.emit(f"Task {cfg.task_id} start")
        for insert in range(cfg.insert_count):
            run_motion(CASE1_PLATE, cfg.trajectory_mode, seed_k=2 * insert)
            wait(cfg.pick_dwell)
            plate.inserts -= 1
            run_motion(CASE1_CONTAINER, cfg.trajectory_mode,
                       seed_k=2 * insert + 1)
            wait(cfg.place_dwell)
        session.emit(f"Task {cfg.task_id} end")

        run_motion(CASE1_HOME, TrajectoryMode.FIXED, seed_k=10_000)
        session.emit("Experiment end")
        duration = clock.now()
    finally:
        counts = session.finish()

    return RunResult(markers=session.markers, duration=duration,
                     segment_speed_limits=speed_limits,
                     max_emitted_speed=max_speed, poll_log=poll_log,
                     pushed_counts=counts, meta=run_meta)


# -- Case Study II ---------------------------------------------------------------------

def run_case2(cfg: CaseTwoConfig, address: str,
              model: KinematicModel | None = None) -> RunResult:
    model = model or KinematicModel.from_dict(DEFAULT_ARM)
    script = resolve_script(cfg)
    robot = RobotSim(model, CASE2_PICK)
    base_deg = math.degrees(cfg.base_rotation)
    place_cfg = (CASE2_PICK[0] + base_deg,) + CASE2_PICK[1:]

    values = {
        "gsr": lambda ts: gen_gsr(ts, cfg.gsr_tonic, []),
        "ppg": lambda ts: gen_ppg(ts, cfg.heart_rate),
        "ecg": lambda ts: gen_ecg(ts, cfg.heart_rate),
        "mocap": lambda ts: np.array([mocap_values(float(t), script)
                                      for t in ts]),
        "robot": lambda ts: robot.sample_grid(ts),
    }
    run_meta = {
        "experiment": "case2", "subject": cfg.subject_id,
        "products": cfg.product_count, "human_script": cfg.human_script,
        "seed": cfg.seed, "config_hash": _config_hash(cfg),
    }
    session = _Session(address, "case2",
                       cfg, ("gsr", "ppg", "ecg", "mocap", "robot"),
                       values, run_meta)
    clock = session.clock

    zone = Zone.NORMAL
    zone_changes = 0
    prev_sep: SeparationState | None = None
    max_speed = 0.0
    speed_limits: list[float] = []
    products = 0

    def separation() -> SeparationState:
        segs = robot_segments(model, np.radians(robot.q))
        humans = [np.asarray(p) for p in
                  _human_points_at(clock.now(), script)]
        return min_distance(segs, humans,
                            inflation_radius=model.inflation_radius)

    def step():
        nonlocal zone, zone_changes, prev_sep, max_speed
        clock.advance(cfg.dt)
        robot.step(clock.now(), cfg.dt)
        session.advance_devices()
        sep = separation()
        if prev_sep is not None:
            speed = (prev_sep.min_distance - sep.min_distance) / cfg.dt
            sep = with_speed(sep, speed)
        new_zone, markers = ssm_step(zone, sep, cfg.ssm)
        if new_zone is not zone:
            zone_changes += 1
            for label in markers:
                session.emit(label)
        zone = new_zone
        robot.rate_scale = {Zone.NORMAL: 1.0, Zone.REDUCED: cfg.reduced_scale,
                            Zone.STOP: 0.0}[zone]
        prev_sep = sep
        if clock.now() > cfg.max_sim_time:
            raise OrchestratorError("case 2 scenario exceeded max_sim_time")

    def run_motion(q_to):
        nonlocal max_speed
        plan = TrajectoryPlan(waypoints=(tuple(robot.q), tuple(q_to)),
                              v_max=cfg.v_max, a_max=cfg.a_max)
        profile = execute_profile(plan, cfg.dt)
        speed_limits.append(plan.v_max)
        robot.start_motion(profile)
        while robot.moving:
            step()
        max_speed = max(max_speed, float(np.abs(profile.velocities).max()))

    def wait(duration: float):
        end = clock.now() + duration
        while clock.now() < end - 1e-9:
            step()

    try:
        session.emit("Experiment start")
        prev_sep = separation()
        for _ in range(cfg.product_count):
            wait(cfg.pick_dwell)            # grip the product
            run_motion(place_cfg)           # transfer: base sweeps by pi
            wait(cfg.place_dwell)           # release into the box
            products += 1
            run_motion(CASE2_PICK)          # swing back for the next one
        session.emit("Experiment end")
        duration = clock.now()
    finally:
        counts = session.finish()

    return RunResult(markers=session.markers, duration=duration,
                     segment_speed_limits=speed_limits,
                     max_emitted_speed=max_speed, products_placed=products,
                     zone_change_count=zone_changes, pushed_counts=counts,
                     meta=run_meta)


def _human_points_at(t: float, script) -> list[tuple[float, float, float]]:
    return list(gen_mocap(t, script).values())
