"""Seeded stand-ins for the physical sensors and the robot arm.

All generators are pure functions of (time, parameters, seed), so repeated
runs are bitwise identical. Joint-space quantities are in degrees and
deg/s, matching how the experiment tasks are parameterized; the digital
twin converts to radians at its boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from random import Random
from typing import Sequence

import numpy as np

DEFAULT_V_MAX = 100.0      # deg/s, hard experiment speed cap
ACCEL_NORMAL = 150.0       # deg/s^2
ACCEL_HIGH = 600.0         # deg/s^2

DEFAULT_RATES = {"gsr": 32.0, "ppg": 64.0, "ecg": 256.0, "mocap": 100.0}


class TrajectoryMode(Enum):
    FIXED = "fixed"
    RANDOM = "random"


class AccelerationMode(Enum):
    NORMAL = "normal"
    HIGH = "high"
    RANDOM = "random"

    def a_max(self, rng: Random | None = None) -> float:
        if self is AccelerationMode.NORMAL:
            return ACCEL_NORMAL
        if self is AccelerationMode.HIGH:
            return ACCEL_HIGH
        if rng is None:
            raise ValueError("random acceleration needs a seeded rng")
        return rng.uniform(ACCEL_NORMAL, ACCEL_HIGH)


@dataclass(frozen=True)
class TrajectoryPlan:
    """Ordered joint-space waypoints plus motion limits (degrees)."""

    waypoints: tuple[tuple[float, ...], ...]
    v_max: float = DEFAULT_V_MAX
    a_max: float = ACCEL_NORMAL
    mode: TrajectoryMode = TrajectoryMode.FIXED
    segment_accels: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "waypoints",
                           tuple(tuple(float(v) for v in w) for w in self.waypoints))
        if self.v_max <= 0 or self.v_max > DEFAULT_V_MAX:
            raise ValueError(f"v_max must be in (0, {DEFAULT_V_MAX}] deg/s")
        if self.a_max <= 0:
            raise ValueError("a_max must be positive")
        if self.mode is TrajectoryMode.FIXED and len(self.waypoints) != 2:
            raise ValueError("fixed mode is exactly pick -> place")
        if self.mode is TrajectoryMode.RANDOM and len(self.waypoints) < 3:
            raise ValueError("random mode needs intermediate waypoints")
        if (self.segment_accels is not None
                and len(self.segment_accels) != len(self.waypoints) - 1):
            raise ValueError("need one acceleration per segment")

    def accel_for_segment(self, i: int) -> float:
        if self.segment_accels is not None:
            return self.segment_accels[i]
        return self.a_max


def plan_trajectory(pick: Sequence[float], place: Sequence[float],
                    planes: Sequence[Sequence[Sequence[float]]],
                    mode: TrajectoryMode, rng_seed: int = 0, *,
                    v_max: float = DEFAULT_V_MAX,
                    a_max: float = ACCEL_NORMAL,
                    accel_mode: AccelerationMode | None = None
                    ) -> TrajectoryPlan:
    """Build the pick-to-place waypoint list.

    Fixed mode goes straight pick -> place. Random mode inserts one
    waypoint drawn uniformly (seeded) from the candidate set of each
    intermediate plane, in plane order. The same seed always yields the
    same plan.
    """
    rng = Random(rng_seed)
    if mode is TrajectoryMode.FIXED:
        waypoints = [tuple(pick), tuple(place)]
    else:
        waypoints = [tuple(pick)]
        for i, plane in enumerate(planes):
            if not plane:
                raise ValueError(f"plane {i} has no candidate waypoints")
            waypoints.append(tuple(plane[rng.randrange(len(plane))]))
        waypoints.append(tuple(place))

    segment_accels = None
    if accel_mode is not None:
        if accel_mode is AccelerationMode.RANDOM:
            segment_accels = tuple(
                accel_mode.a_max(rng) for _ in range(len(waypoints) - 1))
        else:
            a_max = accel_mode.a_max()
    return TrajectoryPlan(waypoints=tuple(waypoints), v_max=v_max, a_max=a_max,
                          mode=mode, segment_accels=segment_accels)


@dataclass
class TrajectoryProfile:
    """Sampled joint trajectory: times (s), positions/velocities per joint."""

    times: np.ndarray
    positions: np.ndarray   # shape (n, joints)
    velocities: np.ndarray  # shape (n, joints)
    duration: float
    segment_spans: list[tuple[float, float]] = field(default_factory=list)


def _segment_timing(h: float, v_max: float, a_max: float
                    ) -> tuple[float, float, float]:
    """Trapezoidal (or triangular) timing for a move of magnitude h:
    returns (accel time, cruise time, peak speed)."""
    if h <= 0:
        return 0.0, 0.0, 0.0
    v_peak = min(v_max, math.sqrt(h * a_max))
    ta = v_peak / a_max
    tc = max(0.0, (h - v_peak * v_peak / a_max) / v_peak) if v_peak > 0 else 0.0
    return ta, tc, v_peak


def _segment_state(tau: float, h: float, ta: float, tc: float, v_peak: float,
                   a_max: float) -> tuple[float, float]:
    """Scalar position along the move (0..h) and speed at local time tau."""
    total = 2 * ta + tc
    if tau <= 0:
        return 0.0, 0.0
    if tau >= total:
        return h, 0.0
    if tau < ta:
        return 0.5 * a_max * tau * tau, a_max * tau
    if tau < ta + tc:
        return 0.5 * a_max * ta * ta + v_peak * (tau - ta), v_peak
    rem = total - tau
    return h - 0.5 * a_max * rem * rem, a_max * rem


def execute_profile(plan: TrajectoryPlan, dt: float) -> TrajectoryProfile:
    """Sample the plan on a dt grid, one synchronized trapezoid per segment.

    The slowest joint of each segment sets the timing; the others follow
    scaled copies, so every joint respects v_max and its segment's a_max.
    The exact segment endpoint is always emitted, and the initial state is
    emitted at t=0.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    joints = len(plan.waypoints[0])
    times = [0.0]
    positions = [np.asarray(plan.waypoints[0], dtype=float)]
    velocities = [np.zeros(joints)]
    spans = []
    t_base = 0.0

    for i in range(len(plan.waypoints) - 1):
        q_a = np.asarray(plan.waypoints[i], dtype=float)
        q_b = np.asarray(plan.waypoints[i + 1], dtype=float)
        delta = q_b - q_a
        h = float(np.max(np.abs(delta)))
        a_max = plan.accel_for_segment(i)
        ta, tc, v_peak = _segment_timing(h, plan.v_max, a_max)
        total = 2 * ta + tc
        spans.append((t_base, t_base + total))
        if h == 0.0 or total == 0.0:
            continue
        scale = delta / h

        # dt grid plus the exact phase corners, so velocity is exactly
        # piecewise-linear between consecutive emitted samples
        grid = [k * dt for k in range(1, math.ceil(total / dt))]
        taus = sorted(set(grid) | {ta, ta + tc, total}
                      - {x for x in (ta, ta + tc) if x <= 0 or x >= total})
        for tau in taus:
            s, v = _segment_state(tau, h, ta, tc, v_peak, a_max)
            times.append(t_base + tau)
            positions.append(q_a + scale * s if tau < total else q_b.copy())
            velocities.append(scale * v)
        t_base += total

    return TrajectoryProfile(
        times=np.array(times),
        positions=np.vstack(positions),
        velocities=np.vstack(velocities),
        duration=t_base,
        segment_spans=spans,
    )


# --- physiological waveforms ------------------------------------------------

@dataclass(frozen=True)
class StimulusEvent:
    at: float
    magnitude: float

    def __post_init__(self):
        if not math.isfinite(self.at):
            raise ValueError("stimulus time must be finite")
        if self.magnitude < 0:
            raise ValueError("stimulus magnitude must be >= 0")


SCR_TAU_SLOW = 10.0  # s, recovery
SCR_TAU_FAST = 1.0   # s, rise

# Time from stimulus onset to the peak of one skin-conductance response:
# argmax of exp(-t/tau1) - exp(-t/tau2).
SCR_PEAK_DELAY = (SCR_TAU_SLOW * SCR_TAU_FAST / (SCR_TAU_SLOW - SCR_TAU_FAST)
                  * math.log(SCR_TAU_SLOW / SCR_TAU_FAST))


def gen_gsr(t, tonic: float, events: Sequence[StimulusEvent] = ()):
    """Skin conductance (microsiemens): tonic level plus one bi-exponential
    phasic response per past stimulus, clamped at zero."""
    if tonic < 0:
        raise ValueError("tonic level must be >= 0")
    t = np.asarray(t, dtype=float)
    out = np.full(t.shape, float(tonic))
    for ev in events:
        dt = t - ev.at
        active = dt >= 0
        out = out + np.where(
            active,
            ev.magnitude * (np.exp(-np.clip(dt, 0, None) / SCR_TAU_SLOW)
                            - np.exp(-np.clip(dt, 0, None) / SCR_TAU_FAST)),
            0.0,
        )
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


PPG_PULSE_WIDTH = 0.3  # fraction of the beat period


def gen_ppg(t, hr: float):
    """Normalized optical pulse: a raised-cosine systolic peak centered on
    each beat, period 60/hr seconds."""
    if hr <= 0:
        raise ValueError("heart rate must be positive")
    t = np.asarray(t, dtype=float)
    period = 60.0 / hr
    phase = np.mod(t + period / 2, period) - period / 2
    half_width = PPG_PULSE_WIDTH * period / 2
    pulse = 0.5 * (1.0 + np.cos(np.pi * phase / half_width))
    out = np.where(np.abs(phase) <= half_width, pulse, 0.0)
    return float(out) if out.ndim == 0 else out


# (phase fraction of beat, amplitude mV, width fraction) for P,Q,R,S,T
ECG_WAVES = (
    (-0.20, 0.12, 0.030),
    (-0.04, -0.16, 0.012),
    (0.00, 1.20, 0.018),
    (0.04, -0.25, 0.014),
    (0.28, 0.30, 0.060),
)


def gen_ecg(t, hr: float):
    """Synthetic single-lead ECG (mV): five Gaussians per beat at fixed
    phase offsets, R peaks spaced exactly 60/hr seconds."""
    if hr <= 0:
        raise ValueError("heart rate must be positive")
    t = np.asarray(t, dtype=float)
    period = 60.0 / hr
    frac = np.mod(t + period / 2, period) / period - 0.5  # in [-0.5, 0.5)
    out = np.zeros(t.shape)
    for mu, amp, sigma in ECG_WAVES:
        for wrap in (-1.0, 0.0, 1.0):  # neighboring beats bleed across edges
            out = out + amp * np.exp(-((frac + wrap - mu) ** 2) / (2 * sigma ** 2))
    return float(out) if out.ndim == 0 else out


# --- human motion -----------------------------------------------------------

@dataclass(frozen=True)
class MotionSegment:
    """Straight-line move of the body reference point starting at ``start``.
    ``speed`` 0 holds position until the next segment begins."""

    start: float
    from_point: tuple[float, float, float]
    to_point: tuple[float, float, float]
    speed: float

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("speed must be >= 0")


HUMAN_POINT_OFFSETS = {
    "torso": (0.0, 0.0, 0.0),
    "head": (0.0, 0.0, 0.55),
    "hand_left": (0.22, 0.0, 0.15),
    "hand_right": (-0.22, 0.0, 0.15),
}

MOCAP_LABELS = tuple(
    f"{name}_{axis}" for name in HUMAN_POINT_OFFSETS for axis in "xyz")


def _segment_ends(script: Sequence[MotionSegment]) -> list[float]:
    ends = []
    for i, seg in enumerate(script):
        dist = math.dist(seg.from_point, seg.to_point)
        if seg.speed > 0:
            ends.append(seg.start + dist / seg.speed)
        elif dist > 0:
            raise ValueError("zero-speed segment cannot move")
        elif i + 1 < len(script):
            ends.append(script[i + 1].start)
        else:
            ends.append(seg.start)
    return ends


def validate_script(script: Sequence[MotionSegment]) -> None:
    if not script:
        raise ValueError("script must have at least one segment")
    ends = _segment_ends(script)
    for i in range(len(script) - 1):
        if script[i + 1].start > ends[i] + 1e-9:
            raise ValueError(
                f"gap in script between segment {i} (ends {ends[i]:.6f}) "
                f"and segment {i + 1} (starts {script[i + 1].start:.6f})")
        if script[i + 1].start < ends[i] - 1e-9:
            raise ValueError(f"segments {i} and {i + 1} overlap")


def gen_mocap(t: float, script: Sequence[MotionSegment]
              ) -> dict[str, tuple[float, float, float]]:
    """Labeled body points at time t: piecewise-linear torso motion with
    head and hands at fixed offsets."""
    validate_script(script)
    ends = _segment_ends(script)
    if t <= script[0].start:
        ref = np.asarray(script[0].from_point, dtype=float)
    elif t >= ends[-1]:
        ref = np.asarray(script[-1].to_point, dtype=float)
    else:
        ref = None
        for seg, end in zip(script, ends):
            if seg.start <= t <= end:
                a = np.asarray(seg.from_point, dtype=float)
                b = np.asarray(seg.to_point, dtype=float)
                span = end - seg.start
                frac = 0.0 if span == 0 else (t - seg.start) / span
                ref = a + frac * (b - a)
                break
        if ref is None:  # between segments only on float-edge cases
            ref = np.asarray(script[-1].to_point, dtype=float)
    return {
        name: tuple(ref + np.asarray(off))
        for name, off in HUMAN_POINT_OFFSETS.items()
    }


def mocap_values(t: float, script: Sequence[MotionSegment]) -> tuple[float, ...]:
    """The mocap stream payload: xyz of every labeled point, MOCAP_LABELS order."""
    points = gen_mocap(t, script)
    return tuple(v for name in HUMAN_POINT_OFFSETS for v in points[name])


class IndexedNoise:
    """Seeded Gaussian noise addressable by sample index, so values do not
    depend on how a stream happens to be chunked."""

    BLOCK = 1024

    def __init__(self, seed: int, std: float):
        self.seed = seed
        self.std = std

    def block(self, b: int) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence(
            entropy=self.seed, spawn_key=(b,)))
        return rng.normal(0.0, self.std, self.BLOCK)

    def slice(self, start: int, count: int) -> np.ndarray:
        if self.std == 0:
            return np.zeros(count)
        out = np.empty(count)
        filled = 0
        while filled < count:
            idx = start + filled
            b, off = divmod(idx, self.BLOCK)
            take = min(self.BLOCK - off, count - filled)
            out[filled:filled + take] = self.block(b)[off:off + take]
            filled += take
        return out
