"""Virtual workspace: robot geometry, human-robot separation, and the
speed-and-separation-monitoring (SSM) state machine.

The robot is modeled as the polyline of its joint frame origins (plus an
optional tool point); the human as a set of labeled points from motion
capture. Separation is the exact minimum over all point-to-segment
distances, optionally reduced by an inflation radius standing in for link
thickness.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class JointDescriptor:
    """One Denavit-Hartenberg row: a (m), alpha (rad), d (m), theta_offset (rad)."""

    a: float
    alpha: float
    d: float
    theta_offset: float = 0.0


@dataclass(frozen=True)
class KinematicModel:
    joints: tuple[JointDescriptor, ...]
    base_pose: tuple[tuple[float, ...], ...] | None = None  # 4x4 row-major
    tool_offset: tuple[float, float, float] | None = None
    inflation_radius: float = 0.0

    def __post_init__(self):
        if len(self.joints) < 1:
            raise ValueError("kinematic model needs at least one joint")
        for j in self.joints:
            for v in (j.a, j.alpha, j.d, j.theta_offset):
                if not math.isfinite(v):
                    raise ValueError("joint parameters must be finite")

    @property
    def joint_count(self) -> int:
        return len(self.joints)

    def base_matrix(self) -> np.ndarray:
        if self.base_pose is None:
            return np.eye(4)
        m = np.asarray(self.base_pose, dtype=float)
        if m.shape != (4, 4):
            raise ValueError("base pose must be a 4x4 transform")
        return m

    @classmethod
    def from_dict(cls, doc: dict) -> "KinematicModel":
        joints = tuple(
            JointDescriptor(
                a=float(j["a"]), alpha=float(j["alpha"]), d=float(j["d"]),
                theta_offset=float(j.get("theta_offset", 0.0)),
            )
            for j in doc["joints"]
        )
        base = doc.get("base_pose")
        tool = doc.get("tool_offset")
        return cls(
            joints=joints,
            base_pose=tuple(tuple(row) for row in base) if base else None,
            tool_offset=tuple(tool) if tool else None,
            inflation_radius=float(doc.get("inflation_radius", 0.0)),
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "KinematicModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def dh_transform(a: float, alpha: float, d: float, theta: float) -> np.ndarray:
    """Homogeneous transform of one DH link (rotation theta about z, offset
    d along z, length a along x, twist alpha about x)."""
    ct, st = math.cos(theta), math.sin(theta)
    ca, sa = math.cos(alpha), math.sin(alpha)
    return np.array([
        [ct, -st * ca, st * sa, a * ct],
        [st, ct * ca, -ct * sa, a * st],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ])


def forward_kinematics(model: KinematicModel, q) -> list[np.ndarray]:
    """Positions of each joint frame origin (plus the tool point when the
    model defines one), chained from the base pose."""
    q = np.asarray(q, dtype=float)
    if q.shape != (model.joint_count,):
        raise ValueError(
            f"expected {model.joint_count} joint angles, got {q.shape}")
    T = model.base_matrix()
    points = []
    for joint, theta in zip(model.joints, q):
        T = T @ dh_transform(joint.a, joint.alpha, joint.d,
                             theta + joint.theta_offset)
        points.append(T[:3, 3].copy())
    if model.tool_offset is not None:
        tool = T @ np.array([*model.tool_offset, 1.0])
        points.append(tool[:3])
    return points


def frame_rotations(model: KinematicModel, q) -> list[np.ndarray]:
    """Rotation part of every intermediate frame (for orthonormality checks)."""
    q = np.asarray(q, dtype=float)
    T = model.base_matrix()
    rotations = []
    for joint, theta in zip(model.joints, q):
        T = T @ dh_transform(joint.a, joint.alpha, joint.d,
                             theta + joint.theta_offset)
        rotations.append(T[:3, :3].copy())
    return rotations


def robot_segments(model: KinematicModel, q) -> list[tuple[np.ndarray, np.ndarray]]:
    """Polyline of the arm: base origin through each joint origin to the
    tool point, as a list of 3D segments."""
    base = model.base_matrix()[:3, 3]
    points = [base] + forward_kinematics(model, q)
    return [(points[i], points[i + 1]) for i in range(len(points) - 1)]


# --- separation -----------------------------------------------------------

class Zone(Enum):
    NORMAL = "Normal"
    REDUCED = "Reduced"
    STOP = "Stop"


@dataclass(frozen=True)
class SeparationState:
    min_distance: float
    closest_robot_point: tuple[float, float, float]
    closest_human_point: tuple[float, float, float]
    directed_speed: float = 0.0
    zone: Zone = Zone.NORMAL


def point_segment_closest(p: np.ndarray, a: np.ndarray, b: np.ndarray
                          ) -> tuple[float, np.ndarray]:
    """Distance from point p to segment ab and the closest point on ab."""
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return float(np.linalg.norm(p - a)), a
    t = float((p - a) @ ab) / denom
    t = min(1.0, max(0.0, t))
    closest = a + t * ab
    return float(np.linalg.norm(p - closest)), closest


def min_distance(robot_segments, human_points, inflation_radius: float = 0.0
                 ) -> SeparationState:
    """Exact minimum distance between the robot polyline and the human
    point set; ties broken by first (human, segment) index pair."""
    if not robot_segments or len(human_points) == 0:
        raise ValueError("need at least one robot segment and one human point")
    best_d = math.inf
    best_pair = None
    for hp in human_points:
        hp = np.asarray(hp, dtype=float)
        for a, b in robot_segments:
            d, closest = point_segment_closest(hp, np.asarray(a, dtype=float),
                                               np.asarray(b, dtype=float))
            if d < best_d:
                best_d = d
                best_pair = (closest, hp)
    robot_pt, human_pt = best_pair
    return SeparationState(
        min_distance=max(0.0, best_d - inflation_radius),
        closest_robot_point=tuple(float(x) for x in robot_pt),
        closest_human_point=tuple(float(x) for x in human_pt),
    )


def directed_speed(prev: SeparationState, curr: SeparationState, dt: float) -> float:
    """Rate of decrease of the separation distance; positive = approaching."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return (prev.min_distance - curr.min_distance) / dt


# --- SSM state machine -----------------------------------------------------

@dataclass(frozen=True)
class SSMConfig:
    """Separation thresholds. The dynamic term adds v_h_gain * approach
    speed + c_margin to both thresholds, a simplified speed-dependent
    protective distance."""

    d_stop: float = 0.5
    d_reduced: float = 1.0
    hysteresis: float = 0.05
    use_dynamic: bool = False
    v_h_gain: float = 0.0
    c_margin: float = 0.0

    def __post_init__(self):
        if not (0 < self.d_stop < self.d_reduced):
            raise ValueError("thresholds must satisfy 0 < d_stop < d_reduced")
        if self.hysteresis < 0:
            raise ValueError("hysteresis must be >= 0")

    def effective_thresholds(self, approach_speed: float) -> tuple[float, float]:
        extra = 0.0
        if self.use_dynamic:
            extra = self.v_h_gain * max(approach_speed, 0.0) + self.c_margin
        return self.d_stop + extra, self.d_reduced + extra

    @classmethod
    def from_dict(cls, doc: dict) -> "SSMConfig":
        return cls(**{k: doc[k] for k in (
            "d_stop", "d_reduced", "hysteresis", "use_dynamic",
            "v_h_gain", "c_margin") if k in doc})


MARKER_STATE_CHANGE = "Robot state change"
MARKER_STOPPING = "Robot is stopping"
MARKER_SLOWING = "Robot is slowing down"
MARKER_SPEEDING = "Robot is speeding up"

_STRICTNESS = {Zone.STOP: 0, Zone.REDUCED: 1, Zone.NORMAL: 2}


def ssm_step(zone: Zone, sep: SeparationState, cfg: SSMConfig
             ) -> tuple[Zone, list[str]]:
    """Advance the Normal/Reduced/Stop machine one step.

    Entering a stricter zone is immediate; leaving one requires clearing
    the crossed threshold by the hysteresis margin. Every transition emits
    "Robot state change" plus the matching direction marker.
    """
    d_stop, d_reduced = cfg.effective_thresholds(sep.directed_speed)
    d = sep.min_distance

    if d < d_stop:
        target = Zone.STOP
    elif d < d_reduced:
        target = Zone.REDUCED
    else:
        target = Zone.NORMAL

    new_zone = zone
    if _STRICTNESS[target] < _STRICTNESS[zone]:
        new_zone = target
    elif _STRICTNESS[target] > _STRICTNESS[zone]:
        # relax one threshold at a time, each cleared by the hysteresis band
        if zone is Zone.STOP and d > d_stop + cfg.hysteresis:
            new_zone = Zone.NORMAL if d > d_reduced + cfg.hysteresis else Zone.REDUCED
        elif zone is Zone.REDUCED and d > d_reduced + cfg.hysteresis:
            new_zone = Zone.NORMAL

    if new_zone is zone:
        return zone, []

    markers = [MARKER_STATE_CHANGE]
    if new_zone is Zone.STOP:
        markers.append(MARKER_STOPPING)
    elif new_zone is Zone.NORMAL:
        markers.append(MARKER_SPEEDING)
    elif zone is Zone.STOP:
        # resuming from a full stop into the reduced band
        markers.append(MARKER_SPEEDING)
    else:
        markers.append(MARKER_SLOWING)
    return new_zone, markers


def with_speed(sep: SeparationState, speed: float) -> SeparationState:
    return replace(sep, directed_speed=speed)
