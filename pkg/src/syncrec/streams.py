"""Core stream vocabulary: declarations, samples, markers, and the marker catalog."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum


class StreamKind(Enum):
    NUMERIC = "numeric"
    MARKER = "marker"


class MarkerOrigin(Enum):
    AUTO = 0
    INVESTIGATOR = 1
    SUBJECT = 2


@dataclass(frozen=True)
class StreamInfo:
    """Declaration of one time series pushed by a producer.

    ``nominal_rate_hz`` of 0 means irregular sampling (all marker streams
    are irregular by definition).
    """

    name: str
    source_id: str
    kind: StreamKind = StreamKind.NUMERIC
    channel_count: int = 1
    nominal_rate_hz: float = 0.0
    channel_labels: tuple[str, ...] = ()
    units: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.channel_labels:
            object.__setattr__(
                self, "channel_labels",
                tuple(f"ch{i + 1}" for i in range(self.channel_count)),
            )
        else:
            object.__setattr__(self, "channel_labels", tuple(self.channel_labels))
        if not self.units:
            object.__setattr__(self, "units", ("",) * self.channel_count)
        else:
            object.__setattr__(self, "units", tuple(self.units))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "source_id": self.source_id,
            "kind": self.kind.value,
            "channel_count": self.channel_count,
            "nominal_rate_hz": self.nominal_rate_hz,
            "channel_labels": list(self.channel_labels),
            "units": list(self.units),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StreamInfo":
        return cls(
            name=d["name"],
            source_id=d["source_id"],
            kind=StreamKind(d["kind"]),
            channel_count=int(d["channel_count"]),
            nominal_rate_hz=float(d["nominal_rate_hz"]),
            channel_labels=tuple(d.get("channel_labels") or ()),
            units=tuple(d.get("units") or ()),
        )


@dataclass(frozen=True)
class Sample:
    """One numeric sample on the producer's local clock."""

    raw_timestamp: float
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))


@dataclass(frozen=True)
class MarkerSample:
    """A timestamped text label; raw_timestamp is on the injecting source's clock."""

    raw_timestamp: float
    label: str
    origin: MarkerOrigin = MarkerOrigin.AUTO
    source_ref: int = 0


def validate_stream_info(info: StreamInfo) -> list[str]:
    """Check a declaration against all structural rules.

    Returns the list of violations; an empty list means the declaration
    is valid. Never raises: violations are values.
    """
    errors = []
    if not info.name:
        errors.append("stream name must be non-empty")
    if not isinstance(info.channel_count, int) or info.channel_count < 1:
        errors.append("channel count must be a positive integer")
    if len(info.channel_labels) != info.channel_count:
        errors.append("label count mismatch")
    if len(info.units) != info.channel_count:
        errors.append("unit count mismatch")
    if info.kind is StreamKind.MARKER:
        if info.channel_count != 1:
            errors.append("marker streams have one channel")
        if info.nominal_rate_hz != 0:
            errors.append("marker streams are irregular (rate 0)")
    if not (info.nominal_rate_hz >= 0) or not math.isfinite(info.nominal_rate_hz):
        errors.append("nominal rate must be finite and >= 0")
    return errors


def validate_sample(info: StreamInfo, sample: Sample) -> list[str]:
    """Check a sample payload against its declaring stream."""
    errors = []
    if len(sample.values) != info.channel_count:
        errors.append(
            f"sample has {len(sample.values)} values, stream declares "
            f"{info.channel_count} channels"
        )
    if not math.isfinite(sample.raw_timestamp):
        errors.append("timestamp must be finite")
    return errors


def _task_markers(n: int) -> list[tuple[str, str]]:
    return [
        (f"Task {n} init",
         f"Task {n} initialized but subject has not completed loading yet"),
        (f"Task {n} start",
         f"Task {n} started: robot unloading all the parts"),
        (f"Task {n} end",
         f"Task {n} unloading is done"),
    ]


_CASE1_MARKERS: list[tuple[str, str]] = [
    ("Experiment start", "Experiment started"),
    *[m for n in (1, 2, 3, 4) for m in _task_markers(n)],
    ("Robot approaching", "Each time robot comes toward human will generate a event"),
    ("Pick up successful", "Master pin is loaded"),
    ("Pick up failed", "Master pin is not loaded"),
    ("Experiment end", "Experiment is complete"),
]

_CASE2_MARKERS: list[tuple[str, str]] = [
    ("Experiment start", "Experiment started"),
    ("Robot state change", "When robot change state between Normal, Reduced, and Stop"),
    ("Robot is stopping", "When robot going to complete stop"),
    ("Robot is speeding up", "When robot is going to normal speed"),
    ("Robot is slowing down", "When robot is slowing down"),
    ("Experiment end", "Experiment is complete"),
]


def marker_catalog() -> list[tuple[str, str]]:
    """Full catalog of auto-generated event markers, both case studies.

    "Task [n]" entries are instantiated for tasks 1..4. "Experiment
    start"/"Experiment end" are shared between the two case studies and
    appear once.
    """
    seen = set()
    catalog = []
    for label, definition in _CASE1_MARKERS + _CASE2_MARKERS:
        if label not in seen:
            seen.add(label)
            catalog.append((label, definition))
    return catalog


_CATALOG_LABELS = frozenset(label for label, _ in marker_catalog())

# Markers the hub itself may emit for stream diagnostics. These are label
# prefixes: SOURCE-LOST carries the lost source id after the colon.
DIAGNOSTIC_PREFIXES = ("RECORDER-OVERFLOW", "SOURCE-LOST:")


def is_catalog_label(label: str) -> bool:
    return label in _CATALOG_LABELS


def is_diagnostic_label(label: str) -> bool:
    return any(
        label == p or (p.endswith(":") and label.startswith(p))
        for p in DIAGNOSTIC_PREFIXES
    )


def validate_marker(marker: MarkerSample) -> list[str]:
    """Auto markers must come from the catalog (or be hub diagnostics);
    manual markers may be free text."""
    errors = []
    if not marker.label:
        errors.append("marker label must be non-empty")
    elif marker.origin is MarkerOrigin.AUTO:
        if not (is_catalog_label(marker.label) or is_diagnostic_label(marker.label)):
            errors.append(f"auto marker {marker.label!r} is not in the catalog")
    if not math.isfinite(marker.raw_timestamp):
        errors.append("timestamp must be finite")
    return errors
