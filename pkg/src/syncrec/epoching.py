"""Offline post-processing: timestamp correction, marker-aligned epoching,
and JSON-lines export.

Epoch windows are closed on both ends, so a sample landing exactly on a
boundary belongs to the epoch (and to an adjacent epoch sharing that
boundary). No resampling or padding happens here; downstream analysis
decides alignment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clocksync import OffsetTable
from .recorder import MARKER_STREAM_ID, Recording
from .streams import MarkerSample


class EpochingError(Exception):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code


@dataclass
class CorrectedStream:
    stream_id: int
    name: str
    channel_count: int
    times: np.ndarray      # hub timeline, seconds
    values: np.ndarray     # shape (n, channel_count)


@dataclass
class CorrectedRecording:
    streams: dict[int, CorrectedStream]
    markers: list[tuple[float, MarkerSample]]  # (corrected_t, marker), sorted


def _table_for(rec: Recording, source_ref: int) -> OffsetTable | None:
    table = rec.offset_tables.get(source_ref)
    if table is not None and table.entries:
        return table
    return None


def correct_recording(rec: Recording) -> CorrectedRecording:
    """Map every sample and marker onto the hub timeline.

    Samples from a source with no offset entries are an error; the hub's
    own clock (source_ref 0) is the timeline itself and needs none. Markers
    from an unsynchronized source fall back to identity, since quick
    monitor sessions may never complete a sync exchange.
    """
    streams: dict[int, CorrectedStream] = {}
    for stream_id, declared in sorted(rec.streams.items()):
        if stream_id == MARKER_STREAM_ID:
            continue
        samples = rec.samples_of(stream_id)
        table = _table_for(rec, declared.source_ref)
        if table is None and declared.source_ref != 0:
            if samples:
                raise EpochingError(
                    "unsynchronized-source",
                    f"stream {declared.info.name!r} has samples but source "
                    f"{declared.source_ref} has no offset entries")
            continue
        raw = np.array([s.raw_timestamp for s in samples])
        if table is None:
            corrected = raw
        else:
            corrected = np.array([t + table.offset_at(t) for t in raw])
        values = np.array([s.values for s in samples]) if samples else \
            np.empty((0, declared.info.channel_count))
        streams[stream_id] = CorrectedStream(
            stream_id=stream_id,
            name=declared.info.name,
            channel_count=declared.info.channel_count,
            times=corrected,
            values=values,
        )

    markers = []
    for m in rec.markers:
        table = _table_for(rec, m.source_ref)
        t = m.raw_timestamp if table is None \
            else m.raw_timestamp + table.offset_at(m.raw_timestamp)
        markers.append((t, m))
    markers.sort(key=lambda pair: pair[0])
    return CorrectedRecording(streams=streams, markers=markers)


@dataclass
class Epoch:
    label: str
    marker_t: float        # corrected, hub timeline
    pre: float
    post: float
    slices: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    # per stream name: (relative_t array, values array (n, channels))


def extract_epochs(rec: Recording, label: str, pre: float, post: float
                   ) -> list[Epoch]:
    """One epoch per marker matching ``label`` exactly, in corrected-time
    order. A slice holds every sample whose corrected time lies in the
    closed window [marker - pre, marker + post]; overlapping epochs are
    independent."""
    if pre < 0 or post < 0:
        raise ValueError("pre and post must be >= 0")
    if not label:
        raise ValueError("marker label must be non-empty")
    corrected = correct_recording(rec)
    epochs = []
    for marker_t, marker in corrected.markers:
        if marker.label != label:
            continue
        epoch = Epoch(label=label, marker_t=marker_t, pre=pre, post=post)
        for stream in corrected.streams.values():
            rel = stream.times - marker_t
            mask = (rel >= -pre) & (rel <= post)
            epoch.slices[stream.name] = (rel[mask], stream.values[mask])
        epochs.append(epoch)
    return epochs


def export_epochs(epochs: list[Epoch], path: str | Path) -> None:
    """Write one JSON line per epoch:
    {"label", "marker_t", "streams": {name: {"relative_t": [...],
    "values": [[...]]}}}. Floats serialize at full roundtrip precision."""
    with open(path, "w", encoding="utf-8") as fh:
        for epoch in epochs:
            doc = {
                "label": epoch.label,
                "marker_t": epoch.marker_t,
                "streams": {
                    name: {
                        "relative_t": rel.tolist(),
                        "values": vals.tolist(),
                    }
                    for name, (rel, vals) in sorted(epoch.slices.items())
                },
            }
            fh.write(json.dumps(doc, separators=(",", ":")) + "\n")


def load_epochs(path: str | Path) -> list[dict]:
    """Parse an exported epochs file back into plain dicts."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
