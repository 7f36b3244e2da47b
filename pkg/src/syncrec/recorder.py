"""The .srec on-disk format: append-only, crash-tolerant, sequential scan.

Layout: magic ``SREC`` + u16 version (=1) + u16 reserved, then records of
``[u8 rec_type][u32 length][payload]``:

    1  stream declaration  UTF-8 JSON (StreamInfo + stream_id + source_ref)
    2  numeric chunk       SampleChunk wire layout
    3  marker              f64 raw_t + u8 origin + u16 label_len + label
                           + u32 source_ref
    4  offset entry        u32 source_ref + f64 measured_at + f64 offset
    5  footer              UTF-8 JSON (per-stream counts, sources, metadata)

All integers little-endian, floats IEEE-754 LE. Offset entries are written
inline as measured so a truncated file still carries sync data; the footer
is reconstructable by scan.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable

from . import wire
from .clocksync import OffsetTable
from .streams import MarkerSample, Sample, StreamInfo

MAGIC = b"SREC"
VERSION = 1

REC_DECL = 1
REC_CHUNK = 2
REC_MARKER = 3
REC_OFFSET = 4
REC_FOOTER = 5

_FILE_HEADER = struct.Struct("<4sHH")
_REC_HEADER = struct.Struct("<BI")
_OFFSET_REC = struct.Struct("<Idd")

MARKER_STREAM_ID = 0


class RecordingError(Exception):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code


@dataclass
class DeclaredStream:
    stream_id: int
    info: StreamInfo
    source_ref: int


@dataclass
class RecordedChunk:
    stream_id: int
    samples: list[Sample]


@dataclass
class Recording:
    """In-memory image of one .srec file.

    ``chunks`` preserves hub-delivery order; ``offset_tables`` maps
    source_ref to the sync entries collected while recording. ``truncated``
    is set when the file ended mid-record and only complete records were
    recovered.
    """

    streams: dict[int, DeclaredStream] = field(default_factory=dict)
    chunks: list[RecordedChunk] = field(default_factory=list)
    markers: list[MarkerSample] = field(default_factory=list)
    offset_tables: dict[int, OffsetTable] = field(default_factory=dict)
    counts: dict[int, int] = field(default_factory=dict)
    sources: dict[int, str] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    truncated: bool = False

    def stream_by_name(self, name: str) -> DeclaredStream | None:
        for ds in self.streams.values():
            if ds.info.name == name:
                return ds
        return None

    def samples_of(self, stream_id: int) -> list[Sample]:
        out = []
        for chunk in self.chunks:
            if chunk.stream_id == stream_id:
                out.extend(chunk.samples)
        return out


class RecordingWriter:
    """Single-writer serializer for the record stream coming off the hub."""

    def __init__(self, fh: BinaryIO):
        self._fh = fh
        self._channels: dict[int, int] = {}
        self._counts: dict[int, int] = {}
        self._marker_count = 0
        self._sources: dict[int, str] = {}
        self._metadata: dict = {}
        self._closed = False
        fh.write(_FILE_HEADER.pack(MAGIC, VERSION, 0))

    def _record(self, rec_type: int, payload: bytes) -> None:
        self._fh.write(_REC_HEADER.pack(rec_type, len(payload)))
        self._fh.write(payload)

    def write_declaration(self, stream_id: int, info: StreamInfo,
                          source_ref: int) -> None:
        doc = info.to_dict()
        doc["stream_id"] = stream_id
        doc["source_ref"] = source_ref
        self._record(REC_DECL, wire.encode_json(doc))
        self._channels[stream_id] = info.channel_count
        self._counts.setdefault(stream_id, 0)
        self._sources[source_ref] = info.source_id

    def write_chunk(self, stream_id: int, samples: Iterable[Sample]) -> None:
        if stream_id not in self._channels:
            raise RecordingError("undeclared-stream",
                                 f"chunk for stream {stream_id} before its declaration")
        samples = list(samples)
        payload = wire.encode_sample_chunk(stream_id, samples,
                                           self._channels[stream_id])
        self._record(REC_CHUNK, payload)
        self._counts[stream_id] += len(samples)

    def write_chunk_payload(self, payload: bytes) -> None:
        """Persist an already-encoded SampleChunk payload verbatim."""
        stream_id = wire.peek_chunk_stream_id(payload)
        if stream_id not in self._channels:
            raise RecordingError("undeclared-stream",
                                 f"chunk for stream {stream_id} before its declaration")
        self._record(REC_CHUNK, payload)
        self._counts[stream_id] += wire.chunk_sample_count(payload)

    def write_marker(self, marker: MarkerSample) -> None:
        payload = wire.encode_marker(marker.raw_timestamp, marker.label,
                                     marker.origin, marker.source_ref)
        self._record(REC_MARKER, payload)
        self._marker_count += 1

    def write_offset_entry(self, source_ref: int, measured_at: float,
                           offset: float) -> None:
        self._record(REC_OFFSET, _OFFSET_REC.pack(source_ref, measured_at, offset))

    def set_source(self, source_ref: int, source_id: str) -> None:
        self._sources[source_ref] = source_id

    def update_metadata(self, meta: dict) -> None:
        self._metadata.update(meta)

    def close(self) -> None:
        if self._closed:
            return
        footer = {
            "counts": {str(k): v for k, v in sorted(self._counts.items())},
            "marker_count": self._marker_count,
            "sources": {str(k): v for k, v in sorted(self._sources.items())},
            "metadata": self._metadata,
        }
        self._record(REC_FOOTER, wire.encode_json(footer))
        self._fh.flush()
        self._closed = True


def write_recording(rec: Recording, path: str | Path) -> None:
    """Serialize an in-memory Recording (mainly for tests and re-export).

    Declarations are written first, then chunks/markers/offset entries in
    their recorded order.
    """
    with open(path, "wb") as fh:
        w = RecordingWriter(fh)
        for stream_id, ds in sorted(rec.streams.items()):
            w.write_declaration(stream_id, ds.info, ds.source_ref)
        for source_ref, table in sorted(rec.offset_tables.items()):
            for measured_at, offset in table.entries:
                w.write_offset_entry(source_ref, measured_at, offset)
        for chunk in rec.chunks:
            w.write_chunk(chunk.stream_id, chunk.samples)
        for marker in rec.markers:
            w.write_marker(marker)
        for source_ref, source_id in rec.sources.items():
            w.set_source(source_ref, source_id)
        w.update_metadata(rec.metadata)
        w.close()


def read_recording(path: str | Path) -> Recording:
    """Scan a .srec file back into memory.

    Truncated files recover every complete record and come back with
    ``truncated=True`` and counts rebuilt by scan.
    """
    data = Path(path).read_bytes()
    if len(data) < _FILE_HEADER.size or data[:4] != MAGIC:
        raise RecordingError("not-srec", "missing SREC magic")
    _, version, _ = _FILE_HEADER.unpack_from(data)
    if version > VERSION:
        raise RecordingError("unsupported-version", f"file version {version}")

    rec = Recording()
    scanned_counts: dict[int, int] = {}
    footer: dict | None = None
    off = _FILE_HEADER.size
    while off < len(data):
        if off + _REC_HEADER.size > len(data):
            rec.truncated = True
            break
        rec_type, length = _REC_HEADER.unpack_from(data, off)
        body_start = off + _REC_HEADER.size
        if body_start + length > len(data):
            rec.truncated = True
            break
        payload = data[body_start:body_start + length]
        off = body_start + length

        if rec_type == REC_DECL:
            doc = wire.decode_json(payload)
            info = StreamInfo.from_dict(doc)
            stream_id = int(doc["stream_id"])
            source_ref = int(doc["source_ref"])
            rec.streams[stream_id] = DeclaredStream(stream_id, info, source_ref)
            rec.sources.setdefault(source_ref, info.source_id)
            scanned_counts.setdefault(stream_id, 0)
        elif rec_type == REC_CHUNK:
            stream_id = wire.peek_chunk_stream_id(payload)
            if stream_id not in rec.streams:
                raise RecordingError("undeclared-stream",
                                     f"chunk for undeclared stream {stream_id}")
            channels = rec.streams[stream_id].info.channel_count
            _, samples = wire.decode_sample_chunk(payload, channels)
            rec.chunks.append(RecordedChunk(stream_id, samples))
            scanned_counts[stream_id] = scanned_counts.get(stream_id, 0) + len(samples)
        elif rec_type == REC_MARKER:
            raw_t, label, origin, source_ref = wire.decode_marker(payload)
            rec.markers.append(MarkerSample(raw_timestamp=raw_t, label=label,
                                            origin=origin,
                                            source_ref=source_ref or 0))
        elif rec_type == REC_OFFSET:
            source_ref, measured_at, offset = _OFFSET_REC.unpack(payload)
            table = rec.offset_tables.setdefault(
                source_ref, OffsetTable(source_id=rec.sources.get(source_ref, "")))
            table.add(measured_at, offset)
        elif rec_type == REC_FOOTER:
            footer = wire.decode_json(payload)
        else:
            raise RecordingError("bad-record", f"unknown record type {rec_type}")

    if footer is not None and not rec.truncated:
        rec.counts = {int(k): v for k, v in footer.get("counts", {}).items()}
        rec.sources.update({int(k): v for k, v in footer.get("sources", {}).items()})
        rec.metadata = footer.get("metadata", {})
    else:
        rec.truncated = True
        rec.counts = scanned_counts
    for source_ref, table in rec.offset_tables.items():
        table.source_id = rec.sources.get(source_ref, table.source_id)
    return rec
