"""CSV formats for bus traces and road segments.

Trace:    timestamp_iso8601,vehicle_id,latitude,longitude
Segments: id,start_lat,start_lon,end_lat,end_lon[,free_flow_kmh]
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable

from music.analytics.geo import GeoPoint
from music.analytics.traffic import Fix, RoadSegment
from music.errors import NoDataError, TraceError

log = logging.getLogger(__name__)

TRACE_HEADER = ["timestamp_iso8601", "vehicle_id", "latitude", "longitude"]
SEGMENT_HEADER = ["id", "start_lat", "start_lon", "end_lat", "end_lon", "free_flow_kmh"]


def parse_timestamp(text: str) -> float:
    ts = datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.timestamp()


def format_timestamp(epoch_s: float) -> str:
    ts = datetime.fromtimestamp(epoch_s, tz=timezone.utc)
    return ts.isoformat(timespec="milliseconds").replace("+00:00", "Z")


@dataclass
class TraceLoad:
    fixes: list[Fix]
    rejected: list[tuple[int, str]] = field(default_factory=list)

    @property
    def vehicles(self) -> set[str]:
        return {f.vehicle_id for f in self.fixes}


def read_trace(path: str | Path) -> TraceLoad:
    """Load a trace CSV; malformed rows are skipped and reported by line number."""
    fixes: list[Fix] = []
    rejected: list[tuple[int, str]] = []
    last_ts: dict[str, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise NoDataError(f"{path}: empty trace file")
        if [h.strip() for h in header[:4]] != TRACE_HEADER:
            raise TraceError(f"{path}:1: expected header {','.join(TRACE_HEADER)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            try:
                if len(row) < 4:
                    raise ValueError("expected 4 columns")
                ts = parse_timestamp(row[0])
                vehicle = row[1].strip()
                if not vehicle:
                    raise ValueError("empty vehicle_id")
                point = GeoPoint(float(row[2]), float(row[3]))
            except ValueError as exc:
                rejected.append((line, str(exc)))
                continue
            if vehicle in last_ts and ts <= last_ts[vehicle]:
                rejected.append((line, f"timestamp not increasing for vehicle {vehicle}"))
                continue
            last_ts[vehicle] = ts
            fixes.append(Fix(vehicle, ts, point))
    for line, reason in rejected:
        log.warning("%s:%d: rejected row: %s", path, line, reason)
    if not fixes:
        raise NoDataError(f"{path}: no valid vehicle fixes")
    return TraceLoad(fixes, rejected)


def write_trace(path: str | Path, fixes: Iterable[Fix]) -> int:
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for f in fixes:
            w.writerow([format_timestamp(f.timestamp), f.vehicle_id, repr(f.point.latitude), repr(f.point.longitude)])
            n += 1
    return n


def read_segments(path: str | Path) -> list[RoadSegment]:
    segments = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:5]] != SEGMENT_HEADER[:5]:
            raise TraceError(f"{path}:1: expected header {','.join(SEGMENT_HEADER)}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            line = reader.line_num
            try:
                ff = float(row[5]) if len(row) > 5 and row[5].strip() else None
                segments.append(RoadSegment(
                    row[0].strip(),
                    GeoPoint(float(row[1]), float(row[2])),
                    GeoPoint(float(row[3]), float(row[4])),
                    ff,
                ))
            except (ValueError, IndexError) as exc:
                raise TraceError(f"{path}:{line}: bad segment row: {exc}") from None
    if not segments:
        raise NoDataError(f"{path}: no segments")
    return segments


def write_segments(path: str | Path, segments: Iterable[RoadSegment]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SEGMENT_HEADER)
        for s in segments:
            w.writerow([
                s.id, s.start.latitude, s.start.longitude, s.end.latitude, s.end.longitude,
                "" if s.free_flow_speed_kmh is None else s.free_flow_speed_kmh,
            ])
