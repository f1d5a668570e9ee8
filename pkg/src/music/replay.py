"""Offline traffic analytics over a trace CSV or a controller's data logs."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from music.analytics.io import format_timestamp
from music.analytics.traffic import (
    Fix,
    RoadSegment,
    SegmentSpeedSeries,
    flag_timeline,
    forecast_ewma,
    segment_sort_key,
    segment_speeds,
)
from music.controller.store import read_logs
from music.errors import NoDataError
from music.policy.hotspot import gps_fixes


@dataclass
class ReplayResult:
    series: dict[str, SegmentSpeedSeries]
    flags: list[tuple[float, str, bool]]
    # (segment_id, window_start, mean_kmh, count, forecast of the next window)
    rows: list[tuple[str, float, float, int, float]]


def fixes_from_logs(data_dir: str | Path, sensor: str = "GPS") -> list[Fix]:
    logs = read_logs(data_dir)
    if not logs:
        raise NoDataError(f"{data_dir}: no data logs")
    return gps_fixes(logs, sensor)


def replay(
    fixes: Sequence[Fix],
    segments: Sequence[RoadSegment],
    window_s: float = 600.0,
    alpha: float = 0.4,
    k: int = 2,
    ewma_lambda: float = 0.3,
    snap_radius_km: float = 0.05,
    mode: str = "speed_drop",
    outlier_cutoff: float = 3.0,
) -> ReplayResult:
    if not fixes:
        raise NoDataError("no vehicle fixes to replay")
    series = segment_speeds(fixes, segments, window_s, snap_radius_km)
    flags = flag_timeline(series, segments, alpha, k, mode=mode, outlier_cutoff=outlier_cutoff)
    rows = []
    for sid in sorted(series, key=segment_sort_key):
        s = series[sid]
        for w in s.values:
            rows.append((sid, w.start, w.mean_kmh, w.count, forecast_ewma(s.until(w.start), ewma_lambda)))
    return ReplayResult(series, flags, rows)


def write_replay(result: ReplayResult, out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    speeds = out / "speed_series.csv"
    with speeds.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment_id", "window_start", "mean_kmh", "count", "forecast_kmh"])
        for sid, start, mean, count, fc in result.rows:
            w.writerow([sid, format_timestamp(start), f"{mean:.6f}", count, f"{fc:.6f}"])
    flags = out / "hotspot_flags.csv"
    with flags.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_start", "segment_id", "flag"])
        for start, sid, flag in result.flags:
            w.writerow([format_timestamp(start), sid, int(flag)])
    return speeds, flags
