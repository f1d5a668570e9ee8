"""Road-segment speed analytics: map matching, windowed speeds, hotspots."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from music.analytics.geo import GeoPoint, distance_to_arc_km, haversine_km, haversine_many
from music.errors import NoDataError, TraceError

log = logging.getLogger(__name__)

DEFAULT_WINDOW_S = 600.0
DEFAULT_SNAP_RADIUS_KM = 0.05
FREE_FLOW_PERCENTILE = 85.0
_TIE_KM = 1e-9


@dataclass(frozen=True)
class RoadSegment:
    id: str
    start: GeoPoint
    end: GeoPoint
    free_flow_speed_kmh: float | None = None

    def __post_init__(self):
        if self.length_km <= 0:
            raise ValueError(f"segment {self.id}: zero length")
        if self.free_flow_speed_kmh is not None and self.free_flow_speed_kmh <= 0:
            raise ValueError(f"segment {self.id}: free-flow speed must be positive")

    @property
    def length_km(self) -> float:
        return haversine_km(self.start, self.end)


@dataclass(frozen=True)
class SpeedWindow:
    start: float        # epoch seconds, multiple of window_s
    mean_kmh: float
    count: int


@dataclass(frozen=True)
class SegmentSpeedSeries:
    segment_id: str
    window_s: float = DEFAULT_WINDOW_S
    values: tuple[SpeedWindow, ...] = ()

    def means(self) -> list[float]:
        return [w.mean_kmh for w in self.values]

    def until(self, window_start: float) -> "SegmentSpeedSeries":
        """Series truncated to windows starting at or before ``window_start``."""
        return SegmentSpeedSeries(
            self.segment_id, self.window_s, tuple(w for w in self.values if w.start <= window_start)
        )


@dataclass(frozen=True)
class Fix:
    vehicle_id: str
    timestamp: float    # epoch seconds
    point: GeoPoint


@dataclass(frozen=True)
class HotspotFlags:
    flags: dict[str, bool]
    set_at: dict[str, float | None] = field(default_factory=dict)

    def __len__(self):
        return len(self.flags)

    def hotspots(self) -> list[str]:
        return sorted((k for k, v in self.flags.items() if v), key=segment_sort_key)


def segment_sort_key(segment_id: str):
    """Numeric ids sort numerically, everything else lexicographically after."""
    return (0, int(segment_id), "") if segment_id.isdigit() else (1, 0, segment_id)


def _nearest(lat: np.ndarray, lon: np.ndarray, segments: Sequence[RoadSegment], radius_km: float) -> list[str | None]:
    ordered = sorted(segments, key=lambda s: segment_sort_key(s.id))
    dist = np.stack([distance_to_arc_km(lat, lon, s.start, s.end) for s in ordered])
    best = dist.min(axis=0)
    out: list[str | None] = []
    for j in range(dist.shape[1]):
        if best[j] > radius_km:
            out.append(None)
            continue
        # first (lowest id) segment within tie tolerance of the minimum
        i = int(np.argmax(dist[:, j] <= best[j] + _TIE_KM))
        out.append(ordered[i].id)
    return out


def map_to_segment(p: GeoPoint, segments: Sequence[RoadSegment], snap_radius_km: float = DEFAULT_SNAP_RADIUS_KM) -> str | None:
    """Id of the segment nearest to ``p`` within the snap radius, else None."""
    if not segments:
        raise ValueError("no segments to match against")
    return _nearest(np.array([p.latitude]), np.array([p.longitude]), segments, snap_radius_km)[0]


def map_many(points: Sequence[GeoPoint], segments: Sequence[RoadSegment], snap_radius_km: float = DEFAULT_SNAP_RADIUS_KM) -> list[str | None]:
    if not points:
        return []
    lat = np.array([p.latitude for p in points])
    lon = np.array([p.longitude for p in points])
    return _nearest(lat, lon, segments, snap_radius_km)


def _by_vehicle(traces: Iterable[Fix]) -> dict[str, list[Fix]]:
    grouped: dict[str, list[Fix]] = defaultdict(list)
    for fix in traces:
        seq = grouped[fix.vehicle_id]
        if seq and fix.timestamp <= seq[-1].timestamp:
            raise TraceError(
                f"vehicle {fix.vehicle_id}: timestamp {fix.timestamp} not after {seq[-1].timestamp}"
            )
        seq.append(fix)
    return grouped


def segment_speeds(
    traces: Iterable[Fix],
    segments: Sequence[RoadSegment],
    window_s: float = DEFAULT_WINDOW_S,
    snap_radius_km: float = DEFAULT_SNAP_RADIUS_KM,
) -> dict[str, SegmentSpeedSeries]:
    """Mean traversal speed per segment per time window.

    Each pair of consecutive fixes of one vehicle that both snap to the same
    segment contributes ``distance / elapsed`` to the window holding the
    pair's midpoint time.  Segments without contributions get an empty series.
    """
    grouped = _by_vehicle(traces)
    sums: dict[str, dict[float, list[float]]] = {s.id: defaultdict(list) for s in segments}
    for vehicle in sorted(grouped):
        fixes = grouped[vehicle]
        if len(fixes) < 2:
            continue
        ids = map_many([f.point for f in fixes], segments, snap_radius_km)
        lat = np.array([f.point.latitude for f in fixes])
        lon = np.array([f.point.longitude for f in fixes])
        hop = haversine_many(lat[:-1], lon[:-1], lat[1:], lon[1:])
        for i in range(len(fixes) - 1):
            seg = ids[i]
            if seg is None or seg != ids[i + 1]:
                continue
            dt_h = (fixes[i + 1].timestamp - fixes[i].timestamp) / 3600.0
            mid = (fixes[i].timestamp + fixes[i + 1].timestamp) / 2.0
            window = math.floor(mid / window_s) * window_s
            sums[seg][window].append(float(hop[i]) / dt_h)
    out = {}
    for seg_id, windows in sums.items():
        values = tuple(
            SpeedWindow(start, float(np.mean(speeds)), len(speeds))
            for start, speeds in sorted(windows.items())
        )
        out[seg_id] = SegmentSpeedSeries(seg_id, window_s, values)
    return out


def free_flow_speed(segment: RoadSegment, series: SegmentSpeedSeries | None) -> float | None:
    """Configured free-flow speed, else the 85th percentile of window means."""
    if segment.free_flow_speed_kmh is not None:
        return segment.free_flow_speed_kmh
    if series is None or not series.values:
        return None
    return float(np.percentile(series.means(), FREE_FLOW_PERCENTILE))


def detect_hotspots(
    series: Mapping[str, SegmentSpeedSeries],
    segments: Sequence[RoadSegment],
    alpha: float = 0.4,
    k: int = 2,
) -> HotspotFlags:
    """Flag segments whose last ``k`` non-empty windows are all below ``alpha`` x free flow."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if k < 1:
        raise ValueError("k must be >= 1")
    flags: dict[str, bool] = {}
    set_at: dict[str, float | None] = {}
    for seg in segments:
        s = series.get(seg.id)
        ff = free_flow_speed(seg, s)
        recent = s.values[-k:] if s is not None else ()
        hot = ff is not None and len(recent) == k and all(w.mean_kmh < alpha * ff for w in recent)
        flags[seg.id] = hot
        set_at[seg.id] = recent[-1].start if hot else None
    return HotspotFlags(flags, set_at)


def detect_outliers(means: Mapping[str, float], cutoff: float = 3.0) -> HotspotFlags:
    """Flag entries whose mean deviates from the median by more than ``cutoff`` MADs.

    When the MAD is zero every entry that differs from the median is flagged.
    """
    if not means:
        return HotspotFlags({}, {})
    values = np.array(list(means.values()), dtype=float)
    med = float(np.median(values))
    mad = float(np.median(np.abs(values - med)))
    flags = {key: abs(v - med) > cutoff * mad for key, v in means.items()}
    return HotspotFlags(flags, {key: None for key in means})


def forecast_ewma(series: SegmentSpeedSeries | Sequence[float], lam: float = 0.3) -> float:
    """Exponentially weighted moving average of window means, seeded with the first."""
    values = series.means() if isinstance(series, SegmentSpeedSeries) else list(series)
    if not values:
        raise NoDataError("cannot forecast an empty series")
    if not 0 < lam <= 1:
        raise ValueError("lambda must lie in (0, 1]")
    est = values[0]
    for v in values[1:]:
        est = lam * v + (1 - lam) * est
    return est


def segment_flags(
    series: Mapping[str, SegmentSpeedSeries],
    segments: Sequence[RoadSegment],
    alpha: float = 0.4,
    k: int = 2,
    mode: str = "speed_drop",
    outlier_cutoff: float = 3.0,
) -> HotspotFlags:
    """Hotspot flags under either rule.

    ``speed_drop`` is :func:`detect_hotspots`.  ``robust_outlier`` compares
    each segment's latest window mean against its peers.
    """
    if mode == "speed_drop":
        return detect_hotspots(series, segments, alpha, k)
    if mode != "robust_outlier":
        raise ValueError(f"unknown hotspot mode {mode!r}")
    latest = {sid: s.values[-1].mean_kmh for sid, s in series.items() if s.values}
    found = detect_outliers(latest, outlier_cutoff)
    flags = {seg.id: found.flags.get(seg.id, False) for seg in segments}
    set_at = {seg.id: series[seg.id].values[-1].start if flags[seg.id] else None for seg in segments}
    return HotspotFlags(flags, set_at)


def window_starts(series: Mapping[str, SegmentSpeedSeries]) -> list[float]:
    return sorted({w.start for s in series.values() for w in s.values})


def flag_timeline(
    series: Mapping[str, SegmentSpeedSeries],
    segments: Sequence[RoadSegment],
    alpha: float,
    k: int,
    windows: Iterable[float] | None = None,
    mode: str = "speed_drop",
    outlier_cutoff: float = 3.0,
) -> list[tuple[float, str, bool]]:
    """Hotspot flags as they stood at the close of each window.

    Rows are ``(window_start, segment_id, flag)`` computed from the series
    truncated at that window, i.e. what an online detector would have seen.
    """
    if windows is None:
        starts = window_starts(series)
        window_s = next(iter(series.values())).window_s if series else DEFAULT_WINDOW_S
        windows = np.arange(starts[0], starts[-1] + window_s / 2, window_s).tolist() if starts else []
    rows = []
    ordered = sorted(segments, key=lambda s: segment_sort_key(s.id))
    for w in windows:
        truncated = {sid: s.until(w) for sid, s in series.items()}
        flags = segment_flags(truncated, ordered, alpha, k, mode, outlier_cutoff)
        rows.extend((float(w), seg.id, flags.flags[seg.id]) for seg in ordered)
    return rows
