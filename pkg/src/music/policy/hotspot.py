"""Traffic hotspot policy.

Vehicles' GPS fixes are turned into windowed segment speeds.  Once a window
has closed and every edge had time to flush it (``settle_s``), the policy
re-evaluates hotspot flags and EWMA forecasts.  Each node then samples its
hotspot sensor at

    f = clamp(f_min + (f_max - f_min) * max(0, 1 - forecast / free_flow))

jumping to ``f_max`` on flagged segments, and asks for camera images when
the forecast falls below ``camera_speed_fraction * free_flow``.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass

from music.analytics.geo import GeoPoint
from music.analytics.traffic import (
    Fix,
    forecast_ewma,
    free_flow_speed,
    map_to_segment,
    segment_flags,
    segment_sort_key,
    segment_speeds,
)
from music.command.policy import Directive, SensingPolicy
from music.errors import ConfigError
from music.policy.base import Policy, PolicyContext, register_policy
from music.protocol import SensorDataMsg, SensorSetting

log = logging.getLogger(__name__)


def hotspot_frequency(forecast_kmh: float, free_flow_kmh: float, f_min: float, f_max: float) -> float:
    f = f_min + (f_max - f_min) * max(0.0, 1.0 - forecast_kmh / free_flow_kmh)
    return min(max(f, f_min), f_max)


@dataclass(frozen=True)
class SegmentState:
    forecast: float | None
    free_flow: float | None
    flagged: bool
    window: float


def gps_fixes(windows, sensor: str = "GPS") -> list[Fix]:
    """All fixes of ``sensor`` in the data windows, ordered per vehicle."""
    per_vehicle = defaultdict(dict)
    for imei in sorted(windows):
        for entry in windows[imei]:
            msg = entry.message
            if not isinstance(msg, SensorDataMsg):
                continue
            for rec in msg.records(sensor):
                ts = rec.get("timestamp")
                if ts is None or "latitude" not in rec:
                    continue
                per_vehicle[imei][ts] = GeoPoint(rec["latitude"], rec["longitude"])
    fixes = []
    for imei in sorted(per_vehicle):
        for ts in sorted(per_vehicle[imei]):
            fixes.append(Fix(imei, ts / 1000.0, per_vehicle[imei][ts]))
    return fixes


@register_policy("traffic_hotspot")
class HotspotPolicy(Policy):
    def __init__(self, params=None):
        super().__init__(params)
        self.segments = tuple(sorted(self.params.segments, key=lambda s: segment_sort_key(s.id)))
        self.state: dict[str, SegmentState] = {}
        self.evaluated_until: float | None = None
        # (window_start, segment_id, flag) for every evaluated window
        self.timeline: list[tuple[float, str, bool]] = []

    def _evaluate(self, ctx: PolicyContext) -> None:
        p = self.params
        w_s = p.window_s
        latest = math.floor((ctx.now - p.settle_s - w_s) / w_s) * w_s
        if self.evaluated_until is not None and latest <= self.evaluated_until:
            return
        fixes = gps_fixes(ctx.windows, p.hotspot_sensor)
        series = segment_speeds(fixes, self.segments, w_s, p.snap_radius_km)
        starts = [w.start for s in series.values() for w in s.values]
        if not starts:
            return
        first = min(starts) if self.evaluated_until is None else self.evaluated_until + w_s
        w = first
        while w <= latest:
            truncated = {sid: s.until(w) for sid, s in series.items()}
            flags = segment_flags(truncated, self.segments, p.alpha, p.k, p.hotspot_mode, p.outlier_cutoff)
            for seg in self.segments:
                s = truncated[seg.id]
                forecast = forecast_ewma(s, p.ewma_lambda) if s.values else None
                self.state[seg.id] = SegmentState(forecast, free_flow_speed(seg, s), flags.flags[seg.id], w)
                self.timeline.append((w, seg.id, flags.flags[seg.id]))
            w += w_s
        if w > first:
            self.evaluated_until = w - w_s

    def _directive(self, ctx: PolicyContext, node) -> Directive:
        p = self.params
        sensor = p.hotspot_sensor
        if sensor not in node.sensors:
            sensors = ctx.base_sensors(node)
            return Directive(active=bool(sensors), sensors=sensors)
        spec = ctx.sensor_table[sensor]
        f_min, f_max = p.freq_bounds.get(sensor, (spec.default_frequency, spec.max_frequency))
        f = min(max(spec.default_frequency, f_min), f_max)
        capture = False
        seg_id = map_to_segment(node.location, self.segments, p.snap_radius_km)
        st = self.state.get(seg_id) if seg_id is not None else None
        if st is not None and st.forecast is not None and st.free_flow:
            f = hotspot_frequency(st.forecast, st.free_flow, f_min, f_max)
            capture = st.forecast < p.camera_speed_fraction * st.free_flow
            if st.flagged:
                f = f_max
            elif p.deactivate_free_flow and st.forecast >= st.free_flow:
                return Directive(active=False, capture_image=capture)
        return Directive(active=True, sensors=(SensorSetting(sensor, round(f, 3)),), capture_image=capture)

    def tick(self, ctx: PolicyContext) -> SensingPolicy:
        if not self.segments:
            raise ConfigError("traffic_hotspot policy needs a segment table")
        self._evaluate(ctx)
        directives = {n.imei: self._directive(ctx, n) for n in ctx.alive_nodes()}
        annotations = {
            "hotspots": sorted((sid for sid, st in self.state.items() if st.flagged), key=segment_sort_key),
            "forecasts": {sid: st.forecast for sid, st in self.state.items()},
            "evaluated_until": self.evaluated_until,
        }
        return SensingPolicy(ctx.policy_id, directives, annotations)
