"""Spatial coverage for air-quality sensing.

Keeps active sensors at least ``separation_km`` apart.  Nodes are admitted
greedily by priority (higher battery first, then lower imei) and a node is
stopped only if it sits too close to an already admitted one, so the active
set is maximal: every stopped node conflicts with some active node.  The
decision is recomputed from scratch every tick, so a stopped node restarts
as soon as it no longer conflicts with any active node.
"""

from __future__ import annotations

import logging
from itertools import combinations

from music.analytics.geo import haversine_km
from music.analytics.idw import loocv_error
from music.command.policy import Directive, SensingPolicy
from music.errors import AnalyticsError
from music.policy.base import Policy, PolicyContext, register_policy

log = logging.getLogger(__name__)


def resolve_conflicts(nodes, separation_km: float) -> tuple[set[str], list[tuple[str, str, float]]]:
    """Active imeis after greedy admission, plus every conflicting pair."""
    ordered = sorted(nodes, key=lambda n: (-n.battery, n.imei))
    admitted = []
    for n in ordered:
        if all(haversine_km(n.location, a.location) >= separation_km for a in admitted):
            admitted.append(n)
    pairs = []
    for a, b in combinations(sorted(nodes, key=lambda n: n.imei), 2):
        d = haversine_km(a.location, b.location)
        if d < separation_km:
            pairs.append((a.imei, b.imei, d))
    return {n.imei for n in admitted}, pairs


def latest_readings(ctx: PolicyContext, sensor: str) -> list:
    """Mean of each node's most recent session of ``sensor``, at the node's location."""
    out = []
    seen = set()
    for node in ctx.alive_nodes():
        window = ctx.windows.get(node.imei, ())
        values = None
        for entry in reversed(window):
            msg = entry.message
            sessions = getattr(msg, "sensor_data", {}).get(sensor)
            if sessions:
                vals = [r["value"] for r in sessions[-1].records if "value" in r]
                if vals:
                    values = vals
                    break
        key = (node.location.latitude, node.location.longitude)
        if values is None or key in seen:
            continue
        seen.add(key)
        out.append((node.location, sum(values) / len(values)))
    return out


@register_policy("spatial_coverage")
class SpatialCoveragePolicy(Policy):
    def tick(self, ctx: PolicyContext) -> SensingPolicy:
        p = self.params
        nodes = ctx.alive_nodes()
        charged = [n for n in nodes if n.battery >= p.battery_floor]
        active, pairs = resolve_conflicts(charged, p.separation_km)
        directives = {}
        for node in nodes:
            sensors = ctx.base_sensors(node)
            on = node.imei in active and bool(sensors)
            directives[node.imei] = Directive(active=on, sensors=sensors if on else ())
        annotations = {"conflicts": len(pairs), "low_battery": len(nodes) - len(charged)}
        readings = latest_readings(ctx, p.coverage_sensor)
        if len(readings) >= 2:
            try:
                annotations["loocv_rmse"] = loocv_error(readings, p.idw_power)
            except AnalyticsError as exc:
                log.debug("loocv skipped: %s", exc)
        return SensingPolicy(ctx.policy_id, directives, annotations)
