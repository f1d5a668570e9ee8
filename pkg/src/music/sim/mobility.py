"""Where a simulated node is at a given sim time."""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Protocol, Sequence

from music.analytics.geo import GeoPoint, haversine_km, interpolate


class Mobility(Protocol):
    def position(self, t: float) -> GeoPoint: ...


@dataclass(frozen=True)
class Static:
    point: GeoPoint

    def position(self, t: float) -> GeoPoint:
        return self.point


class Waypoints:
    """Piecewise-linear path through ``(t, point)`` pairs.

    Two waypoints with the same time make the node jump there at that
    instant.  Before the first waypoint and after the last one the node
    stays put.
    """

    def __init__(self, waypoints: Sequence[tuple[float, GeoPoint]]):
        if not waypoints:
            raise ValueError("need at least one waypoint")
        times = [float(t) for t, _ in waypoints]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("waypoint times must be non-decreasing")
        self.times = times
        self.points = [p for _, p in waypoints]

    def position(self, t: float) -> GeoPoint:
        i = bisect.bisect_right(self.times, t)
        if i == 0:
            return self.points[0]
        if i == len(self.times):
            return self.points[-1]
        t0, t1 = self.times[i - 1], self.times[i]
        return interpolate(self.points[i - 1], self.points[i], (t - t0) / (t1 - t0))


class Shuttle:
    """Back and forth between two points with a piecewise-constant speed schedule.

    ``speeds`` is a list of ``(t, km/h)`` steps; the speed before the first
    step is the first step's speed.
    """

    def __init__(self, start: GeoPoint, end: GeoPoint, speeds: Sequence[tuple[float, float]], t0: float):
        if not speeds:
            raise ValueError("need at least one speed step")
        if any(v < 0 for _, v in speeds):
            raise ValueError("speeds must be >= 0")
        self.start, self.end = start, end
        self.length_km = haversine_km(start, end)
        if self.length_km <= 0:
            raise ValueError("shuttle endpoints must differ")
        steps = sorted((float(t), float(v)) for t, v in speeds)
        self.t0 = t0
        self.step_times = [max(t, t0) for t, _ in steps]
        self.step_speeds = [v for _, v in steps]
        # distance travelled at each step boundary
        self._dist = [0.0]
        for i in range(1, len(steps)):
            dt = self.step_times[i] - self.step_times[i - 1]
            self._dist.append(self._dist[-1] + self.step_speeds[i - 1] * dt / 3600.0)

    def distance(self, t: float) -> float:
        if t <= self.step_times[0]:
            return max(0.0, t - self.t0) * self.step_speeds[0] / 3600.0
        i = bisect.bisect_right(self.step_times, t) - 1
        lead = (self.step_times[0] - self.t0) * self.step_speeds[0] / 3600.0
        return lead + self._dist[i] + (t - self.step_times[i]) * self.step_speeds[i] / 3600.0

    def position(self, t: float) -> GeoPoint:
        d = self.distance(t) % (2 * self.length_km)
        if d > self.length_km:
            d = 2 * self.length_km - d
        return interpolate(self.start, self.end, d / self.length_km)
