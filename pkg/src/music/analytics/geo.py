from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EARTH_RADIUS_KM = 6371.0
KM_PER_DEG_LAT = math.pi * EARTH_RADIUS_KM / 180.0


@dataclass(frozen=True, order=True)
class GeoPoint:
    latitude: float
    longitude: float

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude out of range: {self.latitude}")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude out of range: {self.longitude}")


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in km on a sphere of radius 6371 km."""
    lat1, lon1 = math.radians(a.latitude), math.radians(a.longitude)
    lat2, lon2 = math.radians(b.latitude), math.radians(b.longitude)
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def haversine_many(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Vectorised haversine; arguments broadcast like numpy arrays (degrees)."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(x, dtype=float)) for x in (lat1, lon1, lat2, lon2))
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def destination(origin: GeoPoint, bearing_deg: float, distance_km: float) -> GeoPoint:
    """Point reached travelling ``distance_km`` along a great circle from ``origin``."""
    lat1 = math.radians(origin.latitude)
    lon1 = math.radians(origin.longitude)
    brg = math.radians(bearing_deg)
    d = distance_km / EARTH_RADIUS_KM
    lat2 = math.asin(math.sin(lat1) * math.cos(d) + math.cos(lat1) * math.sin(d) * math.cos(brg))
    lon2 = lon1 + math.atan2(
        math.sin(brg) * math.sin(d) * math.cos(lat1),
        math.cos(d) - math.sin(lat1) * math.sin(lat2),
    )
    lon2 = (lon2 + 3 * math.pi) % (2 * math.pi) - math.pi
    return GeoPoint(math.degrees(lat2), math.degrees(lon2))


def interpolate(a: GeoPoint, b: GeoPoint, fraction: float) -> GeoPoint:
    """Linear interpolation in latitude/longitude (adequate for sub-km hops)."""
    return GeoPoint(
        a.latitude + (b.latitude - a.latitude) * fraction,
        a.longitude + (b.longitude - a.longitude) * fraction,
    )


def _unit_vectors(lat, lon) -> np.ndarray:
    lat = np.radians(np.asarray(lat, dtype=float))
    lon = np.radians(np.asarray(lon, dtype=float))
    return np.stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)], axis=-1)


def distance_to_arc_km(lat, lon, start: GeoPoint, end: GeoPoint) -> np.ndarray:
    """Distance from points to the great-circle arc ``start``-``end``.

    Uses the perpendicular (cross-track) distance when the foot of the
    perpendicular lies on the arc, else the distance to the nearer endpoint.
    """
    p = _unit_vectors(lat, lon)
    a = _unit_vectors(start.latitude, start.longitude)
    b = _unit_vectors(end.latitude, end.longitude)
    d_start = haversine_many(lat, lon, start.latitude, start.longitude)
    d_end = haversine_many(lat, lon, end.latitude, end.longitude)
    endpoint = np.minimum(d_start, d_end)
    n = np.cross(a, b)
    norm = np.linalg.norm(n)
    if norm < 1e-15:
        return endpoint
    n = n / norm
    sin_xt = np.clip(p @ n, -1.0, 1.0)
    cross_track = np.abs(np.arcsin(sin_xt)) * EARTH_RADIUS_KM
    # foot of perpendicular lies on the arc iff it is on the inner side of both endpoints
    foot = p - np.outer(np.atleast_1d(sin_xt), n).reshape(p.shape)
    on_arc = (np.cross(a, foot) @ n >= 0) & (np.cross(foot, b) @ n >= 0)
    return np.where(on_arc, np.minimum(cross_track, endpoint), endpoint)
