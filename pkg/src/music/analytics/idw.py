"""Inverse-distance-weighted field estimation on geographic coordinates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from music.analytics.geo import KM_PER_DEG_LAT, GeoPoint, haversine_many
from music.errors import DuplicateLocationError, InsufficientDataError, NoDataError

Reading = tuple[GeoPoint, float]

# distances below this are treated as coincident with the sample site
_EXACT_KM = 1e-9


@dataclass(frozen=True)
class BoundingBox:
    south: float
    west: float
    north: float
    east: float

    @classmethod
    def around(cls, points: Sequence[GeoPoint], margin_km: float = 0.0) -> "BoundingBox":
        lats = [p.latitude for p in points]
        lons = [p.longitude for p in points]
        dlat = margin_km / KM_PER_DEG_LAT
        mid = math.radians((min(lats) + max(lats)) / 2)
        dlon = margin_km / (KM_PER_DEG_LAT * max(math.cos(mid), 1e-6))
        return cls(min(lats) - dlat, min(lons) - dlon, max(lats) + dlat, max(lons) + dlon)


@dataclass(frozen=True)
class PollutionField:
    latitudes: np.ndarray   # shape (rows,)
    longitudes: np.ndarray  # shape (cols,)
    values: np.ndarray      # shape (rows, cols)
    loocv_rmse: float | None

    def value_at(self, row: int, col: int) -> float:
        return float(self.values[row, col])


def _unpack(readings: Sequence[Reading]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if len(readings) == 0:
        raise NoDataError("at least one reading is required")
    lat = np.array([p.latitude for p, _ in readings], dtype=float)
    lon = np.array([p.longitude for p, _ in readings], dtype=float)
    val = np.array([v for _, v in readings], dtype=float)
    seen = set()
    for p, _ in readings:
        key = (p.latitude, p.longitude)
        if key in seen:
            raise DuplicateLocationError(f"duplicate reading location {key}")
        seen.add(key)
    return lat, lon, val


def idw_estimate(lat, lon, readings: Sequence[Reading], power: float = 2.0) -> np.ndarray:
    """IDW estimate at query points ``(lat, lon)`` (arrays of equal shape)."""
    r_lat, r_lon, r_val = _unpack(readings)
    q_lat = np.asarray(lat, dtype=float)
    q_lon = np.asarray(lon, dtype=float)
    d = haversine_many(q_lat[..., None], q_lon[..., None], r_lat, r_lon)
    exact = d < _EXACT_KM
    # exact hits give 0/0 here; they are overwritten below
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(exact, 0.0, d ** -power)
        # offsetting by the minimum keeps constant fields exact and est >= min
        base = r_val.min()
        est = base + (w * (r_val - base)).sum(axis=-1) / w.sum(axis=-1)
    hit = exact.any(axis=-1)
    if hit.any():
        est = np.where(hit, (exact * r_val).sum(axis=-1) / np.maximum(exact.sum(axis=-1), 1), est)
    return est


def loocv_error(readings: Sequence[Reading], power: float = 2.0) -> float:
    """RMSE of predicting every reading from the others."""
    if len(readings) < 2:
        raise InsufficientDataError("leave-one-out needs at least two readings")
    _unpack(readings)  # validates distinct locations
    errors = []
    for i, (point, value) in enumerate(readings):
        rest = [r for j, r in enumerate(readings) if j != i]
        pred = idw_estimate(point.latitude, point.longitude, rest, power)
        errors.append(float(pred) - value)
    return math.sqrt(sum(e * e for e in errors) / len(errors))


def grid_axes(bbox: BoundingBox, resolution_km: float) -> tuple[np.ndarray, np.ndarray]:
    if resolution_km <= 0:
        raise ValueError("resolution must be positive")
    dlat = resolution_km / KM_PER_DEG_LAT
    mid = math.radians((bbox.south + bbox.north) / 2)
    dlon = resolution_km / (KM_PER_DEG_LAT * max(math.cos(mid), 1e-6))
    rows = int(math.floor((bbox.north - bbox.south) / dlat + 1e-9)) + 1
    cols = int(math.floor((bbox.east - bbox.west) / dlon + 1e-9)) + 1
    return bbox.south + dlat * np.arange(rows), bbox.west + dlon * np.arange(cols)


def idw_field(
    readings: Sequence[Reading],
    bbox: BoundingBox,
    resolution_km: float = 0.1,
    power: float = 2.0,
) -> PollutionField:
    """Mean field over ``bbox`` sampled every ``resolution_km``.

    ``loocv_rmse`` is ``None`` when fewer than two readings exist.
    """
    _unpack(readings)
    lats, lons = grid_axes(bbox, resolution_km)
    glat, glon = np.meshgrid(lats, lons, indexing="ij")
    values = idw_estimate(glat, glon, readings, power)
    rmse = loocv_error(readings, power) if len(readings) >= 2 else None
    return PollutionField(lats, lons, values, rmse)
