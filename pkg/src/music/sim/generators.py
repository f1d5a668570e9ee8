"""Synthetic sensor readings and camera frames."""

from __future__ import annotations

import base64
import io
import math
import random
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from PIL import Image

from music.analytics.geo import GeoPoint, haversine_km
from music.protocol import canonical_json


@dataclass(frozen=True)
class Bump:
    center: GeoPoint
    amplitude: float
    sigma_km: float


@dataclass(frozen=True)
class PollutionModel:
    """Background level plus Gaussian bumps, sampled with white noise."""

    base: float = 80.0
    bumps: tuple[Bump, ...] = ()
    noise_sd: float = 2.0

    def mean_at(self, p: GeoPoint) -> float:
        v = self.base
        for b in self.bumps:
            d = haversine_km(p, b.center)
            v += b.amplitude * math.exp(-(d * d) / (2 * b.sigma_km * b.sigma_km))
        return v

    def sample(self, p: GeoPoint, rng: random.Random) -> float:
        return max(0.0, self.mean_at(p) + rng.gauss(0.0, self.noise_sd))


@dataclass(frozen=True)
class Waveform:
    amplitude: float = 1.5
    frequency_hz: float = 0.5


@dataclass
class SampleContext:
    t: float
    position: GeoPoint
    heading: float
    rng: random.Random
    pollution: PollutionModel = field(default_factory=PollutionModel)
    waveform: Waveform = field(default_factory=Waveform)


def _values(sensor: str, ctx: SampleContext) -> dict:
    rng = ctx.rng
    if sensor == "GPS":
        return {"latitude": ctx.position.latitude, "longitude": ctx.position.longitude}
    if sensor == "Accelerometer":
        phase = 2 * math.pi * ctx.waveform.frequency_hz * ctx.t
        a = ctx.waveform.amplitude
        return {
            "x": round(a * math.sin(phase) + rng.gauss(0, 0.05), 4),
            "y": round(a * math.cos(phase) + rng.gauss(0, 0.05), 4),
            "z": round(9.81 + rng.gauss(0, 0.05), 4),
        }
    if sensor == "Compass":
        return {"value": round((ctx.heading + rng.gauss(0, 2.0)) % 360.0, 2)}
    if sensor == "AirQuality":
        return {"value": round(ctx.pollution.sample(ctx.position, rng), 3)}
    if sensor == "PM2.5":
        return {"value": round(max(0.0, 0.6 * ctx.pollution.sample(ctx.position, rng)), 3)}
    if sensor == "Humidity":
        return {"value": round(min(100.0, max(0.0, 55.0 + rng.gauss(0, 3.0))), 2)}
    return {"value": round(rng.random(), 4)}


def make_record(sensor: str, unit: str, ctx: SampleContext, target_bytes: int = 0) -> dict:
    """One sensor record, padded so its canonical JSON is ``target_bytes`` long when possible."""
    rec = {"measurement_unit": unit, "name": sensor, "timestamp": int(round(ctx.t * 1000))}
    rec.update(_values(sensor, ctx))
    size = len(canonical_json(rec))
    overhead = len(',"padding":""')
    if target_bytes > size + overhead:
        rec["padding"] = "0" * (target_bytes - size - overhead)
    return rec


def synthetic_image(dirt_fraction: float, rng: random.Random, size: int = 32) -> bytes:
    """PNG of a mid-grey scene with ``dirt_fraction`` of its pixels dark."""
    if not 0 <= dirt_fraction <= 1:
        raise ValueError("dirt_fraction must lie in [0, 1]")
    n = size * size
    dirty = round(dirt_fraction * n)
    lum = np.full(n, 128, dtype=np.uint8)
    idx = rng.sample(range(n), dirty)
    lum[idx] = 20
    buf = io.BytesIO()
    Image.fromarray(lum.reshape(size, size), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def encode_image(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def heading_deg(a: GeoPoint, b: GeoPoint) -> float:
    if a == b:
        return 0.0
    lat1, lat2 = math.radians(a.latitude), math.radians(b.latitude)
    dlon = math.radians(b.longitude - a.longitude)
    y = math.sin(dlon) * math.cos(lat2)
    x = math.cos(lat1) * math.sin(lat2) - math.sin(lat1) * math.cos(lat2) * math.cos(dlon)
    return math.degrees(math.atan2(y, x)) % 360.0


def mean_position(points: Sequence[GeoPoint]) -> GeoPoint:
    return GeoPoint(sum(p.latitude for p in points) / len(points), sum(p.longitude for p in points) / len(points))
