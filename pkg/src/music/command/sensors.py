"""Sensor capability table and frequency clamping.

The table is a mapping ``name -> SensorSpec``.  On disk (YAML or JSON)::

    AirQuality:
      max_frequency: 1.0        # Hz, hardware fidelity limit
      default_frequency: 1.0    # Hz, used by the default duty cycle
      bytes_per_sample: 350     # encoded record size, for accounting
      unit: micrograms per cubic meter
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping

import yaml

from music.errors import ConfigError, InvalidFrequency


@dataclass(frozen=True)
class SensorSpec:
    name: str
    max_frequency: float
    default_frequency: float
    bytes_per_sample: int = 64
    unit: str = ""

    def __post_init__(self):
        if not 0 < self.default_frequency <= self.max_frequency:
            raise ConfigError(
                f"sensor {self.name}: need 0 < default_frequency <= max_frequency "
                f"(got {self.default_frequency}, {self.max_frequency})"
            )
        if self.bytes_per_sample <= 0:
            raise ConfigError(f"sensor {self.name}: bytes_per_sample must be positive")


# Air-quality records are sized so that 1 Hz for a day is ~30 MB (350 B x 86400).
AIR_QUALITY_RECORD_BYTES = 350

DEFAULT_SENSOR_TABLE: dict[str, SensorSpec] = {
    s.name: s
    for s in (
        SensorSpec("Accelerometer", 100.0, 20.0, 140, "meters per second squared"),
        SensorSpec("AirQuality", 1.0, 1.0, AIR_QUALITY_RECORD_BYTES, "micrograms per cubic meter"),
        SensorSpec("GPS", 1.0, 1.0, 140, "degrees"),
        SensorSpec("Compass", 50.0, 10.0, 110, "degrees"),
        SensorSpec("PM2.5", 1.0, 1.0, 120, "micrograms per cubic meter"),
        SensorSpec("Humidity", 1.0, 1.0, 110, "percent"),
    )
}


def clamp_frequency(requested: float, spec: SensorSpec) -> float:
    """Sensors never sample faster than their hardware allows."""
    if not requested > 0:
        raise InvalidFrequency(f"{spec.name}: requested frequency must be > 0, got {requested}")
    return min(requested, spec.max_frequency)


_SPEC_KEYS = {"max_frequency", "default_frequency", "bytes_per_sample", "unit"}


def sensor_table_from_mapping(data: Mapping, base: Mapping[str, SensorSpec] | None = None) -> dict[str, SensorSpec]:
    """Build a table from plain data, overriding entries of ``base`` field by field."""
    table = dict(DEFAULT_SENSOR_TABLE if base is None else base)
    if not isinstance(data, Mapping):
        raise ConfigError("sensor table must be a mapping of name -> fields")
    for name, fields in data.items():
        if not isinstance(fields, Mapping):
            raise ConfigError(f"sensor {name}: expected a mapping")
        unknown = set(fields) - _SPEC_KEYS
        if unknown:
            raise ConfigError(f"sensor {name}: unknown keys {sorted(unknown)}")
        try:
            if name in table:
                table[name] = replace(table[name], **fields)
            else:
                table[name] = SensorSpec(name=str(name), **fields)
        except TypeError as exc:
            raise ConfigError(f"sensor {name}: {exc}") from None
    return table


def load_sensor_table(path: str | Path) -> dict[str, SensorSpec]:
    text = Path(path).read_text(encoding="utf-8")
    data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    return sensor_table_from_mapping(data or {})
