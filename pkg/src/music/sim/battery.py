from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class BatteryModel:
    """Linear drain: a base rate plus per-sample and per-KiB-transmitted costs (all in percent)."""

    capacity: float = 100.0
    base_per_hour: float = 0.5
    per_sample: float = 0.0005
    per_kib_tx: float = 0.01

    def __post_init__(self):
        if not 0 <= self.capacity <= 100:
            raise ValueError("battery capacity must lie in [0, 100]")
        if min(self.base_per_hour, self.per_sample, self.per_kib_tx) < 0:
            raise ValueError("battery drain rates must be >= 0")


class Battery:
    def __init__(self, model: BatteryModel = BatteryModel()):
        self.model = model
        self.level = model.capacity

    @property
    def empty(self) -> bool:
        return self.level <= 0.0

    def _drain(self, amount: float) -> None:
        self.level = max(0.0, self.level - amount)

    def elapse(self, seconds: float) -> None:
        self._drain(self.model.base_per_hour * seconds / 3600.0)

    def sampled(self, n: int) -> None:
        self._drain(self.model.per_sample * n)

    def transmitted(self, nbytes: int) -> None:
        self._drain(self.model.per_kib_tx * nbytes / 1024.0)

    def percent(self) -> int:
        """Integer percentage as reported in keepalives (rounded up, so only a dead battery reads 0)."""
        return min(100, max(0, math.ceil(self.level - 1e-9)))
