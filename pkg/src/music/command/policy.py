from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from music.protocol import SensorSetting


@dataclass(frozen=True)
class Directive:
    """What one node should be doing under a sensing policy."""

    active: bool = False
    sensors: tuple[SensorSetting, ...] = ()
    capture_image: bool = False

    def __post_init__(self):
        for s in self.sensors:
            if not s.frequency > 0:
                raise ValueError(f"directive frequency for {s.name} must be > 0")
        # canonical order so equal directives compare equal
        object.__setattr__(self, "sensors", tuple(sorted(self.sensors, key=lambda s: s.name)))

    def sensing_equal(self, other: "Directive") -> bool:
        return self.active == other.active and self.sensors == other.sensors


INACTIVE = Directive()


@dataclass(frozen=True)
class SensingPolicy:
    policy_id: int
    directives: Mapping[str, Directive] = field(default_factory=dict)
    # free-form analytics outputs (e.g. loocv error); not part of equality
    annotations: Mapping[str, object] = field(default_factory=dict, compare=False)

    def get(self, imei: str) -> Directive | None:
        return self.directives.get(imei)

    def active_nodes(self) -> list[str]:
        return sorted(k for k, d in self.directives.items() if d.active)
