"""Policy interface and registry.

A policy is any object with ``tick(ctx) -> SensingPolicy``.  Register new
ones by name so scenarios can select them::

    @register_policy("my_policy")
    class MyPolicy(Policy):
        def tick(self, ctx):
            ...
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from typing import Callable, Mapping

from music.analytics.traffic import RoadSegment
from music.command.compiler import default_settings
from music.command.policy import Directive, SensingPolicy
from music.command.sensors import DEFAULT_SENSOR_TABLE, SensorSpec
from music.controller.driver import NodeRecord, RegistrySnapshot
from music.controller.store import WindowView
from music.errors import ConfigError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PolicyParams:
    # spatial coverage
    separation_km: float = 0.5
    battery_floor: float = 15.0
    coverage_sensor: str = "AirQuality"
    idw_power: float = 2.0
    # hotspot
    alpha: float = 0.4
    k: int = 2
    ewma_lambda: float = 0.3
    camera_speed_fraction: float = 0.25
    freq_bounds: Mapping[str, tuple[float, float]] = field(default_factory=lambda: {"GPS": (0.2, 1.0)})
    hotspot_sensor: str = "GPS"
    hotspot_mode: str = "speed_drop"      # or "robust_outlier"
    outlier_cutoff: float = 3.0
    segments: tuple[RoadSegment, ...] = ()
    window_s: float = 600.0
    settle_s: float = 60.0
    snap_radius_km: float = 0.05
    deactivate_free_flow: bool = False
    # cleanliness
    dirt_threshold: float = 0.3
    aux_sensors: tuple[str, ...] = ("PM2.5", "Humidity")
    image_period_s: float = 300.0
    # sensors every directive runs; None = all the node reports
    sensors: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.separation_km <= 0:
            raise ConfigError("separation_km must be > 0")
        if not 0 < self.dirt_threshold < 1:
            raise ConfigError("dirt_threshold must lie in (0, 1)")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if not 0 < self.ewma_lambda <= 1:
            raise ConfigError("ewma_lambda must lie in (0, 1]")
        if not 0 < self.camera_speed_fraction < 1:
            raise ConfigError("camera_speed_fraction must lie in (0, 1)")
        for name, (lo, hi) in self.freq_bounds.items():
            if not 0 < lo <= hi:
                raise ConfigError(f"freq_bounds[{name}]: need 0 < f_min <= f_max")
        if self.hotspot_mode not in ("speed_drop", "robust_outlier"):
            raise ConfigError(f"unknown hotspot_mode {self.hotspot_mode!r}")

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


@dataclass(frozen=True)
class PolicyContext:
    snapshot: RegistrySnapshot
    now: float
    policy_id: int
    params: PolicyParams = field(default_factory=PolicyParams)
    sensor_table: Mapping[str, SensorSpec] = field(default_factory=lambda: DEFAULT_SENSOR_TABLE)
    previous: SensingPolicy | None = None

    @property
    def windows(self) -> Mapping[str, WindowView]:
        return self.snapshot.recent

    def alive_nodes(self) -> list[NodeRecord]:
        return self.snapshot.alive()

    def base_sensors(self, node: NodeRecord):
        names = node.sensors if self.params.sensors is None else [s for s in self.params.sensors if s in node.sensors]
        return default_settings(names, self.sensor_table)


class Policy:
    name = "base"

    def __init__(self, params: PolicyParams | None = None):
        self.params = params or PolicyParams()

    def tick(self, ctx: PolicyContext) -> SensingPolicy:
        raise NotImplementedError


_REGISTRY: dict[str, Callable[[PolicyParams], Policy]] = {}


def register_policy(name: str):
    def deco(factory):
        _REGISTRY[name] = factory
        if isinstance(factory, type):
            factory.name = name
        return factory
    return deco


def create_policy(name: str, params: PolicyParams | None = None) -> Policy:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown policy {name!r}; known: {', '.join(sorted(_REGISTRY))}") from None
    return factory(params or PolicyParams())


def policy_names() -> list[str]:
    return sorted(_REGISTRY)


@register_policy("default")
class DefaultPolicy(Policy):
    """Leaves every node on the built-in 20 s / 10 s duty cycle."""

    def tick(self, ctx):
        return SensingPolicy(ctx.policy_id, {})


@register_policy("always_on")
class AlwaysOnPolicy(Policy):
    """Every alive node senses continuously at default frequencies."""

    def tick(self, ctx):
        directives = {}
        for node in ctx.alive_nodes():
            sensors = ctx.base_sensors(node)
            directives[node.imei] = Directive(active=bool(sensors), sensors=sensors)
        return SensingPolicy(ctx.policy_id, directives)
