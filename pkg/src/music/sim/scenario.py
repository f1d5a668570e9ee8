"""Scenario files.

A scenario is a YAML mapping.  All times are seconds relative to ``start``.

.. code-block:: yaml

    name: delhi5
    seed: 7
    start: 2024-01-01T00:00:00Z     # sim epoch (default shown)
    duration_s: 1800
    tick_s: 5                       # policy tick and simulation step
    acceleration: null              # sim seconds per wall second; null = unpaced
    keepalive_period_s: 10
    liveness_timeout_s: 30
    policy:
      name: spatial_coverage        # see ``music.policy.policy_names()``
      params: {separation_km: 0.5}  # any PolicyParams field
      segments: segments.csv        # hotspot road segments, relative to this file
    sensor_table:                   # overrides of the default sensor table
      AirQuality: {bytes_per_sample: 350}
    battery: {base_per_hour: 0.5, per_sample: 0.0005, per_kib_tx: 0.01}
    pollution:
      base: 80
      noise_sd: 2
      bumps: [{lat: 28.55, lon: 77.19, amplitude: 60, sigma_km: 0.8}]
    outages: [[600, 660]]           # controller unreachable
    nodes:
      - imei: "353323062860043"
        sensors: [AirQuality]
        battery: 80                 # start level, or a mapping like the fleet default
        position: [28.5449, 77.1928]          # or one of:
        # waypoints: [[0, lat, lon], [300, lat, lon]]   equal times = jump
        # shuttle: {start: [lat, lon], end: [lat, lon], speeds: [[0, 20], [1200, 4]]}
        # trace: {file: bus.csv, vehicle: M15-1}
        keepalive_mute: [[100, 200]]
        churn_at: [30, 95]
        dirt: [[0, 0.0], [600, 0.5]]          # camera dirt fraction steps
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from music.analytics.geo import GeoPoint
from music.analytics.io import parse_timestamp, read_segments, read_trace
from music.command.sensors import DEFAULT_SENSOR_TABLE, SensorSpec, sensor_table_from_mapping
from music.errors import ConfigError, MusicError, ScenarioError
from music.policy.base import PolicyParams, policy_names
from music.sim.battery import BatteryModel
from music.sim.generators import Bump, PollutionModel, Waveform
from music.sim.mobility import Shuttle, Static, Waypoints
from music.sim.node import EdgeNodeConfig

DEFAULT_START = parse_timestamp("2024-01-01T00:00:00Z")


@dataclass(frozen=True)
class Scenario:
    name: str
    nodes: tuple[EdgeNodeConfig, ...] = ()
    seed: int = 0
    start: float = DEFAULT_START
    duration_s: float = 300.0
    tick_s: float = 5.0
    acceleration: float | None = None
    keepalive_period_s: float = 10.0
    liveness_timeout_s: float = 30.0
    policy: str = "default"
    params: PolicyParams = field(default_factory=PolicyParams)
    sensor_table: Mapping[str, SensorSpec] = field(default_factory=lambda: DEFAULT_SENSOR_TABLE)
    outages: tuple[tuple[float, float], ...] = ()
    source: str = "<memory>"

    def __post_init__(self):
        if self.duration_s < 0 or self.tick_s <= 0:
            raise ConfigError("duration_s must be >= 0 and tick_s > 0")
        imeis = [n.imei for n in self.nodes]
        if len(set(imeis)) != len(imeis):
            raise ConfigError("node imeis must be unique")

    @property
    def end(self) -> float:
        return self.start + self.duration_s

    def with_seed(self, seed: int) -> "Scenario":
        return dataclasses.replace(self, seed=seed)


# -- YAML with line numbers ----------------------------------------------------

def _scalar(node: yaml.Node) -> Any:
    return yaml.safe_load(yaml.serialize(node))


class _Doc:
    """Plain data plus the source line of every mapping key and sequence item."""

    def __init__(self, source: str):
        self.source = source
        self.lines: dict[tuple, int] = {}

    def convert(self, node: yaml.Node, path: tuple = ()) -> Any:
        self.lines.setdefault(path, node.start_mark.line + 1)
        if isinstance(node, yaml.MappingNode):
            out = {}
            for k, v in node.value:
                key = _scalar(k)
                self.lines[path + (key,)] = k.start_mark.line + 1
                out[key] = self.convert(v, path + (key,))
            return out
        if isinstance(node, yaml.SequenceNode):
            return [self.convert(v, path + (i,)) for i, v in enumerate(node.value)]
        return _scalar(node)

    def error(self, path: tuple, msg: str) -> ScenarioError:
        where = ".".join(str(p) for p in path)
        while path and path not in self.lines:
            path = path[:-1]
        return ScenarioError(f"{where}: {msg}" if where else msg, self.source, self.lines.get(path))


def _compose(text: str, source: str) -> tuple[Any, _Doc]:
    doc = _Doc(source)
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(f"invalid YAML: {getattr(exc, 'problem', exc)}", source,
                            mark.line + 1 if mark else None) from None
    if root is None:
        raise ScenarioError("empty scenario", source, 1)
    return doc.convert(root), doc


class _Reader:
    def __init__(self, doc: _Doc, base_dir: Path):
        self.doc = doc
        self.base_dir = base_dir

    def fail(self, path, msg):
        return self.doc.error(tuple(path), msg)

    def number(self, value, path, positive=False, allow_zero=True) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise self.fail(path, f"expected a number, got {value!r}")
        if positive and (value < 0 or (value == 0 and not allow_zero)):
            raise self.fail(path, f"must be {'>= 0' if allow_zero else '> 0'}")
        return float(value)

    def point(self, value, path) -> GeoPoint:
        if not isinstance(value, list) or len(value) != 2:
            raise self.fail(path, "expected [latitude, longitude]")
        try:
            return GeoPoint(self.number(value[0], path + [0]), self.number(value[1], path + [1]))
        except ValueError as exc:
            raise self.fail(path, str(exc)) from None

    def mapping(self, value, path, allowed: set[str]) -> dict:
        if not isinstance(value, dict):
            raise self.fail(path, "expected a mapping")
        for key in value:
            if key not in allowed:
                raise self.fail(path + [key], f"unknown key (allowed: {', '.join(sorted(allowed))})")
        return value

    def windows(self, value, path, start) -> tuple[tuple[float, float], ...]:
        if not isinstance(value, list):
            raise self.fail(path, "expected a list of [start, end]")
        out = []
        for i, w in enumerate(value):
            if not isinstance(w, list) or len(w) != 2:
                raise self.fail(path + [i], "expected [start, end]")
            a, b = (self.number(x, path + [i]) for x in w)
            if b < a:
                raise self.fail(path + [i], "end before start")
            out.append((start + a, start + b))
        return tuple(out)

    def battery(self, value, path, base: BatteryModel) -> BatteryModel:
        try:
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                return dataclasses.replace(base, capacity=float(value))
            raw = self.mapping(value, path, {f.name for f in dataclasses.fields(BatteryModel)})
            return dataclasses.replace(base, **{k: self.number(v, path + [k]) for k, v in raw.items()})
        except ValueError as exc:
            raise self.fail(path, str(exc)) from None

    def pollution(self, value, path) -> PollutionModel:
        raw = self.mapping(value, path, {"base", "noise_sd", "bumps"})
        bumps = []
        for i, b in enumerate(raw.get("bumps", [])):
            bp = path + ["bumps", i]
            b = self.mapping(b, bp, {"lat", "lon", "amplitude", "sigma_km"})
            try:
                bumps.append(Bump(
                    GeoPoint(self.number(b["lat"], bp), self.number(b["lon"], bp)),
                    self.number(b["amplitude"], bp), self.number(b["sigma_km"], bp, positive=True, allow_zero=False),
                ))
            except KeyError as exc:
                raise self.fail(bp, f"missing {exc.args[0]!r}") from None
        return PollutionModel(
            self.number(raw.get("base", 80.0), path + ["base"]),
            tuple(bumps),
            self.number(raw.get("noise_sd", 2.0), path + ["noise_sd"], positive=True),
        )

    def params(self, raw, path, segments) -> PolicyParams:
        raw = self.mapping(raw or {}, path, PolicyParams.field_names() - {"segments"})
        kwargs = {}
        for key, value in raw.items():
            if key == "freq_bounds":
                fb = self.mapping(value, path + [key], set(value) if isinstance(value, dict) else set())
                bounds = {}
                for name, pair in fb.items():
                    if not isinstance(pair, list) or len(pair) != 2:
                        raise self.fail(path + [key, name], "expected [f_min, f_max]")
                    bounds[name] = tuple(self.number(x, path + [key, name]) for x in pair)
                kwargs[key] = bounds
            elif key in ("aux_sensors", "sensors"):
                if not isinstance(value, list) or not all(isinstance(x, str) for x in value):
                    raise self.fail(path + [key], "expected a list of sensor names")
                kwargs[key] = tuple(value)
            else:
                kwargs[key] = value
        kwargs["segments"] = tuple(segments)
        try:
            return PolicyParams(**kwargs)
        except (ConfigError, TypeError) as exc:
            raise self.fail(path, str(exc)) from None

    def relative(self, value, path) -> Path:
        if not isinstance(value, str):
            raise self.fail(path, "expected a file path")
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def mobility(self, node: dict, path, start: float):
        kinds = [k for k in ("position", "waypoints", "shuttle", "trace") if k in node]
        if len(kinds) != 1:
            raise self.fail(path, "exactly one of position, waypoints, shuttle, trace is required")
        kind = kinds[0]
        value = node[kind]
        kp = path + [kind]
        if kind == "position":
            return Static(self.point(value, kp))
        if kind == "waypoints":
            if not isinstance(value, list) or not value:
                raise self.fail(kp, "expected a non-empty list of [t, lat, lon]")
            pts = []
            for i, w in enumerate(value):
                if not isinstance(w, list) or len(w) != 3:
                    raise self.fail(kp + [i], "expected [t, lat, lon]")
                pts.append((start + self.number(w[0], kp + [i]), self.point(w[1:], kp + [i])))
            try:
                return Waypoints(pts)
            except ValueError as exc:
                raise self.fail(kp, str(exc)) from None
        if kind == "shuttle":
            raw = self.mapping(value, kp, {"start", "end", "speeds"})
            speeds = raw.get("speeds")
            if not isinstance(speeds, list) or not speeds:
                raise self.fail(kp + ["speeds"], "expected a list of [t, km/h]")
            steps = []
            for i, s in enumerate(speeds):
                if not isinstance(s, list) or len(s) != 2:
                    raise self.fail(kp + ["speeds", i], "expected [t, km/h]")
                steps.append((start + self.number(s[0], kp + ["speeds", i]),
                              self.number(s[1], kp + ["speeds", i], positive=True)))
            try:
                return Shuttle(self.point(raw.get("start"), kp + ["start"]),
                               self.point(raw.get("end"), kp + ["end"]), steps, start)
            except ValueError as exc:
                raise self.fail(kp, str(exc)) from None
        raw = self.mapping(value, kp, {"file", "vehicle"})
        try:
            load = read_trace(self.relative(raw.get("file"), kp + ["file"]))
        except (MusicError, OSError) as exc:
            raise self.fail(kp, f"cannot read trace: {exc}") from None
        vehicle = str(raw.get("vehicle", ""))
        fixes = [f for f in load.fixes if f.vehicle_id == vehicle]
        if not fixes:
            raise self.fail(kp, f"trace has no fixes for vehicle {vehicle!r}")
        return Waypoints([(f.timestamp, f.point) for f in fixes])


_NODE_KEYS = {
    "imei", "sensors", "battery", "position", "waypoints", "shuttle", "trace",
    "keepalive_mute", "churn_at", "dirt", "keepalive_period_s", "waveform",
}
_TOP_KEYS = {
    "name", "description", "seed", "start", "duration_s", "tick_s", "acceleration",
    "keepalive_period_s", "liveness_timeout_s", "policy", "sensor_table", "battery",
    "pollution", "outages", "nodes",
}


def parse_scenario(text: str, source: str = "<string>", base_dir: Path | None = None,
                   seed: int | None = None) -> Scenario:
    data, doc = _compose(text, source)
    r = _Reader(doc, base_dir or Path("."))
    data = r.mapping(data, [], _TOP_KEYS)

    start = data.get("start", DEFAULT_START)
    if isinstance(start, str):
        try:
            start = parse_timestamp(start)
        except ValueError as exc:
            raise r.fail(["start"], str(exc)) from None
    elif hasattr(start, "timestamp"):
        start = start.timestamp()
    start = r.number(start, ["start"])

    try:
        table = sensor_table_from_mapping(data.get("sensor_table", {}))
    except ConfigError as exc:
        raise r.fail(["sensor_table"], str(exc)) from None

    policy_raw = r.mapping(data.get("policy", {"name": "default"}), ["policy"], {"name", "params", "segments"})
    policy_name = policy_raw.get("name", "default")
    if policy_name not in policy_names():
        raise r.fail(["policy", "name"], f"unknown policy {policy_name!r} (known: {', '.join(policy_names())})")
    segments = ()
    if "segments" in policy_raw:
        try:
            segments = read_segments(r.relative(policy_raw["segments"], ["policy", "segments"]))
        except (MusicError, OSError) as exc:
            raise r.fail(["policy", "segments"], f"cannot read segments: {exc}") from None
    params = r.params(policy_raw.get("params"), ["policy", "params"], segments)

    fleet_battery = r.battery(data.get("battery", {}), ["battery"], BatteryModel())
    pollution = r.pollution(data.get("pollution", {}), ["pollution"])
    ka_period = r.number(data.get("keepalive_period_s", 10.0), ["keepalive_period_s"], positive=True, allow_zero=False)

    nodes_raw = data.get("nodes", [])
    if not isinstance(nodes_raw, list):
        raise r.fail(["nodes"], "expected a list of nodes")
    nodes = []
    seen = set()
    for i, raw in enumerate(nodes_raw):
        path = ["nodes", i]
        raw = r.mapping(raw, path, _NODE_KEYS)
        imei = raw.get("imei")
        if not isinstance(imei, (str, int)) or isinstance(imei, bool) or not str(imei):
            raise r.fail(path + ["imei"] if "imei" in raw else path, "imei must be a non-empty string")
        imei = str(imei)
        if imei in seen:
            raise r.fail(path + ["imei"], f"duplicate imei {imei}")
        seen.add(imei)
        sensors = raw.get("sensors", [])
        if not isinstance(sensors, list) or not all(isinstance(s, str) for s in sensors):
            raise r.fail(path + ["sensors"], "expected a list of sensor names")
        for j, s in enumerate(sensors):
            if s not in table:
                raise r.fail(path + ["sensors", j], f"sensor {s!r} is not in the sensor table")
        dirt = raw.get("dirt", 0.0)
        if isinstance(dirt, list):
            steps = []
            for j, d in enumerate(dirt):
                if not isinstance(d, list) or len(d) != 2:
                    raise r.fail(path + ["dirt", j], "expected [t, fraction]")
                steps.append((start + r.number(d[0], path + ["dirt", j]), r.number(d[1], path + ["dirt", j])))
            dirt = tuple(sorted(steps))
        else:
            dirt = ((start, r.number(dirt, path + ["dirt"])),)
        if any(not 0 <= d <= 1 for _, d in dirt):
            raise r.fail(path + ["dirt"], "dirt fractions must lie in [0, 1]")
        churn = raw.get("churn_at", [])
        if not isinstance(churn, list):
            raise r.fail(path + ["churn_at"], "expected a list of times")
        wave = r.mapping(raw.get("waveform", {}), path + ["waveform"], {"amplitude", "frequency_hz"})
        nodes.append(EdgeNodeConfig(
            imei=imei,
            mobility=r.mobility(raw, path, start),
            sensors=tuple(sensors),
            sensor_table=table,
            battery=r.battery(raw.get("battery", {}), path + ["battery"], fleet_battery),
            keepalive_period_s=r.number(raw.get("keepalive_period_s", ka_period), path + ["keepalive_period_s"],
                                        positive=True, allow_zero=False),
            dirt=dirt,
            pollution=pollution,
            waveform=Waveform(**{k: r.number(v, path + ["waveform", k]) for k, v in wave.items()}),
            keepalive_mute=r.windows(raw.get("keepalive_mute", []), path + ["keepalive_mute"], start),
            churn_at=tuple(start + r.number(t, path + ["churn_at", j]) for j, t in enumerate(churn)),
        ))

    acceleration = data.get("acceleration")
    if acceleration is not None:
        acceleration = r.number(acceleration, ["acceleration"], positive=True, allow_zero=False)
    raw_seed = data.get("seed", 0)
    if isinstance(raw_seed, bool) or not isinstance(raw_seed, int):
        raise r.fail(["seed"], "seed must be an integer")
    try:
        return Scenario(
            name=str(data.get("name", Path(source).stem)),
            nodes=tuple(nodes),
            seed=raw_seed if seed is None else seed,
            start=start,
            duration_s=r.number(data.get("duration_s", 300.0), ["duration_s"], positive=True),
            tick_s=r.number(data.get("tick_s", 5.0), ["tick_s"], positive=True, allow_zero=False),
            acceleration=acceleration,
            keepalive_period_s=ka_period,
            liveness_timeout_s=r.number(data.get("liveness_timeout_s", 30.0), ["liveness_timeout_s"],
                                        positive=True, allow_zero=False),
            policy=policy_name,
            params=params,
            sensor_table=table,
            outages=r.windows(data.get("outages", []), ["outages"], start),
            source=source,
        )
    except ConfigError as exc:
        raise ScenarioError(str(exc), source, 1) from None


def bundled_scenarios() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("music.scenarios").iterdir() if p.name.endswith(".yaml"))


def resolve_scenario_path(name_or_path: str | Path) -> Path:
    p = Path(name_or_path)
    if p.is_file():
        return p
    bundled = resources.files("music.scenarios") / f"{p.name.removesuffix('.yaml')}.yaml"
    if bundled.is_file():
        return Path(str(bundled))
    raise ScenarioError(f"no scenario file {str(name_or_path)!r} and no bundled scenario of that name "
                        f"(bundled: {', '.join(bundled_scenarios())})")


def load_scenario(name_or_path: str | Path, seed: int | None = None) -> Scenario:
    path = resolve_scenario_path(name_or_path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}", str(path)) from None
    return parse_scenario(text, str(path), path.parent, seed)
