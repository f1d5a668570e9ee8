"""A simulated edge device.

The node only produces messages; a transport (see :mod:`music.sim.network`
and :mod:`music.sim.tcp`) moves them to the controller and reports back
through :meth:`EdgeNode.mark_sent`.  Samples are generated lazily: every
call to :meth:`EdgeNode.step` or :meth:`EdgeNode.handle_command` first
fills in all samples due strictly before the current time.
"""

from __future__ import annotations

import bisect
import logging
import random
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Mapping

from music.analytics.geo import GeoPoint
from music.command.sensors import DEFAULT_SENSOR_TABLE, SensorSpec, clamp_frequency
from music.protocol import (
    CommandMsg,
    CommandType,
    ImageDataMsg,
    KeepAliveMsg,
    SensorDataMsg,
    SensorSession,
    SensorSetting,
    encode,
    message_kind,
)
from music.sim.battery import Battery, BatteryModel
from music.sim.generators import (
    PollutionModel,
    SampleContext,
    Waveform,
    encode_image,
    heading_deg,
    make_record,
    synthetic_image,
)
from music.sim.mobility import Mobility

log = logging.getLogger(__name__)

LONG_SESSION_S = 600.0


@dataclass(frozen=True)
class EdgeNodeConfig:
    imei: str
    mobility: Mobility
    sensors: tuple[str, ...]
    sensor_table: Mapping[str, SensorSpec] = field(default_factory=lambda: DEFAULT_SENSOR_TABLE)
    battery: BatteryModel = field(default_factory=BatteryModel)
    keepalive_period_s: float = 10.0
    # (t, dirt fraction) steps for synthetic camera frames
    dirt: tuple[tuple[float, float], ...] = ((0.0, 0.0),)
    pollution: PollutionModel = field(default_factory=PollutionModel)
    waveform: Waveform = field(default_factory=Waveform)
    # [start, end) windows during which periodic keepalives are not sent
    keepalive_mute: tuple[tuple[float, float], ...] = ()
    churn_at: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.imei:
            raise ValueError("imei must be non-empty")
        if self.keepalive_period_s <= 0:
            raise ValueError("keepalive_period_s must be > 0")

    def dirt_at(self, t: float) -> float:
        times = [s for s, _ in self.dirt]
        i = bisect.bisect_right(times, t) - 1
        return self.dirt[max(i, 0)][1]


@dataclass
class OutFrame:
    channel: str        # "data" or "cmd"
    kind: str
    frame: bytes
    samples: int = 0


@dataclass
class _Session:
    settings: tuple[SensorSetting, ...]
    started: float
    next_index: dict[str, int]
    records: dict[str, list[dict]]
    stopped: float | None = None

    def count(self) -> int:
        return sum(len(r) for r in self.records.values())


class EdgeNode:
    def __init__(self, cfg: EdgeNodeConfig, rng: random.Random, start: float):
        self.cfg = cfg
        self.imei = cfg.imei
        self.rng = rng
        self.battery = Battery(cfg.battery)
        self.session: _Session | None = None
        self.pending: list[_Session] = []
        self.outbox: deque[OutFrame] = deque()
        self.last_step = start
        self.next_keepalive = start + cfg.keepalive_period_s
        self.address = ""
        self.connected = False
        self.generated = 0
        self.delivered = 0
        self.ignored_starts = 0
        self.ignored_commands = 0
        self.long_sessions = 0
        self.sessions_completed = 0
        self.commands_rx: Counter = Counter()
        self.bytes_rx = 0
        self.messages_tx: Counter = Counter()
        self.bytes_tx: Counter = Counter()
        self.died_at: float | None = None

    # -- helpers -------------------------------------------------------------

    @property
    def alive(self) -> bool:
        return not self.battery.empty

    @property
    def recording(self) -> bool:
        return self.session is not None

    def position(self, t: float) -> GeoPoint:
        return self.cfg.mobility.position(t)

    def buffered(self) -> int:
        n = sum(s.count() for s in self.pending) + (self.session.count() if self.session else 0)
        return n + sum(f.samples for f in self.outbox)

    def _queue(self, msg, channel: str = "data", samples: int = 0) -> None:
        self.outbox.append(OutFrame(channel, message_kind(msg), encode(msg), samples))

    def _keepalive(self, t: float) -> KeepAliveMsg:
        p = self.position(t)
        return KeepAliveMsg(
            imei=self.imei,
            ip=self.address.rsplit(":", 1)[0],
            battery_life=self.battery.percent(),
            latitude=p.latitude,
            longitude=p.longitude,
            sensors=tuple(self.cfg.sensors),
        )

    def _muted(self, t: float) -> bool:
        return any(a <= t < b for a, b in self.cfg.keepalive_mute)

    def _record_until(self, now: float) -> None:
        s = self.session
        if s is None or not self.alive:
            return
        n = 0
        for setting in s.settings:
            spec = self.cfg.sensor_table[setting.name]
            period = 1.0 / setting.frequency
            i = s.next_index[setting.name]
            out = s.records[setting.name]
            while s.started + i * period < now and not self.battery.empty:
                t = s.started + i * period
                pos = self.position(t)
                ctx = SampleContext(
                    t, pos, heading_deg(self.position(t - 1.0), pos), self.rng,
                    self.cfg.pollution, self.cfg.waveform,
                )
                out.append(make_record(setting.name, spec.unit, ctx, spec.bytes_per_sample))
                i += 1
                n += 1
                self.battery.sampled(1)
                self._check_battery(t)
            s.next_index[setting.name] = i
        self.generated += n

    def _check_battery(self, now: float) -> None:
        if self.battery.empty and self.died_at is None:
            self.died_at = now
            log.info("node %s battery empty at %.3f; going silent", self.imei, now)

    # -- transport hooks -----------------------------------------------------

    def connect(self, now: float, address: str) -> None:
        """Called by the transport once both connections are up; queues the hello on the command link."""
        self.address = address
        self.connected = True
        if self.alive:
            self._queue(self._keepalive(now), channel="cmd")

    def disconnect(self) -> None:
        self.connected = False

    def mark_sent(self, item: OutFrame) -> None:
        self.delivered += item.samples
        self.messages_tx[item.kind] += 1
        self.bytes_tx[item.kind] += len(item.frame)
        self.battery.transmitted(len(item.frame))

    def drop_keepalives(self) -> None:
        """Keepalives are not worth queueing across a disconnect."""
        self.outbox = deque(f for f in self.outbox if f.kind != "keepalive")

    # -- time ------------------------------------------------------------------

    def step(self, now: float) -> None:
        if not self.alive:
            return
        if now < self.last_step:
            raise ValueError("node time cannot go backwards")
        self._record_until(now)
        self.battery.elapse(now - self.last_step)
        self.last_step = now
        self._check_battery(now)
        while self.next_keepalive <= now:
            t = self.next_keepalive
            self.next_keepalive += self.cfg.keepalive_period_s
            if self.alive and self.connected and not self._muted(t):
                self._queue(self._keepalive(t))

    # -- commands ------------------------------------------------------------------

    def handle_command(self, cmd: CommandMsg, now: float) -> None:
        if not self.alive:
            self.ignored_commands += 1
            return
        self._record_until(now)
        self.commands_rx[cmd.message_type.value] += 1
        kind = cmd.message_type
        if kind is CommandType.START:
            if self.session is not None:
                log.warning("node %s: START while recording ignored", self.imei)
                self.ignored_starts += 1
                return
            settings = []
            for s in cmd.sensors:
                spec = self.cfg.sensor_table.get(s.name)
                if spec is None or s.name not in self.cfg.sensors:
                    log.warning("node %s has no sensor %r", self.imei, s.name)
                    continue
                settings.append(SensorSetting(s.name, clamp_frequency(s.frequency, spec)))
            self.session = _Session(
                tuple(settings), now, {s.name: 0 for s in settings}, {s.name: [] for s in settings}
            )
        elif kind is CommandType.STOP:
            if self.session is None:
                self.ignored_commands += 1
                return
            self.session.stopped = now
            if now - self.session.started > LONG_SESSION_S:
                self.long_sessions += 1
            self.pending.append(self.session)
            self.session = None
        elif kind is CommandType.SEND:
            self._send(now, cmd.compress)
        elif kind is CommandType.CAPTURE_IMAGE:
            p = self.position(now)
            png = synthetic_image(self.cfg.dirt_at(now), self.rng)
            self._queue(ImageDataMsg(self.imei, p.latitude, p.longitude, encode_image(png)))

    def _send(self, now: float, compress: bool) -> None:
        p = self.position(now)
        data: dict[str, list[SensorSession]] = {}
        n = 0
        for sess in self.pending:
            for name, recs in sess.records.items():
                if recs:
                    data.setdefault(name, []).append(SensorSession(name, recs))
                    n += len(recs)
        if n:
            self._queue(SensorDataMsg(self.imei, p.latitude, p.longitude, data, compressed=compress), samples=n)
        self.sessions_completed += len(self.pending)
        self.pending = []
        self._queue(SensorDataMsg(self.imei, p.latitude, p.longitude, {}))

    def open_session_age(self, now: float) -> float:
        return now - self.session.started if self.session else 0.0
