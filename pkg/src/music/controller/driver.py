"""The Driver: node registry, liveness, session tracking and command dispatch.

All mutation goes through one lock, one operation at a time.  Node records
are immutable and replaced wholesale, so :meth:`Driver.snapshot` only has to
copy a dict of references.
"""

from __future__ import annotations

import logging
import threading
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

from music.analytics.geo import GeoPoint
from music.controller.session import AwaitingSend, Idle, SessionState, TransitionError, apply_command, complete
from music.controller.store import DataStore, StoredEntry, WindowView
from music.errors import InvalidTransition, NodeDead, NodeNotFound, NodeUnreachable
from music.protocol import CommandMsg, DataMessage, ImageDataMsg, KeepAliveMsg, SensorDataMsg, encode

log = logging.getLogger(__name__)

DEFAULT_KEEPALIVE_PERIOD_S = 10.0
DEFAULT_LIVENESS_TIMEOUT_S = 30.0

CommandSink = Callable[[bytes], None]


@dataclass(frozen=True)
class NodeRecord:
    imei: str
    last_addr: str
    reported_ip: str
    last_seen: float
    battery: int
    location: GeoPoint
    sensors: tuple[str, ...]
    session: SessionState
    alive: bool = True
    registered_at: float = 0.0


@dataclass(frozen=True)
class RegistryDelta:
    record: NodeRecord
    created: bool = False
    revived: bool = False
    addr_changed: bool = False


@dataclass(frozen=True)
class DispatchResult:
    imei: str
    command: CommandMsg
    frame_bytes: int
    session: SessionState
    at: float


@dataclass(frozen=True)
class SessionComplete:
    imei: str
    at: float


@dataclass(frozen=True)
class NodeDied:
    imei: str
    at: float


@dataclass(frozen=True)
class RegistrySnapshot:
    taken_at: float
    nodes: Mapping[str, NodeRecord]
    recent: Mapping[str, WindowView] = field(default_factory=dict)

    def alive(self) -> list[NodeRecord]:
        return [self.nodes[k] for k in sorted(self.nodes) if self.nodes[k].alive]

    def __len__(self):
        return len(self.nodes)


class Driver:
    def __init__(
        self,
        store: DataStore | None = None,
        keepalive_period_s: float = DEFAULT_KEEPALIVE_PERIOD_S,
        liveness_timeout_s: float = DEFAULT_LIVENESS_TIMEOUT_S,
        clock: Callable[[], float] = time.time,
        send_timeout_s: float | None = None,
    ):
        if liveness_timeout_s <= 0 or keepalive_period_s <= 0:
            raise ValueError("keepalive period and liveness timeout must be positive")
        self.store = store if store is not None else DataStore()
        self.keepalive_period_s = keepalive_period_s
        self.liveness_timeout_s = liveness_timeout_s
        # A SEND whose data never arrives (command lost on a dying connection)
        # would otherwise park the session forever.
        self.send_timeout_s = liveness_timeout_s if send_timeout_s is None else send_timeout_s
        self.clock = clock
        self._lock = threading.RLock()
        self._nodes: dict[str, NodeRecord] = {}
        self._sinks: dict[str, CommandSink] = {}
        self._listeners: list[Callable[[object], None]] = []
        self.commands_sent: Counter = Counter()       # (imei, messageType) -> count
        self.command_bytes: Counter = Counter()       # imei -> bytes written
        self.suppressed: Counter = Counter()          # imei -> commands refused while dead
        self.samples_received: Counter = Counter()    # imei -> sensor records stored
        self.stalled_sends: Counter = Counter()       # imei -> sessions reset after an unanswered SEND

    # -- events ------------------------------------------------------------

    def subscribe(self, listener: Callable[[object], None]) -> None:
        self._listeners.append(listener)

    def _emit(self, events) -> None:
        for ev in events:
            for listener in list(self._listeners):
                try:
                    listener(ev)
                except Exception:
                    log.exception("event listener failed for %s", ev)

    # -- registry ----------------------------------------------------------

    def on_keepalive(self, msg: KeepAliveMsg, addr: str, now: float | None = None) -> RegistryDelta:
        now = self.clock() if now is None else now
        with self._lock:
            old = self._nodes.get(msg.imei)
            location = GeoPoint(msg.latitude, msg.longitude)
            if old is None:
                rec = NodeRecord(
                    imei=msg.imei,
                    last_addr=addr,
                    reported_ip=msg.ip,
                    last_seen=now,
                    battery=msg.battery_life,
                    location=location,
                    sensors=tuple(msg.sensors),
                    session=Idle(now),
                    alive=True,
                    registered_at=now,
                )
                log.info("node %s registered from %s", msg.imei, addr)
            else:
                rec = replace(
                    old,
                    last_addr=addr,
                    reported_ip=msg.ip,
                    last_seen=max(old.last_seen, now),
                    battery=msg.battery_life,
                    location=location,
                    sensors=tuple(msg.sensors),
                    alive=True,
                )
                if not old.alive:
                    log.info("node %s revived", msg.imei)
            self._nodes[msg.imei] = rec
        return RegistryDelta(
            rec,
            created=old is None,
            revived=old is not None and not old.alive,
            addr_changed=old is not None and old.last_addr != addr,
        )

    def attach_command_channel(self, imei: str, sink: CommandSink) -> None:
        with self._lock:
            self._sinks[imei] = sink

    def detach_command_channel(self, imei: str, sink: CommandSink | None = None) -> None:
        with self._lock:
            if sink is None or self._sinks.get(imei) is sink:
                self._sinks.pop(imei, None)

    def liveness_sweep(self, now: float | None = None) -> list[str]:
        now = self.clock() if now is None else now
        died = []
        with self._lock:
            for imei in sorted(self._nodes):
                rec = self._nodes[imei]
                if rec.alive and now - rec.last_seen > self.liveness_timeout_s:
                    rec = replace(rec, alive=False)
                    died.append(imei)
                s = rec.session
                if isinstance(s, AwaitingSend) and s.send_at is not None and now - s.send_at > self.send_timeout_s:
                    log.warning("node %s: no data %.0f s after SEND; session reset", imei, now - s.send_at)
                    rec = replace(rec, session=Idle(now))
                    self.stalled_sends[imei] += 1
                self._nodes[imei] = rec
        for imei in died:
            log.warning("node %s marked dead at %.3f", imei, now)
        self._emit(NodeDied(imei, now) for imei in died)
        return died

    def node(self, imei: str) -> NodeRecord:
        with self._lock:
            try:
                return self._nodes[imei]
            except KeyError:
                raise NodeNotFound(imei) from None

    def has_channel(self, imei: str) -> bool:
        with self._lock:
            return imei in self._sinks

    # -- commands ----------------------------------------------------------

    def dispatch(self, imei: str, cmd: CommandMsg, now: float | None = None) -> DispatchResult:
        """Write ``cmd`` to the node's command connection and advance its session."""
        now = self.clock() if now is None else now
        frame = encode(cmd)
        with self._lock:
            rec = self._nodes.get(imei)
            if rec is None:
                raise NodeNotFound(imei)
            if not rec.alive:
                self.suppressed[imei] += 1
                raise NodeDead(imei)
            try:
                session = apply_command(rec.session, cmd, now)
            except TransitionError:
                raise InvalidTransition(imei, rec.session.name, cmd.message_type.value) from None
            sink = self._sinks.get(imei)
            if sink is None:
                raise NodeUnreachable(imei)
            try:
                sink(frame)
            except (OSError, ConnectionError) as exc:
                log.warning("write to %s failed: %s", imei, exc)
                raise NodeUnreachable(imei) from exc
            self._nodes[imei] = replace(rec, session=session)
            self.commands_sent[(imei, cmd.message_type.value)] += 1
            self.command_bytes[imei] += len(frame)
        return DispatchResult(imei, cmd, len(frame), session, now)

    # -- data --------------------------------------------------------------

    def on_data(self, msg: DataMessage, now: float | None = None) -> StoredEntry:
        now = self.clock() if now is None else now
        events = []
        with self._lock:
            rec = self._nodes.get(msg.imei)
            if rec is None:
                self.store.quarantine(msg, now)
                raise NodeNotFound(msg.imei)
            entry = self.store.append(msg.imei, msg, now)
            if isinstance(msg, SensorDataMsg):
                self.samples_received[msg.imei] += msg.sample_count()
                nxt = complete(rec.session, now)
                if nxt is not None:
                    self._nodes[msg.imei] = replace(rec, session=nxt)
                    events.append(SessionComplete(msg.imei, now))
        self._emit(events)
        return entry

    def on_message(self, msg, addr: str, now: float | None = None):
        """Route any edge->controller message."""
        if isinstance(msg, KeepAliveMsg):
            return self.on_keepalive(msg, addr, now)
        if isinstance(msg, (SensorDataMsg, ImageDataMsg)):
            return self.on_data(msg, now)
        raise TypeError(f"edges do not send {type(msg).__name__}")

    def snapshot(self, now: float | None = None) -> RegistrySnapshot:
        now = self.clock() if now is None else now
        with self._lock:
            nodes = dict(self._nodes)
        return RegistrySnapshot(now, nodes, self.store.windows())
