"""The policy loop: snapshot, policy tick, compile, dispatch."""

from __future__ import annotations

import asyncio
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Protocol

from music.command.executor import CommandExecutor
from music.command.policy import SensingPolicy
from music.command.sensors import DEFAULT_SENSOR_TABLE, SensorSpec
from music.controller.driver import Driver, NodeDied, RegistrySnapshot
from music.controller.session import Recording
from music.policy.base import Policy, PolicyContext, PolicyParams

log = logging.getLogger(__name__)

DEFAULT_TICK_S = 5.0


@dataclass(frozen=True)
class TickRecord:
    at: float
    policy_id: int | None          # None when the policy raised
    snapshot: RegistrySnapshot
    policy: SensingPolicy | None   # policy in force after this tick
    commands: int


@dataclass
class TickObserver:
    """Keeps the per-tick rows that metrics and tests look at."""

    active: list[tuple[float, str, bool, float, float, int, str]] = field(default_factory=list)
    loocv: list[tuple[float, float]] = field(default_factory=list)

    def __call__(self, rec: TickRecord) -> None:
        for node in rec.snapshot.alive():
            d = rec.policy.get(node.imei) if rec.policy is not None else None
            if d is None:
                active = isinstance(node.session, Recording)
            else:
                active = d.active
            self.active.append(
                (rec.at, node.imei, active, node.location.latitude, node.location.longitude,
                 node.battery, node.session.name)
            )
        if rec.policy is not None and "loocv_rmse" in rec.policy.annotations:
            self.loocv.append((rec.at, float(rec.policy.annotations["loocv_rmse"])))


class PolicyRunner:
    def __init__(
        self,
        driver: Driver,
        executor: CommandExecutor,
        policy: Policy,
        table: Mapping[str, SensorSpec] = DEFAULT_SENSOR_TABLE,
    ):
        self.driver = driver
        self.executor = executor
        self.policy = policy
        self.table = table
        self.current: SensingPolicy | None = None
        self.next_id = 0
        self.ticks = 0
        self.errors = 0
        self.coalesced = 0
        self.last_tick: float | None = None
        self.observers: list = []
        driver.subscribe(self._on_event)

    @property
    def params(self) -> PolicyParams:
        return self.policy.params

    def _on_event(self, ev) -> None:
        if isinstance(ev, NodeDied):
            self.executor.forget(ev.imei)

    def tick(self, now: float) -> TickRecord:
        if self.last_tick is not None and now <= self.last_tick:
            raise ValueError(f"tick times must increase ({self.last_tick} -> {now})")
        self.last_tick = now
        self.ticks += 1
        self.driver.liveness_sweep(now)
        snap = self.driver.snapshot(now)
        ctx = PolicyContext(snap, now, self.next_id, self.params, self.table, self.current)
        policy_id = None
        try:
            nxt = self.policy.tick(ctx)
        except Exception:
            self.errors += 1
            log.exception("policy %s failed at %.3f; keeping policy %s", self.policy.name, now,
                          self.current.policy_id if self.current else None)
        else:
            self.executor.apply(nxt, snap, now)
            self.current = nxt
            policy_id = nxt.policy_id
            self.next_id = nxt.policy_id + 1
        sent = self.executor.run(now)
        rec = TickRecord(now, policy_id, self.driver.snapshot(now), self.current, len(sent))
        for obs in self.observers:
            obs(rec)
        return rec


class TickClock(Protocol):
    def now(self) -> float: ...

    async def sleep_until(self, t: float) -> None: ...


async def run_policy_loop(
    runner: PolicyRunner,
    clock: TickClock,
    tick_period_s: float = DEFAULT_TICK_S,
    stop: asyncio.Event | None = None,
) -> None:
    """Tick every ``tick_period_s``; ticks missed while a slow tick ran are dropped."""
    stop = stop or asyncio.Event()
    due = clock.now()
    while not stop.is_set():
        runner.tick(clock.now())
        due += tick_period_s
        late = clock.now() - due
        if late >= 0:
            missed = math.floor(late / tick_period_s) + 1
            runner.coalesced += missed
            log.warning("policy tick overran; coalescing %d tick(s)", missed)
            due += missed * tick_period_s
        sleeper = asyncio.ensure_future(clock.sleep_until(due))
        waiter = asyncio.ensure_future(stop.wait())
        await asyncio.wait({sleeper, waiter}, return_when=asyncio.FIRST_COMPLETED)
        for task in (sleeper, waiter):
            task.cancel()
