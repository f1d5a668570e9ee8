"""Per-node command sequencing on top of :class:`~music.controller.Driver`.

Each node has a FIFO of pending commands.  The head is dispatched unless it
is a START and the node is still waiting for the previous session's data;
that START stays queued until the session-complete transition.
"""

from __future__ import annotations

import logging
from collections import deque
from typing import Callable, Mapping

from music.command.compiler import (
    DEFAULT_CYCLE,
    CommandBatch,
    CycleConfig,
    clamp_settings,
    compile_policy,
    cycle_tick,
    default_settings,
)
from music.command.policy import Directive, SensingPolicy
from music.command.sensors import DEFAULT_SENSOR_TABLE, SensorSpec
from music.controller.driver import DispatchResult, Driver, RegistrySnapshot
from music.controller.session import Idle
from music.errors import InvalidTransition, NodeDead, NodeNotFound, NodeUnreachable
from music.protocol import CommandType

log = logging.getLogger(__name__)

POLICY_CYCLE = CycleConfig(20.0, 0.0)
_MAX_ROUNDS = 16


class CommandExecutor:
    def __init__(
        self,
        driver: Driver,
        table: Mapping[str, SensorSpec] = DEFAULT_SENSOR_TABLE,
        default_cycle: CycleConfig = DEFAULT_CYCLE,
        policy_cycle: CycleConfig = POLICY_CYCLE,
        settle: Callable[[], None] | None = None,
    ):
        self.driver = driver
        self.table = table
        self.default_cycle = default_cycle
        self.policy_cycle = policy_cycle
        self.settle = settle or (lambda: None)
        self.applied: dict[str, Directive] = {}
        self.policy_id = -1
        self.queues: dict[str, deque] = {}
        self.dispatched: list[DispatchResult] = []
        self.dropped = 0

    def apply(self, policy: SensingPolicy, snapshot: RegistrySnapshot, now: float) -> CommandBatch:
        prev = SensingPolicy(self.policy_id, dict(self.applied))
        batch = compile_policy(prev, policy, snapshot, self.table, now)
        for imei, cmd in batch.commands:
            self.queues.setdefault(imei, deque()).append(cmd)
        skipped = set(batch.skipped)
        for imei, directive in policy.directives.items():
            if imei not in skipped:
                self.applied[imei] = directive
        for imei in [i for i in self.applied if i not in policy.directives]:
            del self.applied[imei]      # released to the default cycle
        self.policy_id = policy.policy_id
        return batch

    def forget(self, imei: str) -> None:
        """Drop queued commands and applied state for a node that died."""
        q = self.queues.pop(imei, None)
        if q:
            self.dropped += len(q)
        self.applied.pop(imei, None)

    def pending(self, imei: str) -> int:
        return len(self.queues.get(imei, ()))

    def pump(self, now: float) -> list[DispatchResult]:
        out = []
        for imei in sorted(self.queues):
            q = self.queues[imei]
            while q:
                cmd = q[0]
                try:
                    rec = self.driver.node(imei)
                except NodeNotFound:
                    q.clear()
                    break
                if not rec.alive:
                    break
                if cmd.message_type is CommandType.START and not isinstance(rec.session, Idle):
                    break
                try:
                    res = self.driver.dispatch(imei, cmd, now)
                except (NodeUnreachable, NodeDead):
                    break
                except InvalidTransition as exc:
                    log.warning("dropping command: %s", exc)
                    q.popleft()
                    self.dropped += 1
                    continue
                q.popleft()
                out.append(res)
        self.dispatched.extend(out)
        return out

    def _cycle_sensors(self, imei: str, sensors: tuple[str, ...]):
        directive = self.applied.get(imei)
        if directive is None:
            return default_settings(sensors, self.table), self.default_cycle
        if not directive.active:
            return (), self.policy_cycle
        return clamp_settings(directive.sensors, self.table), self.policy_cycle

    def run(self, now: float) -> list[DispatchResult]:
        """Dispatch queued commands and advance every node's duty cycle until quiet."""
        out = []
        for _ in range(_MAX_ROUNDS):
            sent = self.pump(now)
            out += sent
            self.settle()
            issued = bool(sent)
            snapshot = self.driver.snapshot(now)
            for rec in snapshot.alive():
                if self.queues.get(rec.imei):
                    continue
                sensors, cycle = self._cycle_sensors(rec.imei, rec.sensors)
                cmd = cycle_tick(rec, now, sensors, cycle, self.table)
                if cmd is not None:
                    self.queues.setdefault(rec.imei, deque()).append(cmd)
                    issued = True
            if not issued:
                break
        else:
            log.warning("command cycle did not settle at %.3f", now)
        return out
