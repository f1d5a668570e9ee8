"""Run a scenario: controller, policy loop and edge fleet on one virtual clock.

Each step at sim time ``t`` first advances every node to ``t`` (sorted by
imei) and delivers what they sent, then runs one policy tick, during which
commands and the data they trigger are exchanged until the system is quiet.
Everything runs on a single thread, so a fixed seed gives identical output.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from pathlib import Path

from music.command.executor import CommandExecutor
from music.controller.driver import Driver
from music.controller.store import DataStore
from music.policy.base import create_policy
from music.policy.runner import PolicyRunner, TickObserver, TickRecord
from music.sim.clock import VirtualClock
from music.sim.network import MemoryNetwork
from music.sim.node import LONG_SESSION_S, EdgeNode
from music.sim.scenario import Scenario

log = logging.getLogger(__name__)


@dataclass
class NodeReport:
    imei: str
    messages: dict[str, int]
    bytes_tx: dict[str, int]
    bytes_rx: int
    commands_rx: dict[str, int]
    samples_generated: int
    samples_delivered: int
    samples_buffered: int
    samples_received: int
    battery_end: float
    sessions_completed: int
    long_sessions: int
    ignored_starts: int
    connects: int
    died_at: float | None

    @property
    def data_bytes(self) -> int:
        return self.bytes_tx.get("sensor_data", 0) + self.bytes_tx.get("end_marker", 0) + self.bytes_tx.get("image", 0)


@dataclass
class FleetReport:
    scenario: Scenario
    nodes: list[NodeReport]
    ticks: int
    policy_errors: int
    commands: list[tuple[float, str, str, str]]          # (t, imei, type, detail)
    active: list[tuple[float, str, bool, float, float, int, str]]
    loocv: list[tuple[float, float]]
    hotspot_flags: list[tuple[float, str, bool]]
    transport_up_bytes: int
    transport_down_bytes: int
    suppressed: int
    wall_s: float = 0.0
    extras: dict = field(default_factory=dict)


class Simulation:
    def __init__(self, scenario: Scenario, out_dir: str | Path | None = None):
        self.scenario = scenario
        sc = scenario
        self.clock = VirtualClock(sc.start, sc.acceleration)
        data_dir = Path(out_dir) / "data" if out_dir is not None else None
        self.store = DataStore(data_dir)
        self.driver = Driver(self.store, sc.keepalive_period_s, sc.liveness_timeout_s, clock=self.clock.now)
        self.network = MemoryNetwork(self.driver, sc.outages)
        self.executor = CommandExecutor(self.driver, sc.sensor_table, settle=self.network.flush)
        self.policy = create_policy(sc.policy, sc.params)
        self.runner = PolicyRunner(self.driver, self.executor, self.policy, sc.sensor_table)
        self.observer = TickObserver()
        self.runner.observers.append(self.observer)
        self.tick_hooks: list = []
        self.runner.observers.append(self._on_tick)
        self.nodes: dict[str, EdgeNode] = {}
        for cfg in sorted(sc.nodes, key=lambda c: c.imei):
            node = EdgeNode(cfg, random.Random(f"{sc.seed}:{cfg.imei}"), sc.start)
            self.nodes[cfg.imei] = node
            self.network.add(node)
        self.ticks: list[TickRecord] = []

    def _on_tick(self, rec: TickRecord) -> None:
        for hook in self.tick_hooks:
            hook(self, rec)

    def times(self) -> list[float]:
        sc = self.scenario
        n = int(round(sc.duration_s / sc.tick_s))
        times = [sc.start + i * sc.tick_s for i in range(n + 1)]
        if times[-1] < sc.end:
            times.append(sc.end)
        return times

    def step(self, t: float) -> TickRecord:
        self.clock.advance_to(t)
        for imei in sorted(self.nodes):
            self.network.step_node(self.nodes[imei], t)
        return self.runner.tick(t)

    def run(self) -> FleetReport:
        try:
            for t in self.times():
                self.step(t)
        finally:
            self.store.close()
        return self.report()

    def report(self) -> FleetReport:
        end = self.clock.now()
        nodes = []
        for imei in sorted(self.nodes):
            n = self.nodes[imei]
            long_open = 1 if n.open_session_age(end) > LONG_SESSION_S else 0
            nodes.append(NodeReport(
                imei=imei,
                messages=dict(sorted(n.messages_tx.items())),
                bytes_tx=dict(sorted(n.bytes_tx.items())),
                bytes_rx=n.bytes_rx,
                commands_rx=dict(sorted(n.commands_rx.items())),
                samples_generated=n.generated,
                samples_delivered=n.delivered,
                samples_buffered=n.buffered(),
                samples_received=self.driver.samples_received[imei],
                battery_end=n.battery.level,
                sessions_completed=n.sessions_completed,
                long_sessions=n.long_sessions + long_open,
                ignored_starts=n.ignored_starts,
                connects=self.network.links[imei].connects,
                died_at=n.died_at,
            ))
        commands = []
        for d in self.executor.dispatched:
            detail = ""
            if d.command.sensors:
                detail = ";".join(f"{s.name}@{s.frequency:g}" for s in d.command.sensors)
            elif d.command.compress:
                detail = "compress"
            commands.append((d.at, d.imei, d.command.message_type.value, detail))
        flags = list(getattr(self.policy, "timeline", []))
        return FleetReport(
            scenario=self.scenario,
            nodes=nodes,
            ticks=self.runner.ticks,
            policy_errors=self.runner.errors,
            commands=commands,
            active=list(self.observer.active),
            loocv=list(self.observer.loocv),
            hotspot_flags=flags,
            transport_up_bytes=sum(self.network.up_bytes.values()),
            transport_down_bytes=sum(self.network.down_bytes.values()),
            suppressed=sum(self.driver.suppressed.values()),
            wall_s=self.clock.wall_elapsed(),
        )


def run_fleet(scenario: Scenario, out_dir: str | Path | None = None) -> FleetReport:
    return Simulation(scenario, out_dir).run()
