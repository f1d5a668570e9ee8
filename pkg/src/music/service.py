"""The controller process: TCP server, data store and policy loop."""

from __future__ import annotations

import asyncio
import logging
from pathlib import Path

from music.command.executor import CommandExecutor
from music.command.sensors import DEFAULT_SENSOR_TABLE
from music.controller.driver import Driver
from music.controller.server import ControllerServer
from music.controller.store import DataStore
from music.policy.base import Policy, create_policy
from music.policy.runner import DEFAULT_TICK_S, PolicyRunner, TickClock, run_policy_loop
from music.sim.clock import WallClock

log = logging.getLogger(__name__)


class ControllerService:
    def __init__(
        self,
        data_dir: str | Path | None = None,
        host: str = "127.0.0.1",
        data_port: int = 9000,
        cmd_port: int = 9001,
        keepalive_period_s: float = 10.0,
        liveness_timeout_s: float = 30.0,
        policy: Policy | None = None,
        tick_s: float = DEFAULT_TICK_S,
        table=DEFAULT_SENSOR_TABLE,
        clock: TickClock | None = None,
    ):
        self.clock = clock or WallClock()
        self.store = DataStore(data_dir)
        self.driver = Driver(self.store, keepalive_period_s, liveness_timeout_s, clock=self.clock.now)
        self.server = ControllerServer(self.driver, host, data_port, cmd_port, clock=self.clock.now)
        self.executor = CommandExecutor(self.driver, table)
        self.runner = PolicyRunner(self.driver, self.executor, policy or create_policy("default"), table)
        self.tick_s = tick_s
        self.stop_event = asyncio.Event()

    async def run(self) -> None:
        """Serve until :meth:`shutdown` is called; logs are flushed on the way out."""
        await self.server.start()
        try:
            await run_policy_loop(self.runner, self.clock, self.tick_s, self.stop_event)
        finally:
            await self.server.stop()
            self.store.close()
            log.info("controller stopped; data logs flushed")

    def shutdown(self) -> None:
        self.stop_event.set()
