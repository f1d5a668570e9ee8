"""Simulated edges talking to a real controller over TCP.

Unlike the in-memory fleet this mode is not deterministic: the controller's
policy loop and the edges run as independent asyncio tasks.
"""

from __future__ import annotations

import asyncio
import logging
import random

from music.errors import ProtocolError
from music.protocol import CommandMsg, Deframer, decode
from music.sim.clock import VirtualClock
from music.sim.network import BACKOFF_BASE_S, BACKOFF_CAP_S
from music.sim.node import EdgeNode
from music.sim.scenario import Scenario

log = logging.getLogger(__name__)


class TcpEdgeLink:
    def __init__(self, node: EdgeNode, host: str, data_port: int, cmd_port: int, clock: VirtualClock):
        self.node = node
        self.host = host
        self.data_port = data_port
        self.cmd_port = cmd_port
        self.clock = clock
        self.data_w: asyncio.StreamWriter | None = None
        self.cmd_w: asyncio.StreamWriter | None = None
        self._reader_task: asyncio.Task | None = None
        self.connects = 0
        self.failed_attempts = 0

    @property
    def connected(self) -> bool:
        return self.data_w is not None and not self.data_w.is_closing()

    async def connect(self) -> None:
        """Open both connections, retrying with exponential backoff in sim time."""
        delay = BACKOFF_BASE_S
        while True:
            try:
                _, data_w = await asyncio.open_connection(self.host, self.data_port)
                cmd_r, cmd_w = await asyncio.open_connection(self.host, self.cmd_port)
                break
            except OSError as exc:
                self.failed_attempts += 1
                log.info("edge %s: connect failed (%s); retry in %.0f s", self.node.imei, exc, delay)
                await self.clock.sleep_until(self.clock.now() + delay)
                delay = min(delay * 2, BACKOFF_CAP_S)
        self.data_w, self.cmd_w = data_w, cmd_w
        self.connects += 1
        local = data_w.get_extra_info("sockname")
        self.node.connect(self.clock.now(), f"{local[0]}:{local[1]}")
        self._reader_task = asyncio.ensure_future(self._read_commands(cmd_r))
        await self.flush()

    async def _read_commands(self, reader: asyncio.StreamReader) -> None:
        deframer = Deframer()
        try:
            while True:
                chunk = await reader.read(65536)
                if not chunk:
                    break
                for frame in deframer.feed(chunk):
                    try:
                        msg = decode(frame)
                    except ProtocolError as exc:
                        log.warning("edge %s: bad command frame: %s", self.node.imei, exc)
                        continue
                    if isinstance(msg, CommandMsg):
                        self.node.bytes_rx += len(frame)
                        self.node.handle_command(msg, self.clock.now())
                await self.flush()
        except (ConnectionError, asyncio.CancelledError):
            pass

    async def flush(self) -> None:
        node = self.node
        while self.connected and node.outbox:
            item = node.outbox[0]
            w = self.cmd_w if item.channel == "cmd" else self.data_w
            try:
                w.write(item.frame)
                await w.drain()
            except ConnectionError:
                await self.close()
                return
            node.outbox.popleft()
            node.mark_sent(item)

    async def close(self) -> None:
        if self._reader_task is not None:
            self._reader_task.cancel()
            self._reader_task = None
        for w in (self.data_w, self.cmd_w):
            if w is not None:
                w.close()
        self.data_w = self.cmd_w = None
        self.node.disconnect()
        self.node.drop_keepalives()

    async def churn(self) -> None:
        await self.close()
        await self.connect()


async def run_tcp_fleet(scenario: Scenario, host: str, data_port: int, cmd_port: int,
                        clock: VirtualClock | None = None) -> dict[str, EdgeNode]:
    """Drive every node of ``scenario`` against a controller listening on ``host``."""
    clock = clock or VirtualClock(scenario.start, scenario.acceleration)
    nodes = {
        cfg.imei: EdgeNode(cfg, random.Random(f"{scenario.seed}:{cfg.imei}"), scenario.start)
        for cfg in sorted(scenario.nodes, key=lambda c: c.imei)
    }
    links = {imei: TcpEdgeLink(n, host, data_port, cmd_port, clock) for imei, n in nodes.items()}
    churn = {imei: sorted(n.cfg.churn_at) for imei, n in nodes.items()}
    for link in links.values():
        await link.connect()
    n_steps = int(round(scenario.duration_s / scenario.tick_s))
    try:
        for i in range(n_steps + 1):
            t = scenario.start + i * scenario.tick_s
            await clock.sleep_until(t)
            for imei, link in links.items():
                while churn[imei] and churn[imei][0] <= t:
                    churn[imei].pop(0)
                    await link.churn()
                link.node.step(t)
                await link.flush()
    finally:
        for link in links.values():
            await link.close()
    return nodes
