"""In-process transport between simulated edges and a :class:`Driver`.

Every frame crosses the boundary as encoded bytes and is decoded again on
the far side, so byte counts here are the bytes a socket would carry.
"""

from __future__ import annotations

import logging
from collections import Counter, deque
from dataclasses import dataclass, field

from music.controller.driver import Driver
from music.errors import NodeNotFound, ProtocolError
from music.protocol import KeepAliveMsg, decode
from music.sim.node import EdgeNode

log = logging.getLogger(__name__)

BACKOFF_BASE_S = 1.0
BACKOFF_CAP_S = 60.0


@dataclass
class Link:
    node: EdgeNode
    index: int
    connected: bool = False
    connects: int = 0
    next_attempt: float = float("-inf")
    backoff: float = BACKOFF_BASE_S
    failed_attempts: int = 0
    inbox: deque = field(default_factory=deque)
    churn_times: deque = field(default_factory=deque)
    sink: object = None


class MemoryNetwork:
    def __init__(self, driver: Driver, outages: tuple[tuple[float, float], ...] = ()):
        self.driver = driver
        self.outages = tuple(outages)
        self.links: dict[str, Link] = {}
        self.now = 0.0
        self.up_bytes: Counter = Counter()       # (imei, kind) -> bytes written edge->controller
        self.down_bytes: Counter = Counter()     # imei -> command bytes written controller->edge
        self.rejected = 0

    def add(self, node: EdgeNode) -> None:
        link = Link(node, len(self.links))
        link.churn_times = deque(sorted(node.cfg.churn_at))
        self.links[node.imei] = link

    def reachable(self, t: float) -> bool:
        return not any(a <= t < b for a, b in self.outages)

    def _address(self, link: Link) -> str:
        k = link.connects
        return f"10.{link.index % 250}.{k // 250}.{k % 250 + 1}:{40000 + k % 20000}"

    # -- connection management -------------------------------------------------

    def _disconnect(self, link: Link) -> None:
        if not link.connected:
            return
        link.connected = False
        link.inbox.clear()
        self.driver.detach_command_channel(link.node.imei, link.sink)
        link.node.disconnect()
        link.node.drop_keepalives()

    def _try_connect(self, link: Link, t: float) -> None:
        if not self.reachable(t):
            link.failed_attempts += 1
            link.next_attempt = t + link.backoff
            link.backoff = min(link.backoff * 2, BACKOFF_CAP_S)
            return
        link.connected = True
        link.backoff = BACKOFF_BASE_S
        link.connects += 1
        imei = link.node.imei

        def sink(frame: bytes, link=link) -> None:
            if not link.connected:
                raise ConnectionError(f"command link to {imei} is closed")
            link.inbox.append(frame)

        link.sink = sink
        link.node.connect(t, self._address(link))

    def churn(self, imei: str, t: float) -> None:
        """Drop both connections and reconnect from a new address."""
        link = self.links[imei]
        self._disconnect(link)
        link.next_attempt = t

    # -- data flow ---------------------------------------------------------------

    def _deliver(self, link: Link) -> None:
        node = link.node
        while link.connected and node.outbox:
            item = node.outbox.popleft()
            self.up_bytes[(node.imei, item.kind)] += len(item.frame)
            node.mark_sent(item)
            try:
                msg = decode(item.frame)
            except ProtocolError as exc:
                self.rejected += 1
                log.warning("controller rejected frame from %s: %s", node.imei, exc)
                continue
            addr = node.address
            if item.channel == "cmd" and isinstance(msg, KeepAliveMsg):
                self.driver.on_keepalive(msg, addr, self.now)
                self.driver.attach_command_channel(msg.imei, link.sink)
                continue
            try:
                self.driver.on_message(msg, addr, self.now)
            except NodeNotFound:
                log.warning("data from unregistered node %s quarantined", node.imei)

    def step_node(self, node: EdgeNode, t: float) -> None:
        self.now = t
        link = self.links[node.imei]
        if link.connected and not self.reachable(t):
            self._disconnect(link)
            link.next_attempt = t + link.backoff
        while link.churn_times and link.churn_times[0] <= t:
            link.churn_times.popleft()
            if link.connected:
                self.churn(node.imei, t)
        if not link.connected and node.alive and t >= link.next_attempt:
            self._try_connect(link, t)
        node.step(t)
        self._deliver(link)

    def flush(self) -> None:
        """Hand queued commands to nodes and their replies to the controller until quiet."""
        busy = True
        while busy:
            busy = False
            for imei in sorted(self.links):
                link = self.links[imei]
                while link.inbox:
                    frame = link.inbox.popleft()
                    busy = True
                    self.down_bytes[imei] += len(frame)
                    link.node.bytes_rx += len(frame)
                    link.node.handle_command(decode(frame), self.now)
                    self._deliver(link)
