"""TCP front end for the :class:`Driver`.

Edges open two connections.  The data connection carries keepalives and
sensor/image data.  The command connection starts with a keepalive that
names the edge; after that the controller writes commands on it.
"""

from __future__ import annotations

import asyncio
import logging
from collections import Counter
from typing import Callable

from music.controller.driver import Driver
from music.errors import FrameTooLargeError, NodeNotFound, ProtocolError
from music.protocol import CommandMsg, Deframer, KeepAliveMsg, decode

log = logging.getLogger(__name__)

READ_CHUNK = 64 * 1024


def _peer(writer: asyncio.StreamWriter) -> str:
    peer = writer.get_extra_info("peername")
    if isinstance(peer, tuple) and len(peer) >= 2:
        return f"{peer[0]}:{peer[1]}"
    return str(peer)


class ControllerServer:
    def __init__(self, driver: Driver, host: str = "127.0.0.1", data_port: int = 9000, cmd_port: int = 9001,
                 clock: Callable[[], float] | None = None):
        self.driver = driver
        self.host = host
        self.data_port = data_port
        self.cmd_port = cmd_port
        self.clock = clock or driver.clock
        self.bytes_in: Counter = Counter()
        self.bytes_out: Counter = Counter()
        self.rejected = 0
        self._servers: list[asyncio.base_events.Server] = []
        self._writers: set[asyncio.StreamWriter] = set()

    async def start(self) -> None:
        """Bind both ports; raises OSError if either is unavailable."""
        data = await asyncio.start_server(self._handle_data, self.host, self.data_port)
        try:
            cmd = await asyncio.start_server(self._handle_cmd, self.host, self.cmd_port)
        except OSError:
            data.close()
            await data.wait_closed()
            raise
        self._servers = [data, cmd]
        self.data_port = data.sockets[0].getsockname()[1]
        self.cmd_port = cmd.sockets[0].getsockname()[1]
        log.info("listening: data %s:%d, commands %s:%d", self.host, self.data_port, self.host, self.cmd_port)

    async def stop(self) -> None:
        for srv in self._servers:
            srv.close()
        for w in list(self._writers):
            w.close()
        for srv in self._servers:
            await srv.wait_closed()
        self._servers = []

    async def _frames(self, reader: asyncio.StreamReader, peer: str):
        deframer = Deframer()
        while True:
            chunk = await reader.read(READ_CHUNK)
            if not chunk:
                return
            self.bytes_in[peer] += len(chunk)
            try:
                frames = deframer.feed(chunk)
            except FrameTooLargeError as exc:
                log.warning("dropping connection %s: %s", peer, exc)
                return
            for frame in frames:
                try:
                    yield decode(frame)
                except ProtocolError as exc:
                    self.rejected += 1
                    log.warning("bad frame from %s: %s", peer, exc)

    async def _handle_data(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        peer = _peer(writer)
        self._writers.add(writer)
        try:
            async for msg in self._frames(reader, peer):
                if isinstance(msg, CommandMsg):
                    self.rejected += 1
                    log.warning("edge %s sent a command frame; ignored", peer)
                    continue
                try:
                    self.driver.on_message(msg, peer, self.clock())
                except NodeNotFound as exc:
                    log.warning("quarantined data from %s: %s", peer, exc)
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            self._writers.discard(writer)
            writer.close()

    async def _handle_cmd(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        peer = _peer(writer)
        self._writers.add(writer)
        bound: str | None = None

        def sink(frame: bytes) -> None:
            if writer.is_closing():
                raise ConnectionError(f"command connection {peer} is closed")
            writer.write(frame)
            self.bytes_out[peer] += len(frame)

        try:
            async for msg in self._frames(reader, peer):
                if not isinstance(msg, KeepAliveMsg):
                    self.rejected += 1
                    log.warning("command connection %s sent %s; only keepalives are accepted",
                                peer, type(msg).__name__)
                    continue
                self.driver.on_keepalive(msg, peer, self.clock())
                if bound != msg.imei:
                    if bound is not None:
                        self.driver.detach_command_channel(bound, sink)
                    bound = msg.imei
                    self.driver.attach_command_channel(bound, sink)
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            if bound is not None:
                self.driver.detach_command_channel(bound, sink)
            self._writers.discard(writer)
            writer.close()
