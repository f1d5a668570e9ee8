"""Simulation time.

Sim time is expressed in epoch seconds so it can be stamped straight into
messages.  With an ``acceleration`` of ``a`` one wall second covers ``a``
sim seconds; ``None`` runs as fast as possible.
"""

from __future__ import annotations

import asyncio
import time


class VirtualClock:
    def __init__(self, start: float = 0.0, acceleration: float | None = None, wall=time.monotonic):
        if acceleration is not None and acceleration <= 0:
            raise ValueError("acceleration must be > 0")
        self._now = float(start)
        self.start = float(start)
        self.acceleration = acceleration
        self._wall = wall
        self._wall_start = wall()

    def now(self) -> float:
        return self._now

    def _wall_deadline(self, t: float) -> float:
        return self._wall_start + (t - self.start) / self.acceleration

    def advance_to(self, t: float) -> None:
        """Move sim time forward, sleeping first when paced."""
        if t < self._now:
            raise ValueError(f"clock cannot go backwards ({self._now} -> {t})")
        if self.acceleration is not None:
            delay = self._wall_deadline(t) - self._wall()
            if delay > 0:
                time.sleep(delay)
        self._now = float(t)

    async def sleep_until(self, t: float) -> None:
        if t < self._now:
            return
        if self.acceleration is not None:
            delay = self._wall_deadline(t) - self._wall()
            if delay > 0:
                await asyncio.sleep(delay)
        self._now = max(self._now, float(t))

    def wall_elapsed(self) -> float:
        return self._wall() - self._wall_start


class WallClock:
    """Epoch wall time, for running the controller for real."""

    def now(self) -> float:
        return time.time()

    async def sleep_until(self, t: float) -> None:
        delay = t - time.time()
        if delay > 0:
            await asyncio.sleep(delay)
