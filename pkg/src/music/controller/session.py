"""Per-node recording session state as seen from the controller.

Legal edges: Idle -> Recording (START), Recording -> AwaitingSend (STOP),
AwaitingSend -> Idle (first data message after SEND).  SEND itself only
marks the AwaitingSend state as requested.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Union

from music.protocol import CommandMsg, CommandType, SensorSetting


@dataclass(frozen=True)
class Idle:
    since: float

    name = "Idle"


@dataclass(frozen=True)
class Recording:
    since: float
    sensors: tuple[SensorSetting, ...]

    name = "Recording"


@dataclass(frozen=True)
class AwaitingSend:
    stopped_at: float
    started_at: float
    sensors: tuple[SensorSetting, ...]
    send_issued: bool = False
    send_at: float | None = None

    name = "AwaitingSend"


SessionState = Union[Idle, Recording, AwaitingSend]


class TransitionError(Exception):
    pass


def apply_command(state: SessionState, cmd: CommandMsg, now: float) -> SessionState:
    """State after dispatching ``cmd``; raises TransitionError on an illegal edge."""
    kind = cmd.message_type
    if kind is CommandType.CAPTURE_IMAGE:
        return state
    if kind is CommandType.START:
        if isinstance(state, Idle):
            return Recording(now, cmd.sensors)
    elif kind is CommandType.STOP:
        if isinstance(state, Recording):
            return AwaitingSend(now, state.since, state.sensors)
    elif kind is CommandType.SEND:
        if isinstance(state, AwaitingSend):
            return replace(state, send_issued=True, send_at=now)
    raise TransitionError(f"{kind.value} not allowed in {state.name}")


def complete(state: SessionState, now: float) -> SessionState | None:
    """New state when a sensor-data message arrives, or None if nothing changes."""
    if isinstance(state, AwaitingSend) and state.send_issued:
        return Idle(now)
    return None
