"""Turn sensing policies into START/STOP/SEND/CAPTURE_IMAGE commands."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from music.command.policy import Directive, SensingPolicy
from music.command.sensors import DEFAULT_SENSOR_TABLE, SensorSpec, clamp_frequency
from music.controller.driver import NodeRecord, RegistrySnapshot
from music.controller.session import AwaitingSend, Idle, Recording, SessionState
from music.protocol import CommandMsg, SensorSetting

log = logging.getLogger(__name__)

# SEND asks for compression once a session is estimated above this size
COMPRESS_THRESHOLD_BYTES = 64 * 1024
_UNKNOWN_SAMPLE_BYTES = 64


@dataclass(frozen=True)
class CycleConfig:
    """Sense for ``session_s``, STOP+SEND, then wait ``break_s`` before the next START."""

    session_s: float = 20.0
    break_s: float = 10.0

    def __post_init__(self):
        if self.session_s <= 0 or self.break_s < 0:
            raise ValueError("session_s must be > 0 and break_s >= 0")


DEFAULT_CYCLE = CycleConfig(20.0, 10.0)


@dataclass
class CommandBatch:
    commands: list[tuple[str, CommandMsg]] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.commands)

    def for_node(self, imei: str) -> list[CommandMsg]:
        return [c for i, c in self.commands if i == imei]


def clamp_settings(settings: Iterable[SensorSetting], table: Mapping[str, SensorSpec]) -> tuple[SensorSetting, ...]:
    out = []
    for s in settings:
        spec = table.get(s.name)
        if spec is None:
            log.warning("dropping unknown sensor %r from directive", s.name)
            continue
        out.append(SensorSetting(s.name, clamp_frequency(s.frequency, spec)))
    return tuple(sorted(out, key=lambda s: s.name))


def default_settings(sensor_names: Iterable[str], table: Mapping[str, SensorSpec] = DEFAULT_SENSOR_TABLE) -> tuple[SensorSetting, ...]:
    """Every known sensor of a node at its default frequency."""
    return tuple(
        SensorSetting(name, table[name].default_frequency) for name in sorted(set(sensor_names)) if name in table
    )


def estimate_session_bytes(sensors: Iterable[SensorSetting], duration_s: float, table: Mapping[str, SensorSpec]) -> float:
    total = 0.0
    for s in sensors:
        spec = table.get(s.name)
        size = spec.bytes_per_sample if spec else _UNKNOWN_SAMPLE_BYTES
        total += s.frequency * max(duration_s, 0.0) * size
    return total


def send_command(state: SessionState, now: float, table: Mapping[str, SensorSpec]) -> CommandMsg:
    if isinstance(state, Recording):
        est = estimate_session_bytes(state.sensors, now - state.since, table)
    elif isinstance(state, AwaitingSend):
        est = estimate_session_bytes(state.sensors, state.stopped_at - state.started_at, table)
    else:
        est = 0.0
    return CommandMsg.send(compress=est > COMPRESS_THRESHOLD_BYTES)


def _node_commands(rec: NodeRecord, prev: Directive | None, nxt: Directive, table, now: float) -> list[CommandMsg]:
    state = rec.session
    target = clamp_settings(nxt.sensors, table) if nxt.active else ()
    cmds: list[CommandMsg] = []
    if not target:
        if isinstance(state, Recording):
            cmds += [CommandMsg.stop(), send_command(state, now, table)]
        elif isinstance(state, AwaitingSend) and not state.send_issued:
            cmds.append(send_command(state, now, table))
    elif isinstance(state, Idle):
        cmds.append(CommandMsg.start(target))
    elif isinstance(state, Recording):
        if state.sensors != target:
            # no "modify" command exists: restart the session with the new settings
            cmds += [CommandMsg.stop(), send_command(state, now, table), CommandMsg.start(target)]
    elif isinstance(state, AwaitingSend):
        if not state.send_issued:
            cmds.append(send_command(state, now, table))
        cmds.append(CommandMsg.start(target))
    if nxt.capture_image and not (prev is not None and prev.capture_image):
        cmds.append(CommandMsg.capture_image())
    return cmds


def compile_policy(
    prev: SensingPolicy | None,
    nxt: SensingPolicy,
    snapshot: RegistrySnapshot,
    table: Mapping[str, SensorSpec] = DEFAULT_SENSOR_TABLE,
    now: float | None = None,
) -> CommandBatch:
    """Commands that move the fleet from ``prev`` to ``nxt``.

    Unchanged directives produce nothing.  Directives for unknown or dead
    nodes are skipped (reported in ``batch.skipped``) so the caller can keep
    them pending.  Commands are derived from each node's current session
    state, so replaying them in order never breaks the session state machine
    provided a START waits for the preceding SEND's data.
    """
    if prev is not None and nxt.policy_id <= prev.policy_id:
        raise ValueError(f"policy id must increase ({prev.policy_id} -> {nxt.policy_id})")
    now = snapshot.taken_at if now is None else now
    prev_dirs = prev.directives if prev is not None else {}
    batch = CommandBatch()
    for imei in sorted(nxt.directives):
        nd = nxt.directives[imei]
        pd = prev_dirs.get(imei)
        if pd == nd:
            continue
        rec = snapshot.nodes.get(imei)
        if rec is None or not rec.alive:
            log.warning("policy %d: skipping directive for %s node %s",
                        nxt.policy_id, "unknown" if rec is None else "dead", imei)
            batch.skipped.append(imei)
            continue
        batch.commands.extend((imei, c) for c in _node_commands(rec, pd, nd, table, now))
    return batch


def cycle_tick(
    node: NodeRecord,
    now: float,
    sensors: tuple[SensorSetting, ...],
    cycle: CycleConfig = DEFAULT_CYCLE,
    table: Mapping[str, SensorSpec] = DEFAULT_SENSOR_TABLE,
) -> CommandMsg | None:
    """Next duty-cycle command for ``node`` running ``sensors``, if any is due.

    An empty ``sensors`` tuple means the node should not be sensing: an open
    session is closed and flushed but no new one is started.
    """
    state = node.session
    if isinstance(state, Idle):
        if sensors and now - state.since >= cycle.break_s:
            return CommandMsg.start(sensors)
    elif isinstance(state, Recording):
        if not sensors or now - state.since >= cycle.session_s:
            return CommandMsg.stop()
    elif isinstance(state, AwaitingSend) and not state.send_issued:
        return send_command(state, now, table)
    return None


def default_cycle_tick(
    node: NodeRecord,
    now: float,
    table: Mapping[str, SensorSpec] = DEFAULT_SENSOR_TABLE,
    cycle: CycleConfig = DEFAULT_CYCLE,
) -> CommandMsg | None:
    """Default policy: 20 s at default frequencies, STOP, SEND, 10 s break."""
    return cycle_tick(node, now, default_settings(node.sensors, table), cycle, table)
