from collections import deque

import pytest
from hypothesis import given
from hypothesis import strategies as st

from music.command.compiler import (
    CommandBatch,
    compile_policy,
    cycle_tick,
    default_cycle_tick,
    default_settings,
    send_command,
)
from music.command.executor import CommandExecutor
from music.command.policy import INACTIVE, Directive, SensingPolicy
from music.command.sensors import DEFAULT_SENSOR_TABLE, clamp_frequency, sensor_table_from_mapping
from music.controller.driver import Driver, NodeRecord, RegistrySnapshot
from music.controller.session import AwaitingSend, Idle, Recording
from music.analytics.geo import GeoPoint
from music.errors import ConfigError, InvalidFrequency
from music.protocol import CommandMsg, CommandType, KeepAliveMsg, SensorDataMsg, SensorSetting, decode

TABLE = DEFAULT_SENSOR_TABLE
GPS1 = (SensorSetting("GPS", 1.0),)


def node(session, imei="1", sensors=("GPS",), alive=True):
    return NodeRecord(imei, "a", "ip", 0.0, 90, GeoPoint(0.0, 0.0), sensors, session, alive)


def snap(*recs):
    return RegistrySnapshot(0.0, {r.imei: r for r in recs})


def kinds(cmds):
    return [c.message_type.value for c in cmds]


# -- clamping -------------------------------------------------------------

def test_clamp_examples():
    aq = TABLE["AirQuality"]
    assert clamp_frequency(50.0, aq) == 1.0
    assert clamp_frequency(0.5, aq) == 0.5
    assert default_settings(["Accelerometer"]) == (SensorSetting("Accelerometer", 20.0),)
    with pytest.raises(InvalidFrequency):
        clamp_frequency(0.0, aq)


@given(st.sampled_from(sorted(TABLE)), st.floats(1e-6, 1e6))
def test_clamp_never_exceeds_max_and_is_idempotent(name, f):
    spec = TABLE[name]
    c = clamp_frequency(f, spec)
    assert 0 < c <= spec.max_frequency
    assert clamp_frequency(c, spec) == c
    if f <= spec.max_frequency:
        assert c == f


def test_sensor_table_overrides_and_validation():
    table = sensor_table_from_mapping({"GPS": {"max_frequency": 5, "default_frequency": 2}}, TABLE)
    assert table["GPS"].max_frequency == 5 and table["AirQuality"] is TABLE["AirQuality"]
    with pytest.raises(ConfigError):
        sensor_table_from_mapping({"GPS": {"max_frequency": 1, "default_frequency": 2}}, TABLE)
    with pytest.raises(ConfigError):
        sensor_table_from_mapping({"GPS": {"colour": "red"}}, TABLE)


# -- compile --------------------------------------------------------------

def test_deactivate_recording_node():
    rec = node(Recording(0.0, GPS1))
    prev = SensingPolicy(1, {"1": Directive(True, GPS1)})
    batch = compile_policy(prev, SensingPolicy(2, {"1": INACTIVE}), snap(rec), TABLE, 5.0)
    assert kinds(batch.for_node("1")) == ["STOP", "SEND"]


def test_activate_idle_node():
    rec = node(Idle(0.0))
    prev = SensingPolicy(1, {"1": INACTIVE})
    batch = compile_policy(prev, SensingPolicy(2, {"1": Directive(True, GPS1)}), snap(rec), TABLE, 5.0)
    assert batch.for_node("1") == [CommandMsg.start(GPS1)]


def test_frequency_change_restarts_session():
    rec = node(Recording(0.0, GPS1))
    nxt = SensingPolicy(2, {"1": Directive(True, (SensorSetting("GPS", 0.5),))})
    batch = compile_policy(SensingPolicy(1, {"1": Directive(True, GPS1)}), nxt, snap(rec), TABLE, 5.0)
    assert kinds(batch.for_node("1")) == ["STOP", "SEND", "START"]


def test_directives_are_clamped_on_compile():
    rec = node(Idle(0.0))
    nxt = SensingPolicy(1, {"1": Directive(True, (SensorSetting("GPS", 50.0),))})
    [cmd] = compile_policy(None, nxt, snap(rec), TABLE).for_node("1")
    assert cmd.sensors == GPS1


def test_capture_only_on_rising_edge():
    rec = node(Recording(0.0, GPS1))
    d = Directive(True, GPS1, capture_image=True)
    first = compile_policy(SensingPolicy(1, {"1": Directive(True, GPS1)}), SensingPolicy(2, {"1": d}), snap(rec))
    assert kinds(first.for_node("1")) == ["CAPTURE_IMAGE"]
    again = compile_policy(SensingPolicy(2, {"1": d}), SensingPolicy(3, {"1": d}), snap(rec))
    assert len(again) == 0


def test_dead_and_unknown_nodes_skipped():
    nxt = SensingPolicy(1, {"1": Directive(True, GPS1), "2": Directive(True, GPS1)})
    batch = compile_policy(None, nxt, snap(node(Idle(0.0), alive=False)))
    assert batch.commands == [] and sorted(batch.skipped) == ["1", "2"]


def test_policy_ids_must_increase():
    with pytest.raises(ValueError):
        compile_policy(SensingPolicy(3), SensingPolicy(3), snap())


states = st.one_of(
    st.builds(Idle, st.just(0.0)),
    st.builds(Recording, st.just(0.0), st.just(GPS1)),
    st.builds(AwaitingSend, st.just(1.0), st.just(0.0), st.just(GPS1), st.booleans()),
)
directives = st.one_of(
    st.just(INACTIVE),
    st.builds(lambda f, c: Directive(True, (SensorSetting("GPS", f),), c), st.sampled_from([0.2, 0.5, 1.0]), st.booleans()),
)


@given(states, directives)
def test_compile_fixed_point(state, d):
    batch = compile_policy(SensingPolicy(1, {"1": d}), SensingPolicy(2, {"1": d}), snap(node(state)))
    assert len(batch) == 0


# -- duty cycle -------------------------------------------------------------

def test_cycle_examples():
    assert kinds([default_cycle_tick(node(Idle(0.0)), 10.0)]) == ["START"]
    assert default_cycle_tick(node(Idle(0.0)), 9.9) is None
    assert kinds([default_cycle_tick(node(Recording(10.0, GPS1)), 30.0)]) == ["STOP"]
    assert default_cycle_tick(node(Recording(10.0, GPS1)), 29.0) is None
    assert kinds([default_cycle_tick(node(AwaitingSend(30.0, 10.0, GPS1)), 30.0)]) == ["SEND"]
    # SEND issued, data not yet in: nothing, and in particular no START
    assert default_cycle_tick(node(AwaitingSend(30.0, 10.0, GPS1, True)), 100.0) is None


def test_empty_sensor_set_closes_session():
    assert kinds([cycle_tick(node(Recording(0.0, GPS1)), 1.0, ())]) == ["STOP"]
    assert cycle_tick(node(Idle(0.0)), 100.0, ()) is None


def test_large_sessions_request_compression():
    aq = (SensorSetting("Accelerometer", 100.0),)
    assert send_command(AwaitingSend(20.0, 0.0, aq), 20.0, TABLE).compress
    assert not send_command(AwaitingSend(20.0, 0.0, GPS1), 20.0, TABLE).compress


# -- executor ------------------------------------------------------------------

class FakeEdge:
    """Answers SEND with a data message, like an edge on a lossless link."""

    def __init__(self, driver, imei="1"):
        self.driver, self.imei, self.pending = driver, imei, []
        driver.attach_command_channel(imei, self.receive)

    def receive(self, frame):
        cmd = decode(frame)
        if cmd.message_type is CommandType.SEND:
            self.pending.append(SensorDataMsg(self.imei, 0.0, 0.0, {}))

    def settle(self):
        while self.pending:
            self.driver.on_data(self.pending.pop(0))


def test_executor_runs_default_cycle_and_waits_for_data():
    clock = [0.0]
    d = Driver(clock=lambda: clock[0])
    d.on_keepalive(KeepAliveMsg("1", "ip", 90, 0.0, 0.0, ("GPS",)), "a", now=0.0)
    edge = FakeEdge(d)
    ex = CommandExecutor(d, settle=edge.settle)
    log = []
    for t in range(0, 95, 5):
        clock[0] = float(t)
        log += [(r.at, r.command.message_type.value) for r in ex.run(float(t))]
    assert log == [(10.0, "START"), (30.0, "STOP"), (30.0, "SEND"),
                   (40.0, "START"), (60.0, "STOP"), (60.0, "SEND"),
                   (70.0, "START"), (90.0, "STOP"), (90.0, "SEND")]


def test_queued_start_waits_for_previous_data():
    d = Driver(clock=lambda: 0.0)
    d.on_keepalive(KeepAliveMsg("1", "ip", 90, 0.0, 0.0, ("GPS",)), "a", now=0.0)
    d.attach_command_channel("1", lambda f: None)  # swallows; never answers SEND
    ex = CommandExecutor(d)
    d.dispatch("1", CommandMsg.start(GPS1), now=0.0)
    ex.apply(SensingPolicy(1, {"1": Directive(True, (SensorSetting("GPS", 0.5),))}), d.snapshot(1.0), 1.0)
    sent = ex.run(1.0)
    assert kinds([r.command for r in sent]) == ["STOP", "SEND"]
    assert ex.pending("1") == 1
    d.on_data(SensorDataMsg("1", 0.0, 0.0, {}), now=2.0)
    assert kinds([r.command for r in ex.run(2.0)]) == ["START"]


def test_forget_drops_queue():
    d = Driver()
    ex = CommandExecutor(d)
    ex.queues["1"] = deque([CommandMsg.stop()])
    ex.applied["1"] = INACTIVE
    ex.forget("1")
    assert ex.pending("1") == 0 and ex.dropped == 1 and "1" not in ex.applied


def test_batch_len():
    assert len(CommandBatch([("1", CommandMsg.stop())])) == 1
