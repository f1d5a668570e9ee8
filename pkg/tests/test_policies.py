import asyncio
import io
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from music.analytics.geo import GeoPoint, destination, haversine_km
from music.analytics.traffic import RoadSegment
from music.command.executor import CommandExecutor
from music.command.policy import Directive, SensingPolicy
from music.controller.driver import Driver
from music.controller.session import Recording
from music.errors import ConfigError, DetectorError
from music.policy import (
    CleanlinessPolicy,
    HotspotPolicy,
    PolicyContext,
    PolicyParams,
    PolicyRunner,
    SpatialCoveragePolicy,
    create_policy,
    detector_stub,
    hotspot_frequency,
    policy_names,
    run_policy_loop,
)
from music.policy.coverage import resolve_conflicts
from music.policy.hotspot import SegmentState
from music.protocol import CommandType, ImageDataMsg, KeepAliveMsg, SensorDataMsg, SensorSetting, decode
from music.sim.generators import encode_image, synthetic_image

DELHI = GeoPoint(28.5449, 77.1928)


def ka(imei, point, battery=90, sensors=("AirQuality",)):
    return KeepAliveMsg(imei, "ip", battery, point.latitude, point.longitude, tuple(sensors))


def fleet(*nodes, t=0.0):
    d = Driver(clock=lambda: t)
    for imei, point, battery, sensors in nodes:
        d.on_keepalive(ka(imei, point, battery, sensors), "a", now=t)
    return d


def ctx_for(driver, now=0.0, params=None, previous=None, policy_id=1):
    return PolicyContext(driver.snapshot(now), now, policy_id, params or PolicyParams(), previous=previous)


def png(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(pixels.astype(np.uint8), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def test_registry():
    assert policy_names() == ["always_on", "cleanliness", "default", "spatial_coverage", "traffic_hotspot"]
    with pytest.raises(ConfigError):
        create_policy("nope")


# -- spatial coverage -------------------------------------------------------

def five_nodes(last_km=0.4):
    pts = [destination(DELHI, 90.0, i * 2.0) for i in range(4)]
    pts.append(destination(pts[3], 0.0, last_km))
    batteries = [90, 85, 75, 80, 60]
    return [(f"35332306286004{i + 1}", p, b, ("AirQuality",)) for i, (p, b) in enumerate(zip(pts, batteries))]


def test_close_pair_drops_lower_battery():
    pol = SpatialCoveragePolicy().tick(ctx_for(fleet(*five_nodes(0.4))))
    assert pol.active_nodes() == [f"35332306286004{i}" for i in range(1, 5)]
    assert pol.annotations["conflicts"] == 1


def test_no_conflict_fixed_point():
    d = fleet(*five_nodes(0.6))
    pol = SpatialCoveragePolicy()
    first = pol.tick(ctx_for(d))
    assert len(first.active_nodes()) == 5
    second = pol.tick(ctx_for(d, previous=first, policy_id=2))
    assert second.directives == first.directives


def test_moving_apart_reactivates():
    nodes = five_nodes(0.4)
    d = fleet(*nodes)
    pol = SpatialCoveragePolicy()
    assert "353323062860045" not in pol.tick(ctx_for(d)).active_nodes()
    far = destination(nodes[3][1], 0.0, 0.6)
    d.on_keepalive(ka("353323062860045", far, 60), "a", now=5.0)
    assert "353323062860045" in pol.tick(ctx_for(d, 5.0, policy_id=2)).active_nodes()


def test_low_battery_nodes_sit_out():
    d = fleet(("1", DELHI, 10, ("AirQuality",)), ("2", destination(DELHI, 0, 3), 50, ("AirQuality",)))
    pol = SpatialCoveragePolicy().tick(ctx_for(d))
    assert pol.active_nodes() == ["2"]
    assert pol.annotations["low_battery"] == 1


@given(st.lists(st.tuples(st.floats(0, 3), st.floats(0, 3), st.integers(0, 100)), min_size=1, max_size=8))
def test_active_set_always_separated(raw):
    class N:
        def __init__(self, i, x, y, b):
            self.imei = f"{i:03d}"
            self.location = destination(destination(DELHI, 90, x), 0, y)
            self.battery = b
    nodes = [N(i, x, y, b) for i, (x, y, b) in enumerate(raw)]
    active, _ = resolve_conflicts(nodes, 0.5)
    on = [n for n in nodes if n.imei in active]
    for i, a in enumerate(on):
        for b in on[i + 1:]:
            assert haversine_km(a.location, b.location) >= 0.5
    # maximality: every stopped node conflicts with some active node
    for n in nodes:
        if n.imei not in active:
            assert any(haversine_km(n.location, a.location) < 0.5 for a in on)


# -- hotspot ----------------------------------------------------------------------

def test_hotspot_frequency_examples():
    assert hotspot_frequency(20.0, 20.0, 0.2, 1.0) == 0.2
    assert hotspot_frequency(0.0, 20.0, 0.2, 1.0) == 1.0
    assert hotspot_frequency(4.0, 20.0, 0.2, 1.0) == pytest.approx(0.2 + 0.8 * 0.8)
    assert hotspot_frequency(40.0, 20.0, 0.2, 1.0) == 0.2


@given(st.floats(0, 100), st.floats(0, 100), st.floats(1, 100))
def test_hotspot_frequency_monotone_and_bounded(a, b, ff):
    lo, hi = sorted((a, b))
    f_lo, f_hi = hotspot_frequency(lo, ff, 0.2, 1.0), hotspot_frequency(hi, ff, 0.2, 1.0)
    assert 0.2 <= f_hi <= f_lo <= 1.0


SEG = RoadSegment("1", GeoPoint(40.75, -73.99), destination(GeoPoint(40.75, -73.99), 90.0, 1.0), 20.0)


def _hotspot_directive(state, sensors=("GPS",), **params):
    pol = HotspotPolicy(PolicyParams(segments=(SEG,), **params))
    pol.state["1"] = state
    on_segment = destination(SEG.start, 90.0, 0.5)
    d = fleet(("bus", on_segment, 90, sensors))
    return pol.tick(ctx_for(d)).get("bus")


def test_hotspot_directives():
    slow = _hotspot_directive(SegmentState(4.0, 20.0, False, 0.0))
    assert slow.sensors == (SensorSetting("GPS", 0.84),) and slow.capture_image
    flagged = _hotspot_directive(SegmentState(10.0, 20.0, True, 0.0))
    assert flagged.sensors == (SensorSetting("GPS", 1.0),) and not flagged.capture_image
    free = _hotspot_directive(SegmentState(20.0, 20.0, False, 0.0))
    assert free.sensors == (SensorSetting("GPS", 0.2),)
    assert not _hotspot_directive(SegmentState(25.0, 20.0, False, 0.0), deactivate_free_flow=True).active
    # nothing known yet: default frequency clamped into the bounds
    assert _hotspot_directive(SegmentState(None, 20.0, False, 0.0)).sensors == (SensorSetting("GPS", 1.0),)
    # nodes without the hotspot sensor just run their own sensors
    assert _hotspot_directive(SegmentState(4.0, 20.0, True, 0.0), sensors=("AirQuality",)).sensors == (
        SensorSetting("AirQuality", 1.0),)


def test_hotspot_needs_segments():
    with pytest.raises(ConfigError):
        HotspotPolicy().tick(ctx_for(fleet()))


# -- cleanliness --------------------------------------------------------------

def clean_fleet(dirt):
    d = fleet(("cam", DELHI, 90, ("AirQuality", "PM2.5", "Humidity")))
    if dirt is not None:
        img = encode_image(synthetic_image(dirt, random.Random(0)))
        d.on_data(ImageDataMsg("cam", DELHI.latitude, DELHI.longitude, img), now=10.0)
    return d


def test_dirty_scene_starts_aux_sensors():
    pol = CleanlinessPolicy().tick(ctx_for(clean_fleet(0.5), 20.0)).get("cam")
    assert {s.name for s in pol.sensors} == {"AirQuality", "PM2.5", "Humidity"}
    assert not pol.capture_image


def test_clean_scene_keeps_base_sensors():
    pol = CleanlinessPolicy().tick(ctx_for(clean_fleet(0.0), 20.0)).get("cam")
    assert [s.name for s in pol.sensors] == ["AirQuality"]


def test_capture_when_no_recent_image():
    assert CleanlinessPolicy().tick(ctx_for(clean_fleet(None), 0.0)).get("cam").capture_image
    assert CleanlinessPolicy().tick(ctx_for(clean_fleet(0.0), 310.0)).get("cam").capture_image


def test_detector_failure_keeps_previous_directive():
    def broken(_):
        raise DetectorError("boom")
    prev_d = Directive(True, (SensorSetting("AirQuality", 1.0), SensorSetting("PM2.5", 1.0)))
    prev = SensingPolicy(0, {"cam": prev_d})
    pol = CleanlinessPolicy(detector=broken)
    out = pol.tick(ctx_for(clean_fleet(0.5), 20.0, previous=prev))
    assert out.get("cam") == prev_d
    assert out.annotations["detector_failures"] == 1


# -- detector -----------------------------------------------------------------

def test_detector_examples():
    assert detector_stub(png(np.full((16, 16), 128))) == 0.0
    half = np.zeros((16, 16))
    half[:, 8:] = 255
    assert detector_stub(png(half)) == 0.5
    whole = png(half)
    with pytest.raises(DetectorError):
        detector_stub(whole[: len(whole) // 2])
    with pytest.raises(DetectorError):
        detector_stub(b"")


@given(st.floats(0, 0.45))
def test_synthetic_images_score_near_their_dirt(dirt):
    score = detector_stub(synthetic_image(dirt, random.Random(3), size=64))
    assert score == pytest.approx(dirt, abs=0.05)


# -- runner ---------------------------------------------------------------------

class Edge:
    """In-process edge: records commands and answers SEND with an end marker."""

    def __init__(self, driver, imei):
        self.driver, self.imei, self.log, self.replies = driver, imei, [], []
        self._end = SensorDataMsg(imei, 0.0, 0.0, {})
        driver.attach_command_channel(imei, self.on_frame)

    def on_frame(self, frame):
        cmd = decode(frame)
        self.log.append(cmd.message_type.value)
        if cmd.message_type is CommandType.SEND:
            self.replies.append(self._end)

    def settle(self):
        while self.replies:
            self.driver.on_data(self.replies.pop(0))


def runner_for(driver, policy, edges):
    def settle():
        for e in edges:
            e.settle()
    ex = CommandExecutor(driver, settle=settle)
    return PolicyRunner(driver, ex, policy)


class Flaky(SpatialCoveragePolicy):
    def __init__(self):
        super().__init__()
        self.calls = 0

    def tick(self, ctx):
        self.calls += 1
        if self.calls == 2:
            raise RuntimeError("model exploded")
        return super().tick(ctx)


def test_failing_policy_keeps_last_good():
    nodes = five_nodes(0.4)
    d = fleet(*nodes)
    edges = [Edge(d, imei) for imei, *_ in nodes]
    r = runner_for(d, Flaky(), edges)
    first = r.tick(5.0)
    second = r.tick(10.0)
    assert second.policy_id is None and r.errors == 1
    assert second.policy is first.policy
    recording = {imei for imei, rec in second.snapshot.nodes.items() if isinstance(rec.session, Recording)}
    assert recording == set(first.policy.active_nodes())
    assert r.tick(15.0).policy_id == first.policy_id + 1


def test_convergence_acted_on_at_next_tick_only():
    a, b = DELHI, destination(DELHI, 90.0, 1.0)
    d = fleet(("1", a, 90, ("AirQuality",)), ("2", b, 50, ("AirQuality",)))
    edges = [Edge(d, "1"), Edge(d, "2")]
    r = runner_for(d, SpatialCoveragePolicy(), edges)
    r.tick(5.0)
    assert edges[1].log == ["START"]
    d.on_keepalive(ka("2", destination(DELHI, 90.0, 0.3), 50), "a", now=7.0)
    assert edges[1].log == ["START"]            # nothing mid-tick
    r.tick(10.0)
    assert edges[1].log == ["START", "STOP", "SEND"]


def test_tick_times_must_increase():
    r = runner_for(fleet(), SpatialCoveragePolicy(), [])
    r.tick(5.0)
    with pytest.raises(ValueError):
        r.tick(5.0)


def test_slow_ticks_are_coalesced():
    class Clock:
        t = 0.0

        def now(self):
            return self.t

        async def sleep_until(self, t):
            self.t = max(self.t, t)
            await asyncio.sleep(0)

    clock = Clock()
    stop = asyncio.Event()

    class Slow(SpatialCoveragePolicy):
        def tick(self, ctx):
            clock.t += 12.0        # each tick takes 12 s against a 5 s period
            if clock.t > 60:
                stop.set()
            return super().tick(ctx)

    r = runner_for(fleet(), Slow(), [])
    asyncio.run(run_policy_loop(r, clock, 5.0, stop))
    assert r.ticks == 5
    assert r.coalesced >= 2 * r.ticks - 1
