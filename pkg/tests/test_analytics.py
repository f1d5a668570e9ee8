import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from music.analytics.geo import GeoPoint, destination, haversine_km, haversine_many
from music.analytics.idw import BoundingBox, idw_estimate, idw_field, loocv_error
from music.analytics.io import read_segments, read_trace, write_segments, write_trace
from music.analytics.traffic import (
    Fix,
    RoadSegment,
    SegmentSpeedSeries,
    SpeedWindow,
    detect_hotspots,
    detect_outliers,
    flag_timeline,
    forecast_ewma,
    free_flow_speed,
    map_to_segment,
    segment_flags,
    segment_speeds,
)
from music.errors import DuplicateLocationError, InsufficientDataError, NoDataError, TraceError

# Frozen from tests/oracles.py (3-D unit-vector route), computed before the implementation.
HALF_CIRCUMFERENCE_KM = 20015.086796020572
DELHI_PAIR_KM = 0.757522059951074
COLLINEAR_LOOCV = 9.797958971132712   # sqrt(96): hold-out errors 12, 0, -12


def test_frozen_oracles_agree_with_reference():
    assert oracles.great_circle_km(0, 0, 0, 180) == pytest.approx(HALF_CIRCUMFERENCE_KM, rel=1e-12)
    assert oracles.great_circle_km(28.5472, 77.1928, 28.5449, 77.2001) == pytest.approx(DELHI_PAIR_KM, rel=1e-12)
    pts = [((0.0, 0.0), 0.0), ((0.0, 0.01), 10.0), ((0.0, 0.02), 20.0)]
    assert oracles.loocv_rmse(pts) == pytest.approx(COLLINEAR_LOOCV, rel=1e-9)


# -- haversine ------------------------------------------------------------

def test_haversine_examples():
    p = GeoPoint(28.5, 77.2)
    assert haversine_km(p, p) == 0.0
    assert haversine_km(GeoPoint(0, 0), GeoPoint(0, 180)) == pytest.approx(HALF_CIRCUMFERENCE_KM, rel=1e-9)
    assert haversine_km(GeoPoint(28.5472, 77.1928), GeoPoint(28.5449, 77.2001)) == pytest.approx(DELHI_PAIR_KM, rel=1e-9)


@given(st.floats(-90, 90), st.floats(-180, 180), st.floats(-90, 90), st.floats(-180, 180))
def test_haversine_symmetric_and_bounded(a, b, c, d):
    x = haversine_km(GeoPoint(a, b), GeoPoint(c, d))
    assert x == pytest.approx(haversine_km(GeoPoint(c, d), GeoPoint(a, b)), abs=1e-9)
    assert 0.0 <= x <= HALF_CIRCUMFERENCE_KM + 1e-6


def test_haversine_many_matches_scalar():
    rng = np.random.default_rng(1)
    lat = rng.uniform(-90, 90, (2, 50))
    lon = rng.uniform(-180, 180, (2, 50))
    many = haversine_many(lat[0], lon[0], lat[1], lon[1])
    for i in range(50):
        assert many[i] == pytest.approx(haversine_km(GeoPoint(lat[0, i], lon[0, i]), GeoPoint(lat[1, i], lon[1, i])), rel=1e-12)


@given(st.floats(-80, 80), st.floats(-179, 179), st.floats(0, 360), st.floats(0.001, 500))
def test_destination_travels_requested_distance(lat, lon, bearing, dist):
    p = GeoPoint(lat, lon)
    assert haversine_km(p, destination(p, bearing, dist)) == pytest.approx(dist, rel=1e-6, abs=1e-9)


def test_geopoint_range_checked():
    with pytest.raises(ValueError):
        GeoPoint(91, 0)


# -- IDW ------------------------------------------------------------------

def test_constant_field():
    readings = [(GeoPoint(28.5 + i * 0.01, 77.2), 42.0) for i in range(4)]
    bbox = BoundingBox.around([p for p, _ in readings], 0.5)
    field = idw_field(readings, bbox, 0.25)
    assert np.all(field.values == 42.0)
    assert loocv_error(readings) == 0.0
    assert field.loocv_rmse == 0.0


def test_single_reading_everywhere():
    r = [(GeoPoint(28.5, 77.2), 7.5)]
    field = idw_field(r, BoundingBox.around([r[0][0]], 1.0), 0.5)
    assert np.all(field.values == 7.5)
    assert field.loocv_rmse is None


def test_midpoint_symmetry():
    r = [(GeoPoint(0.0, -0.01), 10.0), (GeoPoint(0.0, 0.01), 30.0)]
    assert float(idw_estimate(0.0, 0.0, r)) == pytest.approx(20.0, abs=1e-9)


def test_collinear_loocv():
    r = [(GeoPoint(0.0, 0.0), 0.0), (GeoPoint(0.0, 0.01), 10.0), (GeoPoint(0.0, 0.02), 20.0)]
    assert loocv_error(r) == pytest.approx(COLLINEAR_LOOCV, rel=1e-9)


def test_idw_errors():
    with pytest.raises(DuplicateLocationError):
        loocv_error([(GeoPoint(0, 0), 1.0), (GeoPoint(0, 0), 2.0)])
    with pytest.raises(InsufficientDataError):
        loocv_error([(GeoPoint(0, 0), 1.0)])
    with pytest.raises(NoDataError):
        idw_estimate(0.0, 0.0, [])


@settings(max_examples=100)
@given(st.lists(st.tuples(st.floats(28.4, 28.7), st.floats(77.0, 77.3), st.floats(-50, 500)),
                min_size=1, max_size=8, unique_by=lambda t: (t[0], t[1])),
       st.floats(28.4, 28.7), st.floats(77.0, 77.3))
def test_idw_matches_loop_oracle(pts, qlat, qlon):
    readings = [(GeoPoint(a, b), v) for a, b, v in pts]
    got = float(idw_estimate(qlat, qlon, readings))
    want = oracles.idw_point(qlat, qlon, [((a, b), v) for a, b, v in pts])
    assert got == pytest.approx(want, rel=1e-6, abs=1e-6)


def test_loocv_matches_loop_oracle():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n = int(rng.integers(2, 7))
        pts = [((float(a), float(b)), float(v))
               for a, b, v in zip(rng.uniform(28.4, 28.7, n), rng.uniform(77, 77.3, n), rng.uniform(0, 300, n))]
        readings = [(GeoPoint(*p), v) for p, v in pts]
        assert loocv_error(readings) == pytest.approx(oracles.loocv_rmse(pts), rel=1e-6)


# -- map matching and segment speeds ------------------------------------------

SEG_A = RoadSegment("1", GeoPoint(0.0, 0.0), GeoPoint(0.0, 0.01), 20.0)
SEG_B = RoadSegment("2", GeoPoint(0.001, 0.0), GeoPoint(0.001, 0.01), 20.0)


def test_map_matching():
    mid = GeoPoint(0.0, 0.005)
    assert map_to_segment(mid, [SEG_A]) == "1"
    far = destination(mid, 0.0, 1.0)
    assert map_to_segment(far, [SEG_A, SEG_B]) is None
    # mirror-image segments either side of the equator: lower id wins regardless of order
    south = RoadSegment("1", GeoPoint(-0.0004, 0.0), GeoPoint(-0.0004, 0.01))
    north = RoadSegment("2", GeoPoint(0.0004, 0.0), GeoPoint(0.0004, 0.01))
    assert map_to_segment(mid, [north, south]) == "1"
    assert map_to_segment(mid, [south, north]) == "1"
    with pytest.raises(ValueError):
        map_to_segment(mid, [])


def _crossing(vehicle, seg: RoadSegment, t0: float, duration_s: float, hops: int = 6):
    out = []
    for i in range(hops + 1):
        f = i / hops
        p = GeoPoint(seg.start.latitude + (seg.end.latitude - seg.start.latitude) * f,
                     seg.start.longitude + (seg.end.longitude - seg.start.longitude) * f)
        out.append(Fix(vehicle, t0 + duration_s * f, p))
    return out


def test_one_km_in_three_minutes_is_twenty_kmh():
    seg = RoadSegment("1", GeoPoint(0.0, 0.0), destination(GeoPoint(0.0, 0.0), 90.0, 1.0))
    series = segment_speeds(_crossing("bus", seg, 0.0, 180.0), [seg], 600.0)
    [w] = series["1"].values
    assert w.start == 0.0
    assert w.mean_kmh == pytest.approx(20.0, rel=1e-9)


def test_stationary_and_empty_segments():
    p = GeoPoint(0.0, 0.005)
    series = segment_speeds([Fix("v", 0.0, p), Fix("v", 10.0, p)], [SEG_A, SEG_B], 600.0)
    assert series["1"].means() == [0.0]
    assert series["2"].values == ()


def test_non_increasing_timestamps_rejected():
    p = GeoPoint(0.0, 0.005)
    with pytest.raises(TraceError):
        segment_speeds([Fix("v", 10.0, p), Fix("v", 10.0, p)], [SEG_A])


def test_segment_speed_matches_hop_oracle():
    seg = RoadSegment("1", GeoPoint(0.0, 0.0), destination(GeoPoint(0.0, 0.0), 90.0, 2.0))
    fixes = [Fix("v", t, destination(seg.start, 90.0, d)) for t, d in [(0, 0), (60, 0.3), (150, 0.5), (300, 1.4)]]
    series = segment_speeds(fixes, [seg], 3600.0)
    want = oracles.segment_mean_kmh([0.3, 0.2, 0.9], [60, 90, 150])
    assert series["1"].values[0].mean_kmh == pytest.approx(want, rel=1e-9)


# -- hotspots -------------------------------------------------------------

def series_of(sid, means, window_s=600.0):
    return SegmentSpeedSeries(sid, window_s, tuple(SpeedWindow(i * window_s, m, 1) for i, m in enumerate(means)))


def test_hotspot_examples():
    seg = [SEG_A]
    assert not detect_hotspots({"1": series_of("1", [20, 25, 30])}, seg).flags["1"]
    hot = detect_hotspots({"1": series_of("1", [20, 4, 4])}, seg, 0.4, 2)
    assert hot.flags["1"] and hot.set_at["1"] == 1200.0
    assert not detect_hotspots({"1": series_of("1", [20, 20, 4])}, seg, 0.4, 2).flags["1"]
    assert not detect_hotspots({}, seg).flags["1"]


def test_free_flow_defaults_to_85th_percentile():
    seg = RoadSegment("9", GeoPoint(0, 0), GeoPoint(0, 0.01))
    s = series_of("9", [10, 20, 30, 40, 50])
    assert free_flow_speed(seg, s) == pytest.approx(float(np.percentile([10, 20, 30, 40, 50], 85)))
    assert free_flow_speed(seg, None) is None


@given(st.lists(st.floats(0, 60), min_size=1, max_size=8), st.integers(0, 7), st.floats(0, 10))
def test_lower_speeds_never_clear_a_flag(means, idx, drop):
    """With a configured free flow, slowing any window cannot unflag a segment."""
    idx %= len(means)
    slower = list(means)
    slower[idx] = max(0.0, slower[idx] - drop)
    before = detect_hotspots({"1": series_of("1", means)}, [SEG_A]).flags["1"]
    after = detect_hotspots({"1": series_of("1", slower)}, [SEG_A]).flags["1"]
    assert after or not before


def test_robust_outlier_mode():
    found = detect_outliers({"1": 20.0, "2": 21.0, "3": 19.0, "4": 2.0})
    assert found.hotspots() == ["4"]
    assert detect_outliers({}).flags == {}
    segs = [RoadSegment(str(i), GeoPoint(0, i * 0.01), GeoPoint(0, i * 0.01 + 0.005), 20.0) for i in range(1, 5)]
    series = {s.id: series_of(s.id, [m]) for s, m in zip(segs, [20.0, 21.0, 19.0, 2.0])}
    assert segment_flags(series, segs, mode="robust_outlier").hotspots() == ["4"]
    with pytest.raises(ValueError):
        segment_flags(series, segs, mode="vibes")


def test_flag_timeline_is_online():
    rows = flag_timeline({"1": series_of("1", [20, 4, 4, 4, 20])}, [SEG_A], 0.4, 2)
    assert [f for _, _, f in rows] == [False, False, True, True, False]
    assert [w for w, _, _ in rows] == [0.0, 600.0, 1200.0, 1800.0, 2400.0]


def test_ewma():
    assert forecast_ewma([7.0, 7.0, 7.0]) == 7.0
    assert forecast_ewma([1.0, 2.0, 9.0], lam=1.0) == 9.0
    assert forecast_ewma([10.0, 20.0], lam=0.5) == 15.0
    with pytest.raises(NoDataError):
        forecast_ewma([])


# -- CSV io -----------------------------------------------------------------

def test_trace_and_segment_csv_round_trip(tmp_path):
    fixes = [Fix("bus1", 1704067200.0 + i, GeoPoint(40.7, -74.0 + i * 1e-4)) for i in range(3)]
    write_trace(tmp_path / "t.csv", fixes)
    load = read_trace(tmp_path / "t.csv")
    assert load.fixes == fixes and load.rejected == []
    write_segments(tmp_path / "s.csv", [SEG_A])
    assert read_segments(tmp_path / "s.csv") == [SEG_A]


def test_trace_rejects_bad_rows(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("timestamp_iso8601,vehicle_id,latitude,longitude\n"
                 "2024-01-01T00:00:00Z,b,40.7,-74.0\n"
                 "garbage,b,40.7,-74.0\n"
                 "2024-01-01T00:00:01Z,b,95,-74.0\n"
                 "2024-01-01T00:00:02Z,b,40.7,-74.0\n")
    load = read_trace(p)
    assert len(load.fixes) == 2
    assert [line for line, _ in load.rejected] == [3, 4]


def test_empty_trace_is_no_data(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(NoDataError):
        read_trace(p)


def test_constant_speed_trace_windows_all_twenty():
    seg = RoadSegment("1", GeoPoint(0.0, 0.0), destination(GeoPoint(0.0, 0.0), 90.0, 5.0))
    fixes = [Fix("v", t, destination(seg.start, 90.0, 20.0 * t / 3600.0)) for t in range(0, 900, 10)]
    series = segment_speeds(fixes, [seg], 300.0)
    assert all(math.isclose(m, 20.0, rel_tol=1e-6) for m in series["1"].means())
