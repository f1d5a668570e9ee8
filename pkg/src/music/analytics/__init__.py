from music.analytics.geo import EARTH_RADIUS_KM, GeoPoint, destination, haversine_km, haversine_many
from music.analytics.idw import BoundingBox, PollutionField, idw_estimate, idw_field, loocv_error
from music.analytics.traffic import (
    Fix,
    HotspotFlags,
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

__all__ = [
    "EARTH_RADIUS_KM", "GeoPoint", "destination", "haversine_km", "haversine_many",
    "BoundingBox", "PollutionField", "idw_estimate", "idw_field", "loocv_error",
    "Fix", "HotspotFlags", "RoadSegment", "SegmentSpeedSeries", "SpeedWindow",
    "detect_hotspots", "detect_outliers", "flag_timeline", "segment_flags", "forecast_ewma",
    "free_flow_speed", "map_to_segment", "segment_speeds",
]
