from music.policy.base import (
    AlwaysOnPolicy,
    DefaultPolicy,
    Policy,
    PolicyContext,
    PolicyParams,
    create_policy,
    policy_names,
    register_policy,
)
from music.policy.cleanliness import CleanlinessPolicy
from music.policy.coverage import SpatialCoveragePolicy, resolve_conflicts
from music.policy.detector import Detector, detector_stub
from music.policy.hotspot import HotspotPolicy, gps_fixes, hotspot_frequency
from music.policy.runner import PolicyRunner, TickObserver, TickRecord, run_policy_loop

__all__ = [
    "AlwaysOnPolicy", "DefaultPolicy", "Policy", "PolicyContext", "PolicyParams",
    "create_policy", "policy_names", "register_policy", "CleanlinessPolicy",
    "SpatialCoveragePolicy", "resolve_conflicts", "Detector", "detector_stub",
    "HotspotPolicy", "gps_fixes", "hotspot_frequency", "PolicyRunner", "TickObserver",
    "TickRecord", "run_policy_loop",
]
