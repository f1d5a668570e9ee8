from music.command.compiler import (
    COMPRESS_THRESHOLD_BYTES,
    DEFAULT_CYCLE,
    CommandBatch,
    CycleConfig,
    clamp_settings,
    compile_policy,
    cycle_tick,
    default_cycle_tick,
    default_settings,
    estimate_session_bytes,
)
from music.command.executor import POLICY_CYCLE, CommandExecutor
from music.command.policy import INACTIVE, Directive, SensingPolicy
from music.command.sensors import (
    AIR_QUALITY_RECORD_BYTES,
    DEFAULT_SENSOR_TABLE,
    SensorSpec,
    clamp_frequency,
    load_sensor_table,
    sensor_table_from_mapping,
)

__all__ = [
    "COMPRESS_THRESHOLD_BYTES", "DEFAULT_CYCLE", "CommandBatch", "CycleConfig",
    "clamp_settings", "compile_policy", "cycle_tick", "default_cycle_tick",
    "default_settings", "estimate_session_bytes", "POLICY_CYCLE", "CommandExecutor",
    "INACTIVE", "Directive", "SensingPolicy", "AIR_QUALITY_RECORD_BYTES",
    "DEFAULT_SENSOR_TABLE", "SensorSpec", "clamp_frequency", "load_sensor_table",
    "sensor_table_from_mapping",
]
