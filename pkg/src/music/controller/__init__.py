from music.controller.driver import (
    DispatchResult,
    Driver,
    NodeDied,
    NodeRecord,
    RegistryDelta,
    RegistrySnapshot,
    SessionComplete,
)
from music.controller.session import AwaitingSend, Idle, Recording, SessionState
from music.controller.store import DataStore, StoredEntry, read_log, read_logs

__all__ = [
    "DispatchResult", "Driver", "NodeDied", "NodeRecord", "RegistryDelta",
    "RegistrySnapshot", "SessionComplete", "AwaitingSend", "Idle", "Recording",
    "SessionState", "DataStore", "StoredEntry", "read_log", "read_logs",
]
