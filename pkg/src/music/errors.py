"""Exception hierarchy shared across the stack."""

from __future__ import annotations


class MusicError(Exception):
    """Base class for every error raised by this package."""


# -- wire protocol ---------------------------------------------------------

class ProtocolError(MusicError):
    pass


class EncodeError(ProtocolError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class ParseError(ProtocolError):
    """Frame is not valid UTF-8 JSON."""


class SchemaError(ProtocolError):
    """Frame is JSON but does not match any message type."""


class UnsupportedCommandError(ProtocolError):
    pass


class FrameTooLargeError(ProtocolError):
    pass


# -- controller ------------------------------------------------------------

class ControllerError(MusicError):
    pass


class NodeNotFound(ControllerError):
    def __init__(self, imei: str):
        super().__init__(f"unknown node {imei!r}")
        self.imei = imei


class NodeDead(ControllerError):
    def __init__(self, imei: str):
        super().__init__(f"node {imei!r} is not alive; command suppressed")
        self.imei = imei


class NodeUnreachable(ControllerError):
    def __init__(self, imei: str):
        super().__init__(f"node {imei!r} has no open command connection")
        self.imei = imei


class InvalidTransition(ControllerError):
    def __init__(self, imei: str, state: str, command: str):
        super().__init__(f"node {imei!r}: {command} not allowed in state {state}")
        self.imei = imei
        self.state = state
        self.command = command


# -- command layer / analytics / policies ----------------------------------

class InvalidFrequency(MusicError, ValueError):
    pass


class AnalyticsError(MusicError, ValueError):
    pass


class NoDataError(AnalyticsError):
    pass


class InsufficientDataError(AnalyticsError):
    pass


class DuplicateLocationError(AnalyticsError):
    pass


class TraceError(AnalyticsError):
    pass


class ConfigError(MusicError):
    pass


class DetectorError(MusicError):
    pass


class ScenarioError(ConfigError):
    def __init__(self, message: str, source: str | None = None, line: int | None = None):
        where = source or "<scenario>"
        if line is not None:
            where = f"{where}:{line}"
        super().__init__(f"{where}: {message}")
        self.source = source
        self.line = line
