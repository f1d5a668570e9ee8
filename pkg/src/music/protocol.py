"""Wire messages exchanged between edges and the controller.

Every message is a single JSON object on one line (newline-delimited JSON).
Field names on the wire match the edge app exactly; Python attributes use
snake_case and are mapped in :func:`to_wire` / :func:`decode`.

Edge -> controller: :class:`KeepAliveMsg`, :class:`SensorDataMsg`,
:class:`ImageDataMsg`.  Controller -> edge: :class:`CommandMsg`.
"""

from __future__ import annotations

import base64
import binascii
import enum
import json
import math
import zlib
from dataclasses import dataclass, field
from typing import Any, Union

from music.errors import (
    EncodeError,
    FrameTooLargeError,
    ParseError,
    SchemaError,
    UnsupportedCommandError,
)

MAX_FRAME_BYTES = 16 * 1024 * 1024
NEWLINE = b"\n"


class CommandType(str, enum.Enum):
    START = "START"
    STOP = "STOP"
    SEND = "SEND"
    CAPTURE_IMAGE = "CAPTURE_IMAGE"


@dataclass(frozen=True)
class SensorSetting:
    name: str
    frequency: float


@dataclass(frozen=True)
class KeepAliveMsg:
    imei: str
    ip: str
    battery_life: int
    latitude: float
    longitude: float
    sensors: tuple[str, ...] = ()


@dataclass(frozen=True)
class ImageDataMsg:
    imei: str
    latitude: float
    longitude: float
    encoded_image: str

    def image_bytes(self) -> bytes:
        return base64.b64decode(self.encoded_image, validate=True)


@dataclass
class SensorSession:
    sensor_name: str
    records: list[dict[str, Any]] = field(default_factory=list)


@dataclass
class SensorDataMsg:
    """Sensor readings for one or more recording sessions.

    ``sensor_data`` maps a sensor name to the list of sessions recorded for
    it.  A message with no sessions at all is the end-of-send marker.
    When ``compressed`` is set the sessions travel as a DEFLATE+base64 blob
    under ``sensorDataCompressed`` instead of ``sensorData``.
    """

    imei: str
    latitude: float
    longitude: float
    sensor_data: dict[str, list[SensorSession]] = field(default_factory=dict)
    compressed: bool = False

    @property
    def is_end_marker(self) -> bool:
        return not self.sensor_data

    def sample_count(self) -> int:
        return sum(len(s.records) for sessions in self.sensor_data.values() for s in sessions)

    def records(self, sensor: str | None = None):
        for name, sessions in self.sensor_data.items():
            if sensor is not None and name != sensor:
                continue
            for session in sessions:
                yield from session.records


@dataclass(frozen=True)
class CommandMsg:
    message_type: CommandType
    sensors: tuple[SensorSetting, ...] = ()
    compress: bool = False

    @classmethod
    def start(cls, sensors) -> "CommandMsg":
        return cls(CommandType.START, tuple(sensors))

    @classmethod
    def stop(cls) -> "CommandMsg":
        return cls(CommandType.STOP)

    @classmethod
    def send(cls, compress: bool = False) -> "CommandMsg":
        return cls(CommandType.SEND, compress=compress)

    @classmethod
    def capture_image(cls) -> "CommandMsg":
        return cls(CommandType.CAPTURE_IMAGE)


Message = Union[KeepAliveMsg, SensorDataMsg, ImageDataMsg, CommandMsg]
DataMessage = Union[SensorDataMsg, ImageDataMsg]


# -- validation ------------------------------------------------------------

def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _check_imei(imei) -> None:
    if not isinstance(imei, str) or not imei:
        raise EncodeError("imei", "must be a non-empty string")


def _check_position(lat, lon) -> None:
    if not _is_number(lat) or not -90.0 <= lat <= 90.0:
        raise EncodeError("latitude", f"must be within [-90, 90], got {lat!r}")
    if not _is_number(lon) or not -180.0 <= lon <= 180.0:
        raise EncodeError("longitude", f"must be within [-180, 180], got {lon!r}")


def _check_records(name: str, records) -> None:
    last_ts = None
    for i, rec in enumerate(records):
        where = f"sensorData.{name}.sensorSessionData[{i}]"
        if not isinstance(rec, dict):
            raise EncodeError(where, "record must be an object")
        for key in ("measurement_unit", "name"):
            if not isinstance(rec.get(key), str):
                raise EncodeError(f"{where}.{key}", "must be a string")
        ts = rec.get("timestamp")
        if ts is None:
            continue
        if not isinstance(ts, int) or isinstance(ts, bool):
            raise EncodeError(f"{where}.timestamp", "must be integer epoch milliseconds")
        if last_ts is not None and ts < last_ts:
            raise EncodeError(f"{where}.timestamp", "timestamps must be non-decreasing")
        last_ts = ts


def validate(msg: Message) -> None:
    """Raise :class:`EncodeError` naming the first violated field."""
    if isinstance(msg, KeepAliveMsg):
        _check_imei(msg.imei)
        if not isinstance(msg.ip, str):
            raise EncodeError("ip", "must be a string")
        if not isinstance(msg.battery_life, int) or isinstance(msg.battery_life, bool):
            raise EncodeError("battery_life", "must be an integer percent")
        if not 0 <= msg.battery_life <= 100:
            raise EncodeError("battery_life", f"must be within [0, 100], got {msg.battery_life}")
        _check_position(msg.latitude, msg.longitude)
        if not all(isinstance(s, str) for s in msg.sensors):
            raise EncodeError("sensors", "must be a list of strings")
    elif isinstance(msg, ImageDataMsg):
        _check_imei(msg.imei)
        _check_position(msg.latitude, msg.longitude)
        if not isinstance(msg.encoded_image, str):
            raise EncodeError("encodedImageString", "must be a string")
        try:
            base64.b64decode(msg.encoded_image, validate=True)
        except (binascii.Error, ValueError) as exc:
            raise EncodeError("encodedImageString", f"not valid base64 ({exc})") from None
    elif isinstance(msg, SensorDataMsg):
        _check_imei(msg.imei)
        _check_position(msg.latitude, msg.longitude)
        for name, sessions in msg.sensor_data.items():
            for session in sessions:
                if session.sensor_name != name:
                    raise EncodeError(
                        f"sensorData.{name}.sensorName",
                        f"session name {session.sensor_name!r} differs from key",
                    )
                _check_records(name, session.records)
    elif isinstance(msg, CommandMsg):
        if not isinstance(msg.message_type, CommandType):
            raise EncodeError("messageType", f"unsupported value {msg.message_type!r}")
        if msg.message_type is CommandType.START:
            if not msg.sensors:
                raise EncodeError("sensors", "START requires at least one sensor")
            for s in msg.sensors:
                if not s.name:
                    raise EncodeError("sensors.name", "must be non-empty")
                if not _is_number(s.frequency) or s.frequency <= 0:
                    raise EncodeError("sensors.frequency", f"must be > 0, got {s.frequency!r}")
        elif msg.sensors:
            raise EncodeError("sensors", f"only START carries sensors, not {msg.message_type.value}")
        if msg.compress and msg.message_type is not CommandType.SEND:
            raise EncodeError("compress", "only SEND carries the compress flag")
    else:
        raise EncodeError("message", f"not a protocol message: {type(msg).__name__}")


# -- encoding --------------------------------------------------------------

def _sessions_to_wire(sensor_data: dict[str, list[SensorSession]]) -> dict:
    return {
        name: [{"sensorName": s.sensor_name, "sensorSessionData": s.records} for s in sessions]
        for name, sessions in sensor_data.items()
    }


def canonical_json(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=True, allow_nan=False)


def to_wire(msg: Message) -> dict:
    """Return the JSON object for ``msg`` with wire field names, in a fixed field order."""
    if isinstance(msg, KeepAliveMsg):
        return {
            "battery_life": msg.battery_life,
            "imei": msg.imei,
            "ip": msg.ip,
            "isData": False,
            "isImage": False,
            "keep_alive_status": True,
            "latitude": msg.latitude,
            "longitude": msg.longitude,
            "sensors": list(msg.sensors),
        }
    if isinstance(msg, ImageDataMsg):
        return {
            "imei": msg.imei,
            "isData": False,
            "isImage": True,
            "latitude": msg.latitude,
            "longitude": msg.longitude,
            "encodedImageString": msg.encoded_image,
        }
    if isinstance(msg, SensorDataMsg):
        obj = {
            "imei": msg.imei,
            "isData": True,
            "isImage": False,
            "latitude": msg.latitude,
            "longitude": msg.longitude,
        }
        body = _sessions_to_wire(msg.sensor_data)
        if msg.compressed:
            packed = zlib.compress(canonical_json(body).encode("utf-8"))
            obj["sensorDataCompressed"] = base64.b64encode(packed).decode("ascii")
        else:
            obj["sensorData"] = body
        return obj
    if isinstance(msg, CommandMsg):
        obj = {"messageType": msg.message_type.value}
        if msg.message_type is CommandType.START:
            if len(msg.sensors) == 1:
                # flat form for one sensor; decode accepts either shape
                obj["sensor"], obj["frequency"] = msg.sensors[0].name, msg.sensors[0].frequency
            else:
                obj["sensors"] = [{"name": s.name, "frequency": s.frequency} for s in msg.sensors]
        if msg.compress:
            obj["compress"] = True
        return obj
    raise EncodeError("message", f"not a protocol message: {type(msg).__name__}")


def encode(msg: Message) -> bytes:
    """Validate ``msg`` and return one newline-terminated frame."""
    validate(msg)
    try:
        text = canonical_json(to_wire(msg))
    except (TypeError, ValueError) as exc:
        raise EncodeError("message", f"not JSON-serializable: {exc}") from None
    return text.encode("utf-8") + NEWLINE


# -- decoding --------------------------------------------------------------

def _require(obj: dict, key: str, kind, what: str):
    if key not in obj:
        raise SchemaError(f"missing field {key!r}")
    value = obj[key]
    ok = isinstance(value, kind) and not (kind is not bool and isinstance(value, bool))
    if not ok:
        raise SchemaError(f"field {key!r} must be {what}")
    return value


def _require_flag(obj: dict, key: str, expected: bool) -> None:
    if obj.get(key) is not expected:
        raise SchemaError(f"field {key!r} must be {str(expected).lower()}")


def _position(obj: dict) -> tuple[float, float]:
    lat = _require(obj, "latitude", (int, float), "a number")
    lon = _require(obj, "longitude", (int, float), "a number")
    return float(lat), float(lon)


def _sessions_from_wire(raw) -> dict[str, list[SensorSession]]:
    if not isinstance(raw, dict):
        raise SchemaError("sensorData must be an object")
    out: dict[str, list[SensorSession]] = {}
    for name, sessions in raw.items():
        if not isinstance(sessions, list):
            raise SchemaError(f"sensorData.{name} must be a list of sessions")
        parsed = []
        for s in sessions:
            if not isinstance(s, dict):
                raise SchemaError(f"sensorData.{name} session must be an object")
            sname = _require(s, "sensorName", str, "a string")
            records = _require(s, "sensorSessionData", list, "a list")
            parsed.append(SensorSession(sname, records))
        out[name] = parsed
    return out


def _decode_command(obj: dict) -> CommandMsg:
    raw_type = obj["messageType"]
    try:
        kind = CommandType(raw_type)
    except ValueError:
        raise UnsupportedCommandError(f"unsupported messageType {raw_type!r}") from None
    sensors: list[SensorSetting] = []
    if kind is CommandType.START:
        if "sensors" in obj:
            entries = _require(obj, "sensors", list, "a list")
        elif "sensor" in obj:
            # singular form from the original edge app
            entries = [{"name": obj["sensor"], "frequency": obj.get("frequency")}]
        else:
            raise SchemaError("START requires 'sensors'")
        for e in entries:
            if not isinstance(e, dict):
                raise SchemaError("sensors entries must be objects")
            name = _require(e, "name", str, "a string")
            freq = _require(e, "frequency", (int, float), "a number")
            if not name:
                raise SchemaError("sensor name must be non-empty")
            if not math.isfinite(freq) or freq <= 0:
                raise SchemaError(f"frequency must be > 0, got {freq!r}")
            sensors.append(SensorSetting(name, float(freq)))
    compress = False
    if kind is CommandType.SEND and "compress" in obj:
        compress = _require(obj, "compress", bool, "a boolean")
    return CommandMsg(kind, tuple(sensors), compress)


def from_wire(obj) -> Message:
    """Build the typed message for an already-parsed JSON object."""
    if not isinstance(obj, dict):
        raise SchemaError("frame must hold a JSON object")
    if "messageType" in obj:
        return _decode_command(obj)
    if obj.get("keep_alive_status") is True:
        _require_flag(obj, "isData", False)
        _require_flag(obj, "isImage", False)
        lat, lon = _position(obj)
        sensors = _require(obj, "sensors", list, "a list")
        if not all(isinstance(s, str) for s in sensors):
            raise SchemaError("sensors must be a list of strings")
        msg = KeepAliveMsg(
            imei=_require(obj, "imei", str, "a string"),
            ip=_require(obj, "ip", str, "a string"),
            battery_life=_require(obj, "battery_life", int, "an integer"),
            latitude=lat,
            longitude=lon,
            sensors=tuple(sensors),
        )
    elif obj.get("isImage") is True:
        _require_flag(obj, "isData", False)
        lat, lon = _position(obj)
        msg = ImageDataMsg(
            imei=_require(obj, "imei", str, "a string"),
            latitude=lat,
            longitude=lon,
            encoded_image=_require(obj, "encodedImageString", str, "a string"),
        )
    elif obj.get("isData") is True:
        _require_flag(obj, "isImage", False)
        lat, lon = _position(obj)
        compressed = "sensorDataCompressed" in obj
        if compressed:
            blob = _require(obj, "sensorDataCompressed", str, "a string")
            try:
                raw = json.loads(zlib.decompress(base64.b64decode(blob, validate=True)))
            except (binascii.Error, zlib.error, ValueError) as exc:
                raise SchemaError(f"sensorDataCompressed is not valid DEFLATE+base64: {exc}") from None
        else:
            raw = _require(obj, "sensorData", dict, "an object")
        msg = SensorDataMsg(
            imei=_require(obj, "imei", str, "a string"),
            latitude=lat,
            longitude=lon,
            sensor_data=_sessions_from_wire(raw),
            compressed=compressed,
        )
    else:
        raise SchemaError("no discriminator: expected messageType, keep_alive_status, isImage or isData")
    try:
        validate(msg)
    except EncodeError as exc:
        raise SchemaError(str(exc)) from None
    return msg


def decode(frame: bytes | str) -> Message:
    """Parse one frame (trailing newline optional) into a typed message."""
    if isinstance(frame, bytes):
        try:
            frame = frame.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"frame is not UTF-8: {exc}") from None
    text = frame.rstrip("\r\n")
    if "\n" in text:
        raise ParseError("frame contains an interior newline")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc}") from None
    return from_wire(obj)


# -- framing ---------------------------------------------------------------

def deframe(chunk: bytes, carry: bytes = b"", max_bytes: int = MAX_FRAME_BYTES) -> tuple[list[bytes], bytes]:
    """Split ``carry + chunk`` into complete newline-terminated frames.

    Returns the frames (each still ending in ``b"\\n"``) and the new carry.
    """
    buf = carry + chunk
    frames = []
    start = 0
    while True:
        nl = buf.find(NEWLINE, start)
        if nl < 0:
            break
        frames.append(buf[start:nl + 1])
        start = nl + 1
    rest = buf[start:]
    if len(rest) > max_bytes:
        raise FrameTooLargeError(f"partial frame of {len(rest)} bytes exceeds {max_bytes}")
    return frames, rest


class Deframer:
    """Stateful wrapper around :func:`deframe` for one stream."""

    def __init__(self, max_bytes: int = MAX_FRAME_BYTES):
        self.max_bytes = max_bytes
        self.carry = b""

    def feed(self, chunk: bytes) -> list[bytes]:
        frames, self.carry = deframe(chunk, self.carry, self.max_bytes)
        return frames


def message_kind(msg: Message) -> str:
    """Short label used by counters and reports."""
    if isinstance(msg, KeepAliveMsg):
        return "keepalive"
    if isinstance(msg, ImageDataMsg):
        return "image"
    if isinstance(msg, SensorDataMsg):
        return "end_marker" if msg.is_end_marker else "sensor_data"
    return msg.message_type.value
