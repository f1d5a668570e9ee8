import json
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from music.errors import (
    EncodeError,
    FrameTooLargeError,
    ParseError,
    SchemaError,
    UnsupportedCommandError,
)
from music.protocol import (
    CommandMsg,
    CommandType,
    Deframer,
    ImageDataMsg,
    KeepAliveMsg,
    SensorDataMsg,
    SensorSession,
    SensorSetting,
    decode,
    deframe,
    encode,
)
from strategies import messages

FIXTURES = Path(__file__).parent / "fixtures"


def fields_of(frame: bytes) -> dict:
    return json.loads(frame)


# -- goldens ---------------------------------------------------------------

def test_keepalive_golden_decodes_exact_values():
    raw = (FIXTURES / "keepalive.json").read_bytes()
    msg = decode(raw)
    assert msg == KeepAliveMsg(
        imei="353323062860043", ip="172.16.19.89", battery_life=95,
        latitude=40.7348562, longitude=-73.9949165, sensors=("Accelerometer", "Compass"),
    )
    assert fields_of(encode(msg)) == json.loads(raw)


def test_image_golden():
    raw = (FIXTURES / "image.json").read_bytes()
    msg = decode(raw)
    assert isinstance(msg, ImageDataMsg)
    assert (msg.imei, msg.latitude, msg.longitude) == ("353323062860043", 40.7348562, -73.9949165)
    assert msg.image_bytes() == b"image"
    assert fields_of(encode(msg)) == json.loads(raw)


def test_sensor_data_golden():
    raw = (FIXTURES / "sensor_data.json").read_bytes()
    msg = decode(raw)
    assert isinstance(msg, SensorDataMsg)
    [session] = msg.sensor_data["accelerometer"]
    assert session.sensor_name == "accelerometer"
    assert session.records == [{
        "measurement_unit": "meters per second squared", "name": "Accelerometer",
        "x": -0.15322891, "y": 3.7828386, "z": 8.820239,
    }]
    assert msg.sample_count() == 1
    assert fields_of(encode(msg)) == json.loads(raw)


def test_command_goldens():
    start, stop, send = (decode(line) for line in (FIXTURES / "commands.ndjson").read_bytes().splitlines())
    assert start == CommandMsg.start([SensorSetting("Accelerometer", 5.0)])
    assert stop == CommandMsg.stop()
    assert send == CommandMsg.send()
    assert encode(stop) == b'{"messageType":"STOP"}\n'
    assert encode(send) == b'{"messageType":"SEND"}\n'
    assert fields_of(encode(start)) == {"messageType": "START", "sensor": "Accelerometer", "frequency": 5.0}
    pair = CommandMsg.start([SensorSetting("GPS", 1.0), SensorSetting("Compass", 0.5)])
    assert fields_of(encode(pair))["sensors"] == [{"name": "GPS", "frequency": 1.0}, {"name": "Compass", "frequency": 0.5}]


def test_keepalive_field_set_and_empty_sensors():
    msg = KeepAliveMsg("1", "10.0.0.1", 50, 0.0, 0.0, ())
    obj = fields_of(encode(msg))
    assert set(obj) == {"battery_life", "imei", "ip", "isData", "isImage", "keep_alive_status",
                        "latitude", "longitude", "sensors"}
    assert obj["sensors"] == []
    assert decode(encode(msg)) == msg


def test_frame_is_one_line():
    frame = encode(KeepAliveMsg("1", "line\nbreak", 1, 0.0, 0.0))
    assert frame.endswith(b"\n") and frame.count(b"\n") == 1


# -- round trip --------------------------------------------------------------

@settings(max_examples=400)
@given(messages)
def test_round_trip(msg):
    assert decode(encode(msg)) == msg


# -- errors ---------------------------------------------------------------------

@pytest.mark.parametrize("frame, error", [
    (b"{}\n", SchemaError),
    (b"[1]\n", SchemaError),
    (b"{not json\n", ParseError),
    (b"\xff\xfe\n", ParseError),
    (b'{"messageType":"REBOOT"}\n', UnsupportedCommandError),
    (b'{"messageType":"START","sensors":[{"name":"GPS","frequency":0}]}\n', SchemaError),
    (b'{"messageType":"START"}\n', SchemaError),
    (b'{"keep_alive_status":true,"isData":false,"isImage":false,"imei":"1","ip":"x",'
     b'"battery_life":101,"latitude":0,"longitude":0,"sensors":[]}\n', SchemaError),
    (b'{"isImage":true,"isData":false,"imei":"1","latitude":0,"longitude":0,'
     b'"encodedImageString":"***"}\n', SchemaError),
    (b'{"isData":true,"isImage":false,"imei":"1","latitude":95,"longitude":0,"sensorData":{}}\n', SchemaError),
])
def test_decode_errors(frame, error):
    with pytest.raises(error):
        decode(frame)


@pytest.mark.parametrize("msg, field", [
    (KeepAliveMsg("", "ip", 1, 0.0, 0.0), "imei"),
    (KeepAliveMsg("1", "ip", 101, 0.0, 0.0), "battery_life"),
    (KeepAliveMsg("1", "ip", 1, 91.0, 0.0), "latitude"),
    (KeepAliveMsg("1", "ip", 1, 0.0, float("nan")), "longitude"),
    (CommandMsg(CommandType.START, ()), "sensors"),
    (CommandMsg.start([SensorSetting("GPS", -1.0)]), "sensors.frequency"),
    (CommandMsg(CommandType.STOP, compress=True), "compress"),
    (ImageDataMsg("1", 0.0, 0.0, "not base64!"), "encodedImageString"),
])
def test_encode_names_violated_field(msg, field):
    with pytest.raises(EncodeError) as info:
        encode(msg)
    assert info.value.field == field


def test_unordered_timestamps_rejected():
    msg = SensorDataMsg("1", 0.0, 0.0, {"GPS": [SensorSession("GPS", [
        {"measurement_unit": "", "name": "GPS", "timestamp": 2},
        {"measurement_unit": "", "name": "GPS", "timestamp": 1},
    ])]})
    with pytest.raises(EncodeError):
        encode(msg)


def test_mismatched_session_name_rejected():
    with pytest.raises(EncodeError):
        encode(SensorDataMsg("1", 0.0, 0.0, {"GPS": [SensorSession("Compass", [])]}))


def test_compressed_payload_round_trip_is_smaller():
    recs = [{"measurement_unit": "u", "name": "AirQuality", "timestamp": i, "value": 1.0} for i in range(200)]
    plain = SensorDataMsg("1", 0.0, 0.0, {"AirQuality": [SensorSession("AirQuality", recs)]})
    packed = SensorDataMsg("1", 0.0, 0.0, {"AirQuality": [SensorSession("AirQuality", recs)]}, compressed=True)
    assert len(encode(packed)) < len(encode(plain)) / 5
    assert decode(encode(packed)) == packed


# -- framing --------------------------------------------------------------------

def test_two_messages_one_chunk():
    frames, carry = deframe(encode(CommandMsg.stop()) + encode(CommandMsg.send()))
    assert [decode(f) for f in frames] == [CommandMsg.stop(), CommandMsg.send()]
    assert carry == b""


def test_split_across_three_chunks():
    frame = encode(KeepAliveMsg("353323062860043", "ip", 5, 1.0, 2.0))
    d = Deframer()
    a, b = len(frame) // 3, 2 * len(frame) // 3
    assert d.feed(frame[:a]) == []
    assert d.feed(frame[a:b]) == []
    assert d.feed(frame[b:]) == [frame]
    assert d.carry == b""


def test_carry_cap():
    with pytest.raises(FrameTooLargeError):
        deframe(b"x" * 101, max_bytes=100)
    frames, carry = deframe(b"x" * 100, max_bytes=100)
    assert frames == [] and len(carry) == 100


@given(st.lists(messages, max_size=6), st.data())
def test_deframing_is_chunking_invariant(msgs, data):
    stream = b"".join(encode(m) for m in msgs) + b'{"partial'
    whole, whole_carry = deframe(stream)
    cuts = sorted(data.draw(st.lists(st.integers(0, len(stream)), max_size=10)))
    d = Deframer()
    got = []
    prev = 0
    for c in cuts + [len(stream)]:
        got += d.feed(stream[prev:c])
        prev = c
    assert got == whole
    assert d.carry == whole_carry
    assert b"".join(got) + d.carry == stream
    assert [decode(f) for f in got] == msgs
