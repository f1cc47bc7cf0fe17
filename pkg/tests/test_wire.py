import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from depsolar.messages import MessageKind, ProtocolMessage
from depsolar.wire import (MAX_FRAME, FrameDecoder, IncompleteFrame, OversizeFrame, ProtocolError,
                           UnknownKind, decode_frame, encode_frame)

scalar = st.one_of(st.integers(-2**53, 2**53), st.floats(allow_nan=False, allow_infinity=False),
                   st.text(max_size=20), st.booleans(), st.none())
body = st.dictionaries(st.text(min_size=1, max_size=12), st.one_of(scalar, st.lists(scalar, max_size=6)),
                       max_size=8)
messages = st.builds(ProtocolMessage, st.sampled_from(list(MessageKind)), st.integers(0, 2**31),
                     st.integers(0, 2**31), st.integers(0, 2**40),
                     st.floats(0, 1e12, allow_nan=False), body)


@settings(max_examples=10_000, deadline=None)
@given(messages)
def test_round_trip(msg):
    assert decode_frame(encode_frame(msg)) == msg


def test_header_is_big_endian_length():
    frame = encode_frame(ProtocolMessage(MessageKind.SENSOR, 1, 1, 1, 0.0, {"x": [1.0, 2.0]}))
    assert struct.unpack(">I", frame[:4])[0] == len(frame) - 4


def test_empty_input_incomplete():
    with pytest.raises(IncompleteFrame):
        decode_frame(b"")


def test_truncated_payload_incomplete():
    frame = encode_frame(ProtocolMessage(MessageKind.HEARTBEAT, 1, 1, 1, 0.0, {}))
    for cut in (1, 3, 4, len(frame) - 1):
        with pytest.raises(IncompleteFrame):
            decode_frame(frame[:cut])


def test_oversize_declared_length():
    with pytest.raises(OversizeFrame):
        decode_frame(struct.pack(">I", 70_000) + b"{}")
    with pytest.raises(OversizeFrame):
        encode_frame(ProtocolMessage(MessageKind.HEARTBEAT, 1, 1, 1, 0.0, {"pad": "x" * MAX_FRAME}))


def test_unknown_kind_raises_and_is_counted_in_stream():
    good = encode_frame(ProtocolMessage(MessageKind.HEARTBEAT, 1, 1, 1, 0.0, {}))
    payload = b'{"epoch":1,"kind":"GOSSIP","sender":1,"sent_at":0.0,"seq":1}'
    bad = struct.pack(">I", len(payload)) + payload
    with pytest.raises(UnknownKind):
        decode_frame(bad)
    dec = FrameDecoder()
    out = dec.feed(bad + good)
    assert len(out) == 1 and dec.unknown == 1


def test_malformed_payload():
    with pytest.raises(ProtocolError):
        decode_frame(struct.pack(">I", 3) + b"abc")
    payload = b'{"kind":"HEARTBEAT","sender":1,"epoch":1,"seq":1,"sent_at":0,"stray":1}'
    with pytest.raises(ProtocolError):
        decode_frame(struct.pack(">I", len(payload)) + payload)


def test_rejects_nested_body():
    with pytest.raises(ValueError):
        encode_frame(ProtocolMessage(MessageKind.CONTROL, 1, 1, 1, 0.0, {"u": {"a": 1}}))


@settings(max_examples=50)
@given(st.lists(messages, min_size=1, max_size=6), st.integers(1, 17))
def test_stream_decoder_handles_arbitrary_chunking(msgs, chunk):
    data = b"".join(encode_frame(m) for m in msgs)
    dec, out = FrameDecoder(), []
    for i in range(0, len(data), chunk):
        out.extend(dec.feed(data[i:i + chunk]))
    assert out == msgs
