import pytest
from hypothesis import given, strategies as st

from moss_chain.encoding import DecodeError, decode, encode

values = st.recursive(
    st.none() | st.booleans() | st.integers(-2**70, 2**70) | st.binary(max_size=40) | st.text(max_size=20),
    lambda inner: st.lists(inner, max_size=5) | st.dictionaries(st.text(max_size=8), inner, max_size=5),
    max_leaves=20,
)


@given(values)
def test_round_trip(value):
    assert decode(encode(value)) == value


def test_dict_encoding_ignores_insertion_order():
    assert encode({"a": 1, "b": 2}) == encode({"b": 2, "a": 1})


def test_bool_and_int_are_distinct():
    assert encode(True) != encode(1)
    assert decode(encode(True)) is True


def test_trailing_bytes_rejected():
    with pytest.raises(DecodeError):
        decode(encode(5) + b"\x00")


def test_truncation_rejected():
    data = encode([b"abc", "xyz", 12345])
    for cut in range(len(data)):
        with pytest.raises(DecodeError):
            decode(data[:cut])


def test_unsupported_type():
    with pytest.raises(TypeError):
        encode(1.5)


@given(values, st.data())
def test_single_byte_flip_never_silently_round_trips(value, data):
    raw = bytearray(encode(value))
    i = data.draw(st.integers(0, len(raw) - 1))
    raw[i] ^= data.draw(st.integers(1, 255))
    try:
        assert decode(bytes(raw)) != value or encode(decode(bytes(raw))) != encode(value)
    except DecodeError:
        pass
