import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from fedccl.model import (
    Level, ModelMeta, ModelSnapshot, ModelWeights, ShapeMismatchError, SnapshotError,
    SnapshotFormatError, TrainingDelta, check_same_shapes, deserialize_snapshot,
    make_snapshot, serialize_snapshot,
)

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)
layers_st = st.lists(
    hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=2, max_side=5), elements=finite),
    min_size=1, max_size=4)
meta_st = st.builds(
    lambda lvl, n, e, r: ModelMeta(lvl, "location:3" if lvl is Level.CLUSTER else None, n, e, r),
    st.sampled_from(list(Level)), st.integers(0, 2**63 - 1), st.integers(0, 2**40),
    st.integers(0, 2**40))


def test_cluster_key_iff_cluster_level():
    ModelMeta(Level.CLUSTER, "orientation:0")
    with pytest.raises(ValueError):
        ModelMeta(Level.CLUSTER, None)
    with pytest.raises(ValueError):
        ModelMeta(Level.GLOBAL, "location:0")
    with pytest.raises(ValueError):
        ModelMeta(Level.LOCAL, samples_learned=-1)


def test_delta_fields_positive():
    TrainingDelta(1, 1)
    for bad in ((0, 1, 1), (1, 0, 1), (1, 1, 0)):
        with pytest.raises(ValueError):
            TrainingDelta(*bad)


def test_weights_are_read_only_copies():
    src = np.array([1.0, 2.0])
    w = ModelWeights([src])
    src[0] = 99.0
    assert w[0][0] == 1.0
    with pytest.raises(ValueError):
        w[0][0] = 5.0


def test_single_zero_layer_round_trip():
    s = make_snapshot([[0.0]])
    assert deserialize_snapshot(serialize_snapshot(s)) == s


def test_two_layer_round_trip_and_determinism():
    s = make_snapshot([np.arange(6.0).reshape(2, 3), [0.5, -0.25]], level="cluster",
                      cluster_key="location:2", samples_learned=40, epochs_learned=3, round=7)
    b = serialize_snapshot(s)
    assert b == serialize_snapshot(s)
    assert deserialize_snapshot(b) == s


@given(meta_st, layers_st)
def test_round_trip_is_bit_exact(meta, layers):
    s = ModelSnapshot(meta, ModelWeights(layers))
    back = deserialize_snapshot(serialize_snapshot(s))
    assert back.meta == s.meta
    for a, b in zip(back.weights, s.weights):
        assert a.shape == b.shape
        assert a.tobytes() == b.tobytes()


def test_negative_zero_survives_round_trip():
    s = make_snapshot([[-0.0]])
    back = deserialize_snapshot(serialize_snapshot(s))
    assert np.signbit(back.weights[0][0])


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_non_finite_rejected_on_encode(bad):
    with pytest.raises(SnapshotError):
        serialize_snapshot(make_snapshot([[1.0, bad]]))


def test_empty_bytes_is_parse_error():
    with pytest.raises(SnapshotFormatError) as err:
        deserialize_snapshot(b"")
    assert err.value.offset == 0


def test_every_truncation_is_a_parse_error():
    b = serialize_snapshot(make_snapshot([[1.0, 2.0], [[3.0], [4.0]], [5.0]], round=2))
    for n in range(len(b)):
        with pytest.raises(SnapshotFormatError) as err:
            deserialize_snapshot(b[:n])
        assert 0 <= err.value.offset <= n


def test_header_claims_three_layers_payload_has_two():
    two = serialize_snapshot(make_snapshot([[1.0], [2.0, 3.0]]))
    three = serialize_snapshot(make_snapshot([[1.0], [2.0, 3.0], [4.0]]))
    # splice the 3-layer header onto a 2-layer payload
    payload = 3 * 8
    malformed = three[:len(three) - 4 * 8] + two[-payload:]
    with pytest.raises(SnapshotFormatError):
        deserialize_snapshot(malformed)


def test_bad_magic_and_trailing_bytes():
    b = serialize_snapshot(make_snapshot([[1.0]]))
    with pytest.raises(SnapshotFormatError) as err:
        deserialize_snapshot(b"XXXX" + b[4:])
    assert err.value.offset == 0
    with pytest.raises(SnapshotFormatError):
        deserialize_snapshot(b + b"\x00")


def test_non_finite_payload_rejected_on_decode():
    b = bytearray(serialize_snapshot(make_snapshot([[1.0]])))
    b[-8:] = struct.pack("<d", float("nan"))
    with pytest.raises(SnapshotFormatError) as err:
        deserialize_snapshot(bytes(b))
    assert err.value.offset == len(b) - 8


def test_shape_check():
    a = ModelWeights([np.zeros((2, 3)), np.zeros(3)])
    check_same_shapes(a, ModelWeights([np.ones((2, 3)), np.ones(3)]))
    with pytest.raises(ShapeMismatchError):
        check_same_shapes(a, ModelWeights([np.zeros((3, 2)), np.zeros(3)]))
    with pytest.raises(ShapeMismatchError):
        check_same_shapes(a, ModelWeights([np.zeros((2, 3))]))
