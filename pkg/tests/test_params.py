import numpy as np
import pytest

from mlink.nn import ParamSet, RMSprop, StreamError, load_params, save_params, stream_size


def sample_params():
    rng = np.random.default_rng(0)
    return ParamSet([("w", rng.normal(size=(3, 2))), ("b", rng.normal(size=2)), ("s", np.array(1.5))])


def test_stream_round_trip_is_bitwise():
    p = sample_params()
    p["b"][0] = -0.0
    q = load_params(save_params(p))
    assert q == p
    assert q.names() == ["w", "b", "s"]


def test_stream_size_matches_serialized_length():
    p = sample_params()
    assert stream_size(p) == len(save_params(p))


@pytest.mark.parametrize("cut", [0, 5, 13, 30, -5])
def test_truncated_stream_raises_with_position(cut):
    data = save_params(sample_params())
    with pytest.raises(StreamError):
        load_params(data[:cut])


def test_corrupt_byte_detected():
    data = bytearray(save_params(sample_params()))
    data[20] ^= 0xFF
    with pytest.raises(StreamError, match="checksum"):
        load_params(bytes(data))


def test_duplicate_and_shape_errors():
    p = sample_params()
    with pytest.raises(ValueError):
        p.add("w", np.zeros(1))
    with pytest.raises(ValueError):
        p["w"] = np.zeros((2, 3))


def test_flat_round_trip():
    p = sample_params()
    q = p.zeros_like()
    q.assign_flat(p.flat())
    assert q == p


def test_rmsprop_single_step_by_hand():
    p = ParamSet([("x", np.array([1.0, -2.0]))])
    g = ParamSet([("x", np.array([0.5, 0.1]))])
    RMSprop(p, 0.01, 0.9, 1e-7).step(p, g)
    acc = 0.1 * np.array([0.25, 0.01])
    np.testing.assert_allclose(p["x"], np.array([1.0, -2.0]) - 0.01 * g["x"] / (np.sqrt(acc) + 1e-7), rtol=1e-15)
