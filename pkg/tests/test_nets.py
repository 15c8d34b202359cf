import numpy as np
import pytest

from mlink.nn import MLP, LossKind, NonFiniteLossError, RMSprop, SeqToSeq, SeqToVec, VecToSeq, grad_check, train_step
from mlink.nn.layers import ShapeError
from mlink.nn.nets import encode_sources, encode_targets
from probes import LAYERS, LOSSES, probe


@pytest.mark.parametrize("layer", LAYERS)
@pytest.mark.parametrize("loss", LOSSES, ids=lambda l: l.name)
def test_grad_check(layer, loss):
    net, x, y = probe(layer, loss)
    assert net.param_count() <= 1000
    assert grad_check(net, x, y, loss) < 1e-3


def test_encode_targets_appends_eos():
    dec_in, dec_out, mask = encode_targets([[5, 6], [7]])
    assert dec_in.tolist() == [[1, 5, 6], [1, 7, 0]]
    assert dec_out.tolist() == [[5, 6, 2], [7, 2, 0]]
    assert mask.tolist() == [[1, 1, 1], [1, 1, 0]]


def test_encode_sources_bos_prefix():
    tok, mask = encode_sources([[4], []])
    assert tok.tolist() == [[1, 4], [1, 0]]
    assert mask.tolist() == [[1, 1], [1, 0]]


def test_init_is_uniform_within_fan_in_bound():
    net = MLP(9, 4, 2, seed=3)
    w = net.params["mlp.0.W"]
    assert np.all(np.abs(w) <= 1 / 3)


def test_same_seed_same_params():
    assert SeqToVec(6, 3, 2, seed=1).params == SeqToVec(6, 3, 2, seed=1).params
    assert not SeqToVec(6, 3, 2, seed=1).params == SeqToVec(6, 3, 2, seed=2).params


def test_mlp_rejects_wrong_shape():
    with pytest.raises(ShapeError):
        MLP(3, 4, 2).forward(np.zeros(3))


def test_train_step_aborts_on_non_finite():
    net = MLP(2, 3, 1)
    before = net.params.copy()
    x = np.array([[1e308, 1e308]])
    with pytest.raises((NonFiniteLossError, FloatingPointError)):
        with np.errstate(all="ignore"):
            train_step(net, x, np.zeros((1, 1)), LossKind.MSE, RMSprop(net.params))
    assert net.params == before


def test_decoders_respect_max_len():
    rng = np.random.default_rng(0)
    for net, x in [
        (VecToSeq(3, 4, 8, 3, seed=0), rng.normal(size=(5, 3))),
        (SeqToSeq(8, 4, 8, 3, seed=0), [[4, 5], [6], [7, 7, 7], [], [5]]),
    ]:
        out = net.predict(x, "softmax")
        assert len(out) == 5
        assert all(len(s) <= 3 and all(t >= 3 for t in s) for s in out)  # no PAD, BOS or EOS
