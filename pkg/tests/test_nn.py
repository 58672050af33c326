import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dialpath import nn
from dialpath.nn import tensor as T
from dialpath.nn.checkpoint import CheckpointError
from dialpath.nn.layers import (
    Linear,
    ModelParams,
    MultiHeadAttention,
    TransformerBlock,
    cross_entropy_with_label_smoothing,
    glorot_uniform,
    masked_softmax,
    pos_encode,
)

import gradcheck


# -- autodiff ---------------------------------------------------------------------

def test_sum_gradient_is_ones():
    x = T.parameter(np.arange(6.0).reshape(2, 3))
    nn.backward(T.tsum(x))
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_square_gradient():
    x = T.parameter(np.array([1.5, -2.0, 0.25]))
    nn.backward(T.tsum(T.mul(x, x)))
    assert np.array_equal(x.grad, 2 * x.data)


def _op_cases(rng):
    a = T.parameter(rng.standard_normal((3, 4)))
    b = T.parameter(rng.standard_normal((3, 4)))
    pos = T.parameter(rng.uniform(0.5, 2.0, (3, 4)))
    row = T.parameter(rng.standard_normal(4))
    sq = T.parameter(rng.standard_normal((4, 2)))
    cond = rng.random((3, 4)) < 0.5
    gamma, beta = T.parameter(rng.standard_normal(4)), T.parameter(rng.standard_normal(4))
    r = rng.standard_normal((3, 4))

    def s(y):
        return T.tsum(T.mul(y, rng_fixed[y.shape]))

    rng_fixed = {shape: rng.standard_normal(shape) for shape in [(3, 4), (3, 2), (4, 3), (12,), (6, 4), (2, 3, 4), (3,)]}
    return {
        "add": (lambda: s(T.add(a, row)), {"a": a, "row": row}),
        "sub": (lambda: s(T.sub(a, b)), {"a": a, "b": b}),
        "mul": (lambda: s(T.mul(a, b)), {"a": a, "b": b}),
        "div": (lambda: s(T.div(a, pos)), {"a": a, "pos": pos}),
        "exp": (lambda: s(T.exp(a)), {"a": a}),
        "log": (lambda: s(T.log(pos)), {"pos": pos}),
        "relu": (lambda: s(T.relu(a)), {"a": a}),
        "tanh": (lambda: s(T.tanh(a)), {"a": a}),
        "where": (lambda: s(T.where(cond, a, b)), {"a": a, "b": b}),
        "masked_fill": (lambda: s(T.masked_fill(a, cond, 3.0)), {"a": a}),
        "tsum": (lambda: T.tsum(T.mul(T.tsum(a, axis=1), rng_fixed[(3,)])), {"a": a}),
        "mean": (lambda: T.tsum(T.mul(T.mean(a, axis=1), rng_fixed[(3,)])), {"a": a}),
        "reshape": (lambda: s(T.reshape(a, (12,))), {"a": a}),
        "transpose": (lambda: s(T.transpose(a, (1, 0))), {"a": a}),
        "getitem": (lambda: s(T.getitem(a, (np.array([0, 2, 2]), slice(None)))), {"a": a}),
        "concat": (lambda: s(T.concat([a, b], axis=0)), {"a": a, "b": b}),
        "stack": (lambda: s(T.stack([a, b], axis=0)), {"a": a, "b": b}),
        "matmul": (lambda: s(T.matmul(a, sq)), {"a": a, "sq": sq}),
        "softmax": (lambda: s(T.softmax(a, axis=-1)), {"a": a}),
        "log_softmax": (lambda: s(T.log_softmax(a, axis=-1)), {"a": a}),
        "layer_norm": (lambda: s(T.layer_norm(a, gamma, beta)), {"a": a, "gamma": gamma, "beta": beta}),
        "unused_r": (lambda: T.tsum(T.mul(a, r)), {"a": a}),
    }


@pytest.mark.parametrize("op", list(_op_cases(np.random.default_rng(0)).keys()))
def test_op_gradients(op):
    rng = np.random.default_rng(1)
    for _ in range(5):
        fn, tensors = _op_cases(rng)[op]
        err, _ = gradcheck.check(fn, tensors, rng)
        assert err < gradcheck.TOL, op


@pytest.mark.parametrize("block", ["attention", "transformer_block", "gcn", "loss", "masked_softmax"])
def test_block_gradients(block):
    assert gradcheck.worst_error(block, 3, seed=4) < gradcheck.TOL


def test_non_finite_values_raise():
    with pytest.raises(FloatingPointError):
        T.log(T.parameter(np.array([0.0])))


def test_no_grad_records_nothing():
    x = T.parameter(np.ones(3))
    with nn.no_grad():
        y = T.mul(x, 2.0)
    assert not y.requires_grad


# -- masked softmax --------------------------------------------------------------------

def test_softmax_uniform():
    assert np.allclose(masked_softmax(np.zeros(4), np.zeros(4, bool)), 0.25, atol=0)


def test_softmax_masked_limit():
    p = masked_softmax(np.zeros(2), np.array([False, True]))
    assert abs(p[0] - 1.0) < 1e-12 and p[1] < 1e-12


def test_softmax_all_masked_rejected():
    with pytest.raises(ValueError):
        masked_softmax(np.zeros(3), np.ones(3, bool))


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_masked_argmax_never_masked(k, seed):
    rng = np.random.default_rng(seed)
    # the fill value is finite, so the guarantee holds for logits well above it
    logits = rng.standard_normal(k) * rng.choice([1.0, 1e3, 1e6])
    mask = rng.random(k) < 0.5
    mask[rng.integers(k)] = False
    p = masked_softmax(logits, mask)
    assert not mask[np.argmax(p)]
    assert abs(p.sum() - 1.0) < 1e-12


# -- position encoding -------------------------------------------------------------

def test_position_zero():
    assert np.array_equal(pos_encode(1, 6)[0], np.array([0.0, 1.0] * 3))


def test_position_range():
    pe = pos_encode(50, 16)
    assert pe.min() >= -1.0 and pe.max() <= 1.0


def test_position_one_hand_computed():
    # base 10000, d = 4: frequencies 1 and 10000^(-2/4) = 1/100
    assert np.allclose(pos_encode(2, 4)[1], [math.sin(1), math.cos(1), math.sin(0.01), math.cos(0.01)],
                       rtol=0, atol=1e-15)


# -- attention / transformer --------------------------------------------------------

def test_single_token_attention_shape():
    attn = MultiHeadAttention(4, 1, np.random.default_rng(0))
    x = T.as_tensor(np.ones((1, 1, 4)))
    y = attn(x, x, x)
    assert y.shape == (1, 1, 4) and np.all(np.isfinite(y.data))


def test_attention_weights_sum_to_one():
    rng = np.random.default_rng(2)
    attn = MultiHeadAttention(8, 4, rng)
    q, k = T.as_tensor(rng.standard_normal((2, 3, 8))), T.as_tensor(rng.standard_normal((2, 5, 8)))
    mask = rng.random((2, 3, 5)) < 0.7
    mask[..., 0] = True
    attn(q, k, k, mask)
    w = attn.last_weights
    assert np.allclose(w.sum(-1), 1.0, atol=1e-12)
    assert np.all(w >= 0)
    assert np.all(w[np.broadcast_to(~mask[:, None], w.shape)] < 1e-12)


def _reference_block(block, x):
    """Straight-line numpy transformer block (post-norm), written independently of the autodiff ops."""
    a = block.attn
    d, h = x.shape[-1], a._h
    dh = d // h

    def lin(m, v):
        return v @ m.weight.data + m.bias.data

    def norm(m, v):
        mu = v.mean(-1, keepdims=True)
        var = ((v - mu) ** 2).mean(-1, keepdims=True)
        return (v - mu) / np.sqrt(var + m._eps) * m.gamma.data + m.beta.data

    q, k, v = lin(a.wq, x), lin(a.wk, x), lin(a.wv, x)
    heads = []
    for i in range(h):
        sl = slice(i * dh, (i + 1) * dh)
        s = q[:, sl] @ k[:, sl].T / math.sqrt(dh)
        s = np.exp(s - s.max(-1, keepdims=True))
        s /= s.sum(-1, keepdims=True)
        heads.append(s @ v[:, sl])
    y = norm(block.norm1, x + lin(a.wo, np.concatenate(heads, -1)))
    ff = lin(block.ff.fc2, np.maximum(lin(block.ff.fc1, y), 0.0))
    return norm(block.norm2, y + ff)


def test_transformer_matches_straight_line_reference():
    rng = np.random.default_rng(12)
    block = TransformerBlock(ModelParams(d=4, heads=2, dropout=0.0), rng).eval()
    x = rng.standard_normal((3, 4))
    got = block(T.as_tensor(x[None]), T.as_tensor(x[None]), T.as_tensor(x[None])).data[0]
    assert np.max(np.abs(got - _reference_block(block, x))) < 1e-10


def test_dropout_only_in_training():
    rng = np.random.default_rng(3)
    block = TransformerBlock(ModelParams(d=8, heads=2, dropout=0.5), rng)
    x = T.as_tensor(rng.standard_normal((1, 3, 8)))
    block.eval()
    a, b = block(x, x, x).data, block(x, x, x).data
    assert np.array_equal(a, b)
    block.train()
    assert not np.array_equal(block(x, x, x).data, a)


def test_glorot_ranges():
    w = glorot_uniform(np.random.default_rng(0), 30, 50)
    limit = math.sqrt(6 / 80)
    assert w.min() >= -limit and w.max() <= limit
    assert w.max() > 0.9 * limit


def test_model_params_validation():
    with pytest.raises(ValueError):
        ModelParams(d=10, heads=4)
    assert ModelParams(d=128, heads=4, dropout=0.2).in_paper_ranges()
    assert not ModelParams(d=64, heads=4, dropout=0.1).in_paper_ranges()


# -- loss ---------------------------------------------------------------------------------

def test_loss_one_hot_near_zero():
    logits = T.as_tensor(np.array([[50.0, 0.0, 0.0]]))
    assert cross_entropy_with_label_smoothing(logits, [0]).item() < 1e-20


def test_loss_uniform_is_log_k():
    logits = T.as_tensor(np.zeros((3, 7)))
    assert cross_entropy_with_label_smoothing(logits, [0, 3, 6]).item() == pytest.approx(math.log(7), abs=1e-12)


def test_smoothed_loss_hand_value():
    z = [1.0, -0.5, 2.0, 0.0]
    logz = math.log(sum(math.exp(v) for v in z))
    logp = [v - logz for v in z]
    eps, k, gold = 0.1, 4, 2
    want = -sum(((1 - eps) * (c == gold) + eps / k) * lp for c, lp in enumerate(logp))
    got = cross_entropy_with_label_smoothing(T.as_tensor(np.array([z])), [gold], eps).item()
    assert abs(got - want) < 1e-10


def test_loss_rejects_bad_targets():
    with pytest.raises(ValueError):
        cross_entropy_with_label_smoothing(T.as_tensor(np.zeros((2, 3))), [0, 3])


# -- optimiser -------------------------------------------------------------------------------

def test_zero_gradient_leaves_parameters():
    state = nn.AdamState()
    p = {"w": np.array([1.0, -2.0])}
    out = nn.adam_step(p, {"w": np.zeros(2)}, state, lr=0.1)
    assert np.array_equal(out["w"], p["w"])


def test_warmup_increases_to_peak():
    s = nn.WarmupSchedule(1e-3, 10)
    assert s(0) < s(9) == pytest.approx(1e-3)
    assert s(39) == pytest.approx(1e-3 * math.sqrt(10 / 40))
    assert nn.WarmupSchedule(1e-3, 10, "constant")(100) == 1e-3


def test_adam_trace_matches_hand_iteration():
    grads = [0.5, -1.2, 0.3, 0.0, 2.0, -0.7]
    lrs = [0.01, 0.02, 0.03, 0.03, 0.025, 0.02]
    # by-hand recurrence with plain floats
    x, m, v = 1.0, 0.0, 0.0
    expected = []
    for t, (g, lr) in enumerate(zip(grads, lrs), 1):
        m = 0.9 * m + 0.1 * g
        v = 0.98 * v + 0.02 * g * g
        x -= lr * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.98 ** t)) + 1e-9)
        expected.append(x)
    state = nn.AdamState()
    p = {"x": np.array([1.0])}
    for g, lr, want in zip(grads, lrs, expected):
        p = nn.adam_step(p, {"x": np.array([g])}, state, lr)
        assert abs(p["x"][0] - want) < 1e-9


def test_adam_rejects_non_finite_gradient():
    with pytest.raises(FloatingPointError):
        nn.adam_step({"w": np.zeros(1)}, {"w": np.array([np.nan])}, nn.AdamState(), 0.1)


def _fit(seed):
    rng = np.random.default_rng(seed)
    layer = Linear(3, 2, rng)
    opt = nn.Adam(layer.named_parameters(), nn.WarmupSchedule(0.05, 3))
    x, y = rng.standard_normal((8, 3)), rng.integers(0, 2, 8)
    for _ in range(10):
        opt.zero_grad()
        loss = cross_entropy_with_label_smoothing(layer(T.as_tensor(x)), y, 0.1)
        nn.backward(loss)
        opt.step()
    return layer.state_dict()


def test_training_bitwise_reproducible():
    a, b = _fit(5), _fit(5)
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


# -- checkpoints -----------------------------------------------------------------------------------

def test_checkpoint_roundtrip_and_bytes(tmp_path):
    arrays = {"w": np.arange(6.0).reshape(2, 3), "b": np.array([np.pi]), "s": np.array(2.5)}
    nn.save_arrays(tmp_path / "a.ck", arrays, {"kind": "test", "n": 1})
    nn.save_arrays(tmp_path / "b.ck", arrays, {"n": 1, "kind": "test"})
    assert (tmp_path / "a.ck").read_bytes() == (tmp_path / "b.ck").read_bytes()
    got, meta = nn.load_arrays(tmp_path / "a.ck")
    assert meta == {"kind": "test", "n": 1}
    assert all(np.array_equal(got[k], arrays[k]) for k in arrays)


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x.ck").write_bytes(b"NOPE" + b"\0" * 20)
    with pytest.raises(CheckpointError):
        nn.load_arrays(tmp_path / "x.ck")


def test_state_dict_shape_mismatch():
    layer = Linear(3, 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        layer.load_state_dict({"weight": np.zeros((2, 2)), "bias": np.zeros(2)})
