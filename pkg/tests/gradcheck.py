"""Central finite-difference comparison for scalar-valued graphs built from ``dialpath.nn`` tensors."""
import numpy as np

from dialpath import nn

EPS = 1e-5
TOL = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(diff / scale)


def check(fn, tensors: dict, rng: np.random.Generator, max_coords: int = 24,
          eps: float = EPS) -> tuple[float, dict[str, float]]:
    """Relative error of the block's whole checked gradient vector, and per tensor.

    ``fn()`` rebuilds the scalar loss from the current tensor data.  At most
    ``max_coords`` randomly chosen coordinates of each tensor are perturbed.
    The block-level figure is the one to threshold: some tensors have an
    exactly zero gradient (a key bias under softmax shift invariance), where a
    per-tensor ratio only measures rounding noise.
    """
    for t in tensors.values():
        t.grad = None
    loss = fn()
    nn.backward(loss)
    errors = {}
    all_a, all_n = [], []
    for name, t in tensors.items():
        analytic_full = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if flat.size > max_coords:
            idx = rng.choice(flat.size, max_coords, replace=False)
        numeric = np.zeros(len(idx))
        for k, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + eps
            up = fn().item()
            flat[i] = old - eps
            down = fn().item()
            flat[i] = old
            numeric[k] = (up - down) / (2 * eps)
        analytic = analytic_full.reshape(-1)[idx]
        errors[name] = relative_error(analytic, numeric)
        all_a.append(analytic)
        all_n.append(numeric)
    return relative_error(np.concatenate(all_a), np.concatenate(all_n)), errors


# -- random instances of every differentiable block ----------------------------------

from dialpath.nn import tensor as T  # noqa: E402
from dialpath.nn.layers import (  # noqa: E402
    ModelParams,
    MultiHeadAttention,
    MultiSourceDecoderBlock,
    TransformerBlock,
    cross_entropy_with_label_smoothing,
    masked_softmax,
)

SMALL = ModelParams(d=4, heads=2, dropout=0.0, ff_mult=2)


def _param(rng, *shape):
    return T.parameter(rng.standard_normal(shape))


def _allowed_mask(rng, b, lq, lk):
    mask = rng.random((b, lq, lk)) < 0.6
    mask[..., 0] |= ~mask.any(-1)
    return mask


def _project(out, rng):
    # a fixed random projection turns any output into a generic scalar
    r = rng.standard_normal(out.shape)
    return lambda y: T.tsum(T.mul(y, r))


def attention_instance(rng):
    attn = MultiHeadAttention(4, 2, rng)
    q, kv = _param(rng, 2, 3, 4), _param(rng, 2, 5, 4)
    mask = _allowed_mask(rng, 2, 3, 5)
    proj = _project(np.zeros((2, 3, 4)), rng)
    tensors = {"query": q, "keyvalue": kv, **attn.named_parameters("attn.")}
    return (lambda: proj(attn(q, kv, kv, mask))), tensors


def transformer_instance(rng):
    block = TransformerBlock(SMALL, rng)
    q, kv = _param(rng, 2, 3, 4), _param(rng, 2, 4, 4)
    mask = _allowed_mask(rng, 2, 3, 4)
    proj = _project(np.zeros((2, 3, 4)), rng)
    tensors = {"query": q, "keyvalue": kv, **block.named_parameters("block.")}
    return (lambda: proj(block(q, kv, kv, mask))), tensors


def decoder_block_instance(rng):
    block = MultiSourceDecoderBlock(SMALL, 3, rng)
    x = _param(rng, 2, 3, 4)
    mems = [(_param(rng, 2, n, 4), _allowed_mask(rng, 2, 1, n)) for n in (2, 4, 3)]
    proj = _project(np.zeros((2, 3, 4)), rng)
    causal = np.tril(np.ones((3, 3), dtype=bool))[None]
    tensors = {"x": x, **{f"mem{k}": m for k, (m, _) in enumerate(mems)}, **block.named_parameters("block.")}
    return (lambda: proj(block(x, causal, mems))), tensors


def gcn_instance(rng):
    from dialpath.propagation import GCNLayer

    layer = GCNLayer(4, rng)
    n = 4
    m = _param(rng, 2, n, 4)
    adj = (rng.random((2, n, n)) < 0.5).astype(float)
    adj[:, np.arange(n), np.arange(n)] = 1.0
    valid = np.ones((2, n))
    valid[1, 3] = 0.0
    proj = _project(np.zeros((2, n, 4)), rng)
    return (lambda: proj(layer(m, adj, valid))), {"m": m, **layer.named_parameters("gcn.")}


def loss_instance(rng):
    logits = _param(rng, 5, 4)
    target = rng.integers(0, 4, 5)
    weights = (rng.random(5) < 0.8).astype(float)
    weights[0] = 1.0
    eps = float(rng.choice([0.0, 0.1, 0.3]))
    return (lambda: cross_entropy_with_label_smoothing(logits, target, eps, weights)), {"logits": logits}


def masked_softmax_instance(rng):
    x = _param(rng, 3, 5)
    mask = rng.random((3, 5)) < 0.4
    mask[:, 0] = False
    proj = _project(np.zeros((3, 5)), rng)
    return (lambda: proj(masked_softmax(x, mask))), {"logits": x}


def _synthetic_examples():
    from dialpath.dialogue import Vocabulary
    from dialpath.graph import GraphBuilder
    from dialpath.pipeline import build_examples
    from dialpath.synthetic import SyntheticCorpusConfig, gen_synthetic_corpus

    corpus = gen_synthetic_corpus(SyntheticCorpusConfig(n_dialogues=6, n_val=0, n_test=0, seed=5))
    vocab = Vocabulary.build(corpus.splits["train"])
    ex = build_examples(corpus.splits["train"], GraphBuilder(), vocab, corpus.gold_index())
    return corpus, vocab, ex


_CACHE = {}


def _examples():
    if "ex" not in _CACHE:
        _CACHE["ex"] = _synthetic_examples()
    return _CACHE["ex"]


def _subset(named: dict, rng, k: int) -> dict:
    names = sorted(named)
    pick = rng.choice(len(names), min(k, len(names)), replace=False)
    return {names[i]: named[names[i]] for i in sorted(pick)}


def path_decoder_instance(rng):
    from dialpath.pathgen import PathGeneratorModel, batch_loss, collate

    _, vocab, ex = _examples()
    model = PathGeneratorModel(len(vocab), SMALL, seed=int(rng.integers(1 << 30)))
    chosen = [ex[i] for i in rng.choice(len(ex), 2, replace=False)]
    batch = collate(chosen, [e.gold for e in chosen], model.max_turns)
    named = model.named_parameters()
    return (lambda: batch_loss(model, batch)[0]), _subset(named, rng, 6)


def answer_decoder_instance(rng):
    from dialpath.propagation import PropagationModel, answer_loss, collate_answers

    corpus, vocab, ex = _examples()
    model = PropagationModel(len(vocab), corpus.config.grid_dim, SMALL, seed=int(rng.integers(1 << 30)))
    chosen = [ex[i] for i in rng.choice(len(ex), 2, replace=False)]
    batch = collate_answers(chosen, [e.gold for e in chosen], corpus.grids)
    named = model.named_parameters()
    return (lambda: answer_loss(model, batch, 0.1)[0]), _subset(named, rng, 6)


BLOCKS = {
    "attention": attention_instance,
    "transformer_block": transformer_instance,
    "decoder_block": decoder_block_instance,
    "gcn": gcn_instance,
    "loss": loss_instance,
    "masked_softmax": masked_softmax_instance,
    "path_decoder": path_decoder_instance,
    "answer_decoder": answer_decoder_instance,
}


def worst_error(block: str, instances: int, seed: int = 0, max_coords: int = 12) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        fn, tensors = BLOCKS[block](rng)
        worst = max(worst, check(fn, tensors, rng, max_coords)[0])
    return worst
