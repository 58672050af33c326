"""Auto-regressive reasoning-path decoder with adjacency-masked outputs.

Turn classes are 0-based (turn ``i`` is class ``i - 1``) and the end-of-path
class sits at index ``max_turns``.  The turn-position embedding table has two
more rows than there are turns: EOP at ``max_turns`` and padding at
``max_turns + 1``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .dialogue import MAX_TURNS, Vocabulary
from .nn import tensor as T
from .nn.layers import S_MASKED, Embedding, Linear, ModelParams, Module, TransformerBlock, causal_mask, pos_encode
from .nn.tensor import Tensor
from .oracle import ReasoningPath
from .pipeline import Example, batches, pad_stack

log = logging.getLogger(__name__)

SELF, PREV_OUTPUT = "self", "prev_output"


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class DecodeOptions:
    """Which masks apply at decode time.  Adjacency is always on."""

    mask_visited: bool = True
    mask_later: bool = True
    max_len: int = MAX_TURNS


def path_targets(path: Sequence[int], max_turns: int = MAX_TURNS) -> list[int]:
    """Class sequence for a path: its turns after the first, then EOP."""
    return [i - 1 for i in path[1:]] + [max_turns]


def step_mask(adj: np.ndarray, prefix: Sequence[int], max_turns: int = MAX_TURNS,
              opts: DecodeOptions = DecodeOptions()) -> np.ndarray:
    """Boolean (max_turns + 1,) with True for classes that may be chosen after ``prefix``."""
    allowed = np.zeros(max_turns + 1, dtype=bool)
    last = prefix[-1]
    n = adj.shape[0]
    allowed[:n] = adj[last - 1].astype(bool)
    if opts.mask_visited:
        for i in prefix:
            allowed[i - 1] = False
    if opts.mask_later:
        allowed[last - 1:n] = False
    allowed[max_turns] = True
    return allowed


class PathGeneratorModel(Module):
    def __init__(self, vocab_size: int, params: ModelParams = ModelParams(), max_turns: int = MAX_TURNS,
                 seed: int = 0, token_embedding: Embedding | None = None, eq4: str = SELF):
        if eq4 not in (SELF, PREV_OUTPUT):
            raise ValueError(f"unknown self-attention variant {eq4!r}")
        rng = np.random.default_rng(seed)
        self._params = params
        self._max_turns = max_turns
        self._vocab_size = vocab_size
        self._eq4 = eq4
        self.tokens = token_embedding or Embedding(vocab_size, params.d, rng)
        self.turns = Embedding(max_turns + 2, params.d, rng)
        self.self_block = TransformerBlock(params, rng)
        self.question_block = TransformerBlock(params, rng)
        self.context_block = TransformerBlock(params, rng)
        self.out = Linear(params.d, max_turns + 1, rng)

    @property
    def params(self) -> ModelParams:
        return self._params

    @property
    def max_turns(self) -> int:
        return self._max_turns

    @property
    def eop(self) -> int:
        return self._max_turns

    @property
    def pad_turn(self) -> int:
        return self._max_turns + 1

    def config(self) -> dict:
        return {"params": self._params.to_dict(), "max_turns": self._max_turns,
                "vocab_size": self._vocab_size, "eq4": self._eq4}

    # -- encoders ------------------------------------------------------------

    def encode_question(self, q_ids: np.ndarray) -> Tensor:
        """Token embedding plus position encoding for a (B, L) id batch."""
        q_ids = np.atleast_2d(q_ids)
        if q_ids.shape[1] == 0:
            raise ValueError("empty question")
        return self.tokens(q_ids) + pos_encode(q_ids.shape[1], self._params.d)[None]

    def encode_context(self, c_ids: np.ndarray, c_turns: np.ndarray) -> Tensor:
        """As :meth:`encode_question`, plus the embedding of each token's turn."""
        c_ids, c_turns = np.atleast_2d(c_ids), np.atleast_2d(c_turns)
        x = self.tokens(c_ids) + pos_encode(c_ids.shape[1], self._params.d)[None]
        return x + self.turns(np.where(c_turns > 0, c_turns - 1, self.pad_turn))

    # -- decoder -------------------------------------------------------------

    def _stack(self, z: Tensor, zmask, q: Tensor, qmask, c: Tensor, cmask, value: Tensor | None = None) -> Tensor:
        h = self.self_block(z, z, z if value is None else value, zmask)
        h = self.question_block(h, q, q, qmask)
        return self.context_block(h, c, c, cmask)

    def logits(self, prefixes: np.ndarray, q: Tensor, qmask, c: Tensor, cmask) -> Tensor:
        """Unmasked class scores (B, M, max_turns + 1) for turn-id prefixes (B, M)."""
        rows = np.where(prefixes > 0, prefixes - 1, self.pad_turn)
        m = prefixes.shape[1]
        z = self.turns(rows) + pos_encode(m, self._params.d)[None]
        zmask = causal_mask(m)[None]
        qm, cm = qmask[:, None, :], cmask[:, None, :]
        h = self._stack(z, zmask, q, qm, c, cm)
        if self._eq4 == PREV_OUTPUT:
            # second pass: the self block reads earlier decoder outputs as values
            h = self._stack(z, zmask, q, qm, c, cm, value=h)
        return self.out(h)


# -- batching -----------------------------------------------------------------

@dataclass
class PathBatch:
    q_ids: np.ndarray
    q_valid: np.ndarray
    c_ids: np.ndarray
    c_turns: np.ndarray
    c_valid: np.ndarray
    prefixes: np.ndarray
    targets: np.ndarray
    allowed: np.ndarray
    weights: np.ndarray


def collate(examples: Sequence[Example], paths: Sequence[Sequence[int]], max_turns: int = MAX_TURNS,
            opts: DecodeOptions = DecodeOptions()) -> PathBatch:
    q_ids, q_valid = pad_stack([e.q_ids for e in examples])
    c_ids, c_valid = pad_stack([e.c_ids for e in examples])
    c_turns, _ = pad_stack([e.c_turns for e in examples])
    m = max(len(p) for p in paths)
    b = len(examples)
    prefixes = np.zeros((b, m), dtype=np.int64)
    targets = np.zeros((b, m), dtype=np.int64)
    allowed = np.ones((b, m, max_turns + 1), dtype=bool)
    weights = np.zeros((b, m))
    for k, (e, p) in enumerate(zip(examples, paths)):
        prefixes[k, :len(p)] = p
        targets[k, :len(p)] = path_targets(p, max_turns)
        weights[k, :len(p)] = 1.0
        for s in range(len(p)):
            allowed[k, s] = step_mask(e.adj, p[:s + 1], max_turns, opts)
    return PathBatch(q_ids, q_valid, c_ids, c_turns, c_valid, prefixes, targets, allowed, weights)


def batch_loss(model: PathGeneratorModel, batch: PathBatch) -> tuple[Tensor, np.ndarray]:
    """Mean per-step cross-entropy under the decode masks; also returns argmax predictions."""
    q = model.encode_question(batch.q_ids)
    c = model.encode_context(batch.c_ids, batch.c_turns)
    logits = model.logits(batch.prefixes, q, batch.q_valid, c, batch.c_valid)
    logits = T.masked_fill(logits, ~batch.allowed, S_MASKED)
    b, m, k = logits.shape
    flat = T.reshape(logits, (b * m, k))
    loss = nn.cross_entropy_with_label_smoothing(flat, batch.targets.reshape(-1), 0.0, batch.weights.reshape(-1))
    return loss, logits.data.argmax(-1)


# -- inference ----------------------------------------------------------------

def _encode_one(model: PathGeneratorModel, ex: Example):
    q = model.encode_question(ex.q_ids[None])
    c = model.encode_context(ex.c_ids[None], ex.c_turns[None])
    return q, np.ones((1, len(ex.q_ids)), bool), c, np.ones((1, len(ex.c_ids)), bool)


def decode_step(model: PathGeneratorModel, ex: Example, prefix: Sequence[int], encoded=None,
                opts: DecodeOptions = DecodeOptions()) -> np.ndarray:
    """Distribution over the next class given a non-empty prefix starting at the current turn."""
    if not prefix:
        raise ValueError("decoding needs a prefix starting at the current turn")
    with nn.no_grad():
        q, qv, c, cv = encoded or _encode_one(model, ex)
        logits = model.logits(np.array([list(prefix)]), q, qv, c, cv).data[0, -1]
    return nn.masked_softmax(logits, ~step_mask(ex.adj, prefix, model.max_turns, opts))


def _finish(turns: tuple[int, ...], t: int, opts: DecodeOptions) -> ReasoningPath:
    path = ReasoningPath(turns)
    # with the debug masks off a decode may revisit or move forward in time
    return path.check(t) if opts.mask_visited and opts.mask_later else path


def generate_path(model: PathGeneratorModel, ex: Example, beam: int = 1,
                  opts: DecodeOptions = DecodeOptions()) -> tuple[ReasoningPath, list[np.ndarray]]:
    """Greedy (``beam == 1``) or beam-search decoding; returns the path and per-step distributions.

    Beam search ranks prefixes by summed log-probability; finished hypotheses
    compete with open ones until none of the open ones can still win.
    """
    if beam < 1:
        raise ValueError("beam width must be >= 1")
    was_training = model.training
    model.eval()
    try:
        enc = _encode_one(model, ex)
        limit = min(opts.max_len, ex.turn)
        open_: list[tuple[float, tuple[int, ...], list[np.ndarray]]] = [(0.0, (ex.turn,), [])]
        done: list[tuple[float, tuple[int, ...], list[np.ndarray]]] = []
        while open_:
            grown = []
            for score, prefix, dists in open_:
                p = decode_step(model, ex, prefix, enc, opts)
                if len(prefix) >= limit:
                    p = np.zeros_like(p)
                    p[model.eop] = 1.0
                with np.errstate(divide="ignore"):
                    lp = np.log(p)
                for cls in np.argsort(-lp, kind="stable")[:beam]:
                    if not np.isfinite(lp[cls]):
                        continue
                    new = score + float(lp[cls])
                    if cls == model.eop:
                        done.append((new, prefix, dists + [p]))
                    else:
                        grown.append((new, prefix + (int(cls) + 1,), dists + [p]))
            grown.sort(key=lambda x: -x[0])
            open_ = grown[:beam]
            done.sort(key=lambda x: -x[0])
            done = done[:beam]
            if len(done) >= beam and (not open_ or open_[0][0] <= done[-1][0]):
                break
        best = max(done, key=lambda x: x[0])
        return _finish(best[1], ex.turn, opts), best[2]
    finally:
        model.train(was_training)


def generate_paths(model: PathGeneratorModel, examples: Sequence[Example], beam: int = 1,
                   opts: DecodeOptions = DecodeOptions(), batch_size: int = 64) -> list[ReasoningPath]:
    """Decode many examples; greedy decoding runs batched."""
    if beam > 1:
        return [generate_path(model, e, beam, opts)[0] for e in examples]
    was_training = model.training
    model.eval()
    out: list[ReasoningPath] = []
    try:
        with nn.no_grad():
            for idx in batches(len(examples), batch_size):
                chunk = [examples[i] for i in idx]
                q_ids, qv = pad_stack([e.q_ids for e in chunk])
                c_ids, cv = pad_stack([e.c_ids for e in chunk])
                c_turns, _ = pad_stack([e.c_turns for e in chunk])
                q = model.encode_question(q_ids)
                c = model.encode_context(c_ids, c_turns)
                prefixes = [[e.turn] for e in chunk]
                finished = [False] * len(chunk)
                while not all(finished):
                    arr = np.array([p + [p[-1]] * (max(map(len, prefixes)) - len(p)) for p in prefixes])
                    logits = model.logits(arr, q, qv, c, cv).data
                    for k, e in enumerate(chunk):
                        if finished[k]:
                            continue
                        pre = prefixes[k]
                        if len(pre) >= min(opts.max_len, e.turn):
                            finished[k] = True
                            continue
                        allowed = step_mask(e.adj, pre, model.max_turns, opts)
                        cls = int(np.argmax(np.where(allowed, logits[k, len(pre) - 1], -np.inf)))
                        if cls == model.eop:
                            finished[k] = True
                        else:
                            pre.append(cls + 1)
                out.extend(_finish(tuple(p), e.turn, opts) for p, e in zip(prefixes, chunk))
    finally:
        model.train(was_training)
    return out


# -- training -----------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    peak_lr: float = 1e-3
    warmup_epochs: int = 5
    decay: str = "inverse_sqrt"
    seed: int = 0
    supervision: str = "gold"
    log_every: int = 1
    patience: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PathMetrics:
    epoch: int
    train_loss: float
    val_loss: float
    val_step_accuracy: float
    val_exact_match: float


def supervision_paths(examples: Sequence[Example], mode: str) -> list[list[tuple[int, ...]]]:
    """Per example, the set of acceptable target paths (one is drawn per step)."""
    out = []
    for e in examples:
        if mode == "gold":
            if e.gold is None:
                raise ValueError(f"example {e.dialogue_id}/{e.turn} has no gold path")
            out.append([e.gold])
        elif mode == "oracle":
            out.append(list(e.candidates))
        else:
            raise ValueError(f"unknown supervision {mode!r}")
    return out


def exact_match(pred: Sequence[ReasoningPath], targets: Sequence[Sequence[tuple[int, ...]]]) -> float:
    if not pred:
        return 0.0
    return float(np.mean([p.turns in set(t) for p, t in zip(pred, targets)]))


def evaluate_loss(model, examples, targets, batch_size: int = 64) -> tuple[float, float]:
    """Teacher-forced mean loss and per-step accuracy, first acceptable target per example."""
    was = model.training
    model.eval()
    tot, n, hit, steps = 0.0, 0, 0, 0
    try:
        with nn.no_grad():
            for idx in batches(len(examples), batch_size):
                paths = [targets[i][0] for i in idx]
                b = collate([examples[i] for i in idx], paths, model.max_turns)
                loss, pred = batch_loss(model, b)
                w = b.weights.sum()
                tot += loss.item() * w
                n += w
                hit += int(((pred == b.targets) & (b.weights > 0)).sum())
                steps += int(w)
    finally:
        model.train(was)
    return tot / max(n, 1), hit / max(steps, 1)


def train_path_generator(model: PathGeneratorModel, train: Sequence[Example], val: Sequence[Example],
                         cfg: TrainConfig = TrainConfig(), callback=None) -> list[PathMetrics]:
    """Supervised training on target paths; ties among oracle candidates are resampled every step."""
    rng = np.random.default_rng(cfg.seed)
    train_t = supervision_paths(train, cfg.supervision)
    val_t = supervision_paths(val, cfg.supervision) if val else []
    steps_per_epoch = math.ceil(len(train) / cfg.batch_size)
    opt = nn.Adam(model.named_parameters(),
                  nn.WarmupSchedule(cfg.peak_lr, max(1, cfg.warmup_epochs * steps_per_epoch), cfg.decay))
    history: list[PathMetrics] = []
    best, best_state, stale = math.inf, None, 0
    model.train()
    for epoch in range(1, cfg.epochs + 1):
        tot, n = 0.0, 0
        for idx in batches(len(train), cfg.batch_size, rng):
            paths = [train_t[i][int(rng.integers(len(train_t[i])))] for i in idx]
            batch = collate([train[i] for i in idx], paths, model.max_turns)
            opt.zero_grad()
            loss, _ = batch_loss(model, batch)
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(f"path loss became {loss.item()} at epoch {epoch}, lr {opt.lr:.3g}")
            nn.backward(loss)
            opt.step()
            tot += loss.item() * len(idx)
            n += len(idx)
        if val:
            vloss, vacc = evaluate_loss(model, val, val_t)
            vem = exact_match(generate_paths(model, val), val_t)
        else:
            vloss, vacc, vem = float("nan"), float("nan"), float("nan")
        m = PathMetrics(epoch, tot / n, vloss, vacc, vem)
        history.append(m)
        if cfg.log_every and epoch % cfg.log_every == 0:
            log.info("epoch %d train %.4f val %.4f acc %.3f em %.3f", epoch, m.train_loss, vloss, vacc, vem)
        if callback:
            callback(m)
        if val and vloss < best:
            best, best_state, stale = vloss, model.state_dict(), 0
        else:
            stale += 1
        if cfg.patience and stale >= cfg.patience:
            break
    if best_state is not None:
        model.load_state_dict(best_state)
    return history


# -- persistence --------------------------------------------------------------

def save_path_model(path, model: PathGeneratorModel, vocab: Vocabulary, extra: dict | None = None) -> None:
    meta = {"kind": "path_generator", "model": model.config(), "vocab": vocab.tokens, **(extra or {})}
    nn.save_arrays(path, model.state_dict(), meta)


def load_path_model(path) -> tuple[PathGeneratorModel, Vocabulary, dict]:
    arrays, meta = nn.load_arrays(path)
    if meta.get("kind") != "path_generator":
        raise ValueError(f"{path} is not a path generator checkpoint")
    cfg = meta["model"]
    model = PathGeneratorModel(cfg["vocab_size"], ModelParams(**cfg["params"]), cfg["max_turns"], eq4=cfg["eq4"])
    model.load_state_dict(arrays)
    return model, Vocabulary.from_tokens(meta["vocab"]), meta
