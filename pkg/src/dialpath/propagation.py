"""Feature propagation over the turn graph and along reasoning paths, plus the answer decoder.

Shapes follow a turns-as-rows convention: V, M and M~ are (B, N, d) with row
``k - 1`` holding turn ``k``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import nn
from .dialogue import MAX_TURNS, Vocabulary
from .nn import tensor as T
from .nn.layers import (MLP, Embedding, Linear, ModelParams, Module, MultiSourceDecoderBlock, TransformerBlock,
                        causal_mask, pos_encode)
from .nn.tensor import Tensor
from .pathgen import (PathGeneratorModel, TrainConfig, TrainingDiverged, batch_loss, collate, exact_match,
                      generate_paths, supervision_paths)
from .pipeline import Example, batches, pad_stack

log = logging.getLogger(__name__)

JOINT, PIPELINE = "joint", "pipeline"
MAX_ANSWER_LEN = 24


class GCNLayer(Module):
    """One round of message passing.

    e_k is the mean of f([m_k, m_j]) over neighbours j of k, e the mean of
    e_k over nodes, and the refreshed node is g([m_k, e_k, e]).
    """

    def __init__(self, d: int, rng: np.random.Generator):
        self.f = MLP(2 * d, d, d, rng)
        self.g = MLP(3 * d, d, d, rng)

    def messages(self, m: Tensor, adj: np.ndarray) -> Tensor:
        b, n, d = m.shape
        zeros = np.zeros((1, 1, n, 1))
        left = T.reshape(m, (b, n, 1, d)) + zeros
        right = T.reshape(m, (b, 1, n, d)) + np.zeros((1, n, 1, 1))
        f = self.f(T.concat([left, right], axis=-1))
        w = adj / adj.sum(axis=-1, keepdims=True)
        return T.tsum(T.mul(f, w[..., None]), axis=2)

    def __call__(self, m: Tensor, adj: np.ndarray, node_valid: np.ndarray) -> Tensor:
        b, n, d = m.shape
        e_k = self.messages(m, adj)
        share = node_valid / node_valid.sum(axis=-1, keepdims=True)
        e = T.tsum(T.mul(e_k, share[..., None]), axis=1, keepdims=True) + np.zeros((1, n, 1))
        return self.g(T.concat([m, e_k, e], axis=-1))


class PropagationModel(Module):
    def __init__(self, vocab_size: int, grid_dim: int, params: ModelParams = ModelParams(), gcn_layers: int = 1,
                 seed: int = 1, token_embedding: Embedding | None = None, decoder_layers: int = 2):
        if not 0 <= gcn_layers <= 3:
            raise ValueError("gcn_layers must lie in [0, 3]")
        rng = np.random.default_rng(seed)
        d = params.d
        self._params = params
        self._cfg = {"vocab_size": vocab_size, "grid_dim": grid_dim, "params": params.to_dict(),
                     "gcn_layers": gcn_layers, "decoder_layers": decoder_layers}
        self.tokens = token_embedding or Embedding(vocab_size, d, rng)
        self.turn_proj = Linear(d, d, rng)
        self.visual_proj = Linear(grid_dim, d, rng)
        self.visual = TransformerBlock(params, rng)
        self.gcn = [GCNLayer(d, rng) for _ in range(gcn_layers)]
        self.path_encoder = TransformerBlock(params, rng)
        self.decoder = [MultiSourceDecoderBlock(params, 3, rng) for _ in range(decoder_layers)]

    def config(self) -> dict:
        return dict(self._cfg)

    def turn_representations(self, node_ids: np.ndarray, node_tok_valid: np.ndarray) -> Tensor:
        """Mean of each turn's token embeddings, then a learned projection: (B, N, d)."""
        count = np.maximum(node_tok_valid.sum(-1, keepdims=True), 1)
        w = node_tok_valid / count
        pooled = T.tsum(T.mul(self.tokens(node_ids), w[..., None]), axis=2)
        return self.turn_proj(pooled)

    def visual_attention(self, v: Tensor, grid: np.ndarray, grid_valid: np.ndarray | None = None) -> Tensor:
        """Every turn attends over the visual tokens: M = Transformer(V, I, I)."""
        grid = np.asarray(grid, dtype=np.float64)
        if grid.ndim != 3 or grid.shape[1] == 0:
            raise ValueError("visual grid must be (B, N >= 1, d_v)")
        i = self.visual_proj(T.as_tensor(grid))
        mask = None if grid_valid is None else grid_valid[:, None, :]
        return self.visual(v, i, i, mask)

    @property
    def visual_weights(self) -> np.ndarray | None:
        return self.visual.attn.last_weights

    def gcn_update(self, m: Tensor, adj: np.ndarray, node_valid: np.ndarray) -> Tensor:
        for layer in self.gcn:
            m = layer(m, adj, node_valid)
        return m

    def gather_path(self, m: Tensor, paths: np.ndarray) -> Tensor:
        """Rows of M~ in path order; ``paths`` holds 1-based turn ids, 0 for padding."""
        b, n = m.shape[0], m.shape[1]
        if np.any(paths < 0) or np.any(paths > n):
            raise ValueError(f"path turn outside the graph's {n} nodes")
        idx = np.where(paths > 0, paths - 1, 0)
        return T.getitem(m, (np.arange(b)[:, None], idx))

    def traverse_path(self, m: Tensor, paths: np.ndarray, path_valid: np.ndarray) -> Tensor:
        g = self.gather_path(m, paths) + pos_encode(paths.shape[1], self._params.d)[None]
        return self.path_encoder(g, g, g, path_valid[:, None, :])

    def encode_question(self, q_ids: np.ndarray) -> Tensor:
        return self.tokens(q_ids) + pos_encode(q_ids.shape[1], self._params.d)[None]

    def decode(self, dec_in: np.ndarray, q: Tensor, qmask, m: Tensor, mmask, g: Tensor, gmask) -> Tensor:
        """Logits (B, L, |vocab|) with the output layer tied to the token embedding."""
        x = self.tokens(dec_in) + pos_encode(dec_in.shape[1], self._params.d)[None]
        self_mask = causal_mask(dec_in.shape[1])[None]
        memories = [(q, qmask[:, None, :]), (m, mmask[:, None, :]), (g, gmask[:, None, :])]
        for block in self.decoder:
            x = block(x, self_mask, memories)
        return T.matmul(x, T.transpose(self.tokens.weight, (1, 0)))

    def memories(self, batch: "AnswerBatch", zero_path: bool = False):
        v = self.turn_representations(batch.node_ids, batch.node_tok_valid)
        m = self.visual_attention(v, batch.grids, batch.grid_valid)
        m = self.gcn_update(m, batch.adj, batch.node_valid)
        g = self.traverse_path(m, batch.paths, batch.path_valid)
        if zero_path:
            g = T.as_tensor(np.zeros(g.shape))
        q = self.encode_question(batch.q_ids)
        return q, m, g


# -- batching -----------------------------------------------------------------

@dataclass
class AnswerBatch:
    q_ids: np.ndarray
    q_valid: np.ndarray
    node_ids: np.ndarray
    node_tok_valid: np.ndarray
    node_valid: np.ndarray
    adj: np.ndarray
    grids: np.ndarray
    grid_valid: np.ndarray
    paths: np.ndarray
    path_valid: np.ndarray
    dec_in: np.ndarray
    dec_out: np.ndarray
    dec_valid: np.ndarray


def collate_answers(examples: Sequence[Example], paths: Sequence[Sequence[int]], grids: dict[str, np.ndarray],
                    vocab_bos: int = 2, vocab_eos: int = 3) -> AnswerBatch:
    b = len(examples)
    n = max(e.turn for e in examples)
    q_ids, q_valid = pad_stack([e.q_ids for e in examples])
    lt = max(len(x) for e in examples for x in e.node_ids)
    node_ids = np.zeros((b, n, lt), dtype=np.int64)
    node_tok_valid = np.zeros((b, n, lt))
    node_valid = np.zeros((b, n))
    adj = np.zeros((b, n, n))
    for k, e in enumerate(examples):
        for i, ids in enumerate(e.node_ids):
            node_ids[k, i, :len(ids)] = ids
            node_tok_valid[k, i, :len(ids)] = 1.0
        node_valid[k, :e.turn] = 1.0
        adj[k, :e.turn, :e.turn] = e.adj
        for i in range(e.turn, n):
            adj[k, i, i] = 1.0
    gs = [np.asarray(grids[e.video_ref]) for e in examples]
    ng = max(len(g) for g in gs)
    grid = np.zeros((b, ng, gs[0].shape[1]))
    grid_valid = np.zeros((b, ng), dtype=bool)
    for k, g in enumerate(gs):
        grid[k, :len(g)] = g
        grid_valid[k, :len(g)] = True
    path_arr, path_valid = pad_stack([np.array(p) for p in paths])
    dec_in, _ = pad_stack([np.concatenate([[vocab_bos], e.answer_ids]) for e in examples])
    dec_out, dec_valid = pad_stack([np.concatenate([e.answer_ids, [vocab_eos]]) for e in examples])
    return AnswerBatch(q_ids, q_valid, node_ids, node_tok_valid, node_valid, adj, grid, grid_valid,
                       path_arr, path_valid, dec_in, dec_out, dec_valid)


def answer_loss(model: PropagationModel, batch: AnswerBatch, eps_ls: float = 0.1,
                zero_path: bool = False) -> tuple[Tensor, np.ndarray]:
    q, m, g = model.memories(batch, zero_path)
    logits = model.decode(batch.dec_in, q, batch.q_valid, m, batch.node_valid > 0, g, batch.path_valid)
    b, l, k = logits.shape
    loss = nn.cross_entropy_with_label_smoothing(T.reshape(logits, (b * l, k)), batch.dec_out.reshape(-1),
                                                 eps_ls, batch.dec_valid.reshape(-1).astype(float))
    return loss, logits.data.argmax(-1)


def generate_answers(model: PropagationModel, examples: Sequence[Example], paths, grids, batch_size: int = 64,
                     max_len: int = MAX_ANSWER_LEN, zero_path: bool = False, bos: int = 2, eos: int = 3) -> list[list[int]]:
    """Greedy answer decoding; returns token ids without BOS/EOS."""
    was = model.training
    model.eval()
    out: list[list[int]] = []
    try:
        with nn.no_grad():
            for idx in batches(len(examples), batch_size):
                chunk = [examples[i] for i in idx]
                batch = collate_answers(chunk, [paths[i] for i in idx], grids, bos, eos)
                q, m, g = model.memories(batch, zero_path)
                seqs = np.full((len(chunk), 1), bos, dtype=np.int64)
                done = np.zeros(len(chunk), dtype=bool)
                for _ in range(max_len):
                    logits = model.decode(seqs, q, batch.q_valid, m, batch.node_valid > 0, g, batch.path_valid).data
                    nxt = logits[:, -1].argmax(-1)
                    nxt = np.where(done, eos, nxt)
                    seqs = np.concatenate([seqs, nxt[:, None]], axis=1)
                    done |= nxt == eos
                    if done.all():
                        break
                for row in seqs[:, 1:]:
                    toks = list(row)
                    out.append([int(x) for x in toks[:toks.index(eos)]] if eos in toks else [int(x) for x in toks])
    finally:
        model.train(was)
    return out


def answer_token_hits(model: PropagationModel, examples: Sequence[Example], paths, grids, batch_size: int = 64,
                      zero_path: bool = False) -> tuple[list[tuple[int, int]], float]:
    """Per example (correct, total) teacher-forced answer tokens including EOS, and the mean token loss."""
    was = model.training
    model.eval()
    out: list[tuple[int, int]] = []
    loss_sum, tot = 0.0, 0
    try:
        with nn.no_grad():
            for idx in batches(len(examples), batch_size):
                batch = collate_answers([examples[i] for i in idx], [paths[i] for i in idx], grids)
                loss, pred = answer_loss(model, batch, 0.0, zero_path)
                ok = (pred == batch.dec_out) & batch.dec_valid
                out.extend(zip(ok.sum(1).tolist(), batch.dec_valid.sum(1).tolist()))
                n = int(batch.dec_valid.sum())
                tot += n
                loss_sum += loss.item() * n
    finally:
        model.train(was)
    return out, loss_sum / max(tot, 1)


def answer_token_accuracy(model: PropagationModel, examples: Sequence[Example], paths, grids,
                          batch_size: int = 64, zero_path: bool = False) -> tuple[float, float]:
    """Teacher-forced token accuracy over answer tokens plus EOS, and mean loss."""
    counts, loss = answer_token_hits(model, examples, paths, grids, batch_size, zero_path)
    hit = sum(h for h, _ in counts)
    tot = sum(t for _, t in counts)
    return hit / max(tot, 1), loss


# -- joint model and training -------------------------------------------------

class JointModel(Module):
    """Path generator and propagation model sharing one token embedding."""

    def __init__(self, vocab_size: int, grid_dim: int, params: ModelParams = ModelParams(), max_turns: int = MAX_TURNS,
                 gcn_layers: int = 1, seed: int = 0, eq4: str = "self", share_embedding: bool = True):
        self._share = share_embedding
        self.path = PathGeneratorModel(vocab_size, params, max_turns, seed=seed, eq4=eq4)
        self.prop = PropagationModel(vocab_size, grid_dim, params, gcn_layers, seed=seed + 1,
                                     token_embedding=self.path.tokens if share_embedding else None)

    def config(self) -> dict:
        return {"path": self.path.config(), "prop": self.prop.config(), "share_embedding": self._share}


@dataclass
class JointConfig(TrainConfig):
    eps_ls: float = 0.1
    regime: str = JOINT
    answer_turns: str = "annotated"


@dataclass
class JointMetrics:
    epoch: int
    train_loss: float
    val_loss: float
    val_path_loss: float
    val_answer_loss: float
    val_answer_accuracy: float
    val_path_exact_match: float


def validation_loss(model: JointModel, val: Sequence[Example], val_t, grids, batch_size: int = 64,
                    train_path: bool = True) -> tuple[float, float, float]:
    """Average (path + answer) loss over validation examples; the answer stream sees the target path."""
    was = model.training
    model.eval()
    p_sum = a_sum = 0.0
    n = 0
    try:
        with nn.no_grad():
            for idx in batches(len(val), batch_size):
                ex = [val[i] for i in idx]
                paths = [val_t[i][0] for i in idx]
                pl = batch_loss(model.path, collate(ex, paths, model.path.max_turns))[0].item() if train_path else 0.0
                al = answer_loss(model.prop, collate_answers(ex, paths, grids), 0.0)[0].item()
                p_sum += pl * len(idx)
                a_sum += al * len(idx)
                n += len(idx)
    finally:
        model.train(was)
    return (p_sum + a_sum) / n, p_sum / n, a_sum / n


def train_joint(model: JointModel, train: Sequence[Example], val: Sequence[Example], grids: dict[str, np.ndarray],
                cfg: JointConfig = JointConfig(), callback=None) -> list[JointMetrics]:
    """Minimise path loss + answer loss with Adam and warm-up; keep the best validation checkpoint.

    In the ``pipeline`` regime the path generator is left untouched (it is
    expected to be trained already) and only the propagation parameters not
    shared with it are updated.
    """
    if cfg.regime not in (JOINT, PIPELINE):
        raise ValueError(f"unknown regime {cfg.regime!r}")
    rng = np.random.default_rng(cfg.seed)
    train_t = supervision_paths(train, cfg.supervision)
    val_t = supervision_paths(val, cfg.supervision) if val else []
    if cfg.answer_turns not in ("annotated", "all"):
        raise ValueError(f"unknown answer_turns {cfg.answer_turns!r}")
    joint = cfg.regime == JOINT
    # answers of unannotated turns are skipped when annotations exist at all
    answer_on = np.array([cfg.answer_turns == "all" or e.gold is not None for e in train])
    if not answer_on.any():
        answer_on[:] = True
    if joint:
        params = model.named_parameters()
    else:
        shared = {id(p) for p in model.path.parameters()}
        params = {k: p for k, p in model.named_parameters().items() if id(p) not in shared}
    steps_per_epoch = math.ceil(len(train) / cfg.batch_size)
    opt = nn.Adam(params, nn.WarmupSchedule(cfg.peak_lr, max(1, cfg.warmup_epochs * steps_per_epoch), cfg.decay))
    history: list[JointMetrics] = []
    best, best_state = math.inf, None
    model.train()
    if not joint:
        model.path.eval()
    for epoch in range(1, cfg.epochs + 1):
        tot, n = 0.0, 0
        for idx in batches(len(train), cfg.batch_size, rng):
            ex = [train[i] for i in idx]
            paths = [train_t[i][int(rng.integers(len(train_t[i])))] for i in idx]
            for p in model.parameters():
                p.grad = None
            sel = [k for k, i in enumerate(idx) if answer_on[i]]
            loss = None
            if sel:
                batch = collate_answers([ex[k] for k in sel], [paths[k] for k in sel], grids)
                loss = answer_loss(model.prop, batch, cfg.eps_ls)[0]
            if joint:
                path_loss = batch_loss(model.path, collate(ex, paths, model.path.max_turns))[0]
                loss = path_loss if loss is None else loss + path_loss
            if loss is None:
                continue
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(f"joint loss became {loss.item()} at epoch {epoch}, lr {opt.lr:.3g}")
            nn.backward(loss)
            opt.step()
            tot += loss.item() * len(idx)
            n += len(idx)
        if val:
            vloss, vp, va = validation_loss(model, val, val_t, grids, train_path=joint)
            acc, _ = answer_token_accuracy(model.prop, val, [t[0] for t in val_t], grids)
            em = exact_match(generate_paths(model.path, val), val_t)
        else:
            vloss = vp = va = acc = em = float("nan")
        m = JointMetrics(epoch, tot / n, vloss, vp, va, acc, em)
        history.append(m)
        if cfg.log_every and epoch % cfg.log_every == 0:
            log.info("epoch %d train %.4f val %.4f (path %.4f answer %.4f) acc %.3f em %.3f",
                     epoch, m.train_loss, vloss, vp, va, acc, em)
        if callback:
            callback(m)
        if val and vloss < best:
            best, best_state = vloss, model.state_dict()
    if best_state is not None:
        model.load_state_dict(best_state)
    return history


# -- persistence --------------------------------------------------------------

def save_joint_model(path, model: JointModel, vocab: Vocabulary, extra: dict | None = None) -> None:
    meta = {"kind": "joint", "model": model.config(), "vocab": vocab.tokens, **(extra or {})}
    nn.save_arrays(path, model.state_dict(), meta)


def load_joint_model(path) -> tuple[JointModel, Vocabulary, dict]:
    arrays, meta = nn.load_arrays(path)
    if meta.get("kind") != "joint":
        raise ValueError(f"{path} is not a joint model checkpoint")
    pc, qc = meta["model"]["path"], meta["model"]["prop"]
    model = JointModel(pc["vocab_size"], qc["grid_dim"], ModelParams(**pc["params"]), pc["max_turns"],
                       qc["gcn_layers"], eq4=pc["eq4"], share_embedding=meta["model"]["share_embedding"])
    model.load_state_dict(arrays)
    return model, Vocabulary.from_tokens(meta["vocab"]), meta
