"""Run configuration and the end-to-end steps shared by the CLI and the test suite."""
from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import baseline_path
from .dialogue import Dialogue, Vocabulary, load_corpus
from .embeddings import DEFAULT_TAU, EmbeddingTable, load_vectors
from .graph import GraphBuilder, GraphConfig
from .metrics import EvalReport, Prediction, Reference, evaluate
from .nn.layers import ModelParams
from .oracle import ReasoningPath
from .pathgen import DecodeOptions, PathGeneratorModel, TrainConfig, generate_paths, train_path_generator
from .pipeline import Example, build_examples
from .propagation import JOINT, PIPELINE, JointConfig, JointModel, answer_token_hits, generate_answers, train_joint
from .spans import RuleSpanExtractor, SpanExtractionConfig
from .synthetic import load_gold, load_grids, write_config_file

log = logging.getLogger(__name__)

SEED_ENV = "DIALPATH_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Every knob of a training or evaluation run; serialised verbatim into run logs."""

    corpus: str = "corpus"
    out: str = "run"
    seed: int = 0
    # graph
    semantics: str = "compositional"
    direction: str = "BiDirect"
    tau: float = DEFAULT_TAU
    vectors: str = ""
    lexicon: str = ""
    embedding_dim: int = 100
    # model
    d: int = 64
    heads: int = 4
    dropout: float = 0.1
    gcn_layers: int = 1
    eq4: str = "self"
    # training
    epochs: int = 50
    batch_size: int = 32
    peak_lr: float = 1e-3
    warmup_epochs: int = 5
    decay: str = "inverse_sqrt"
    supervision: str = "oracle"
    all_turns: bool = True
    regime: str = JOINT
    eps_ls: float = 0.1
    # decoding
    beam: int = 1
    mask_visited: bool = True
    mask_later: bool = True

    def model_params(self) -> ModelParams:
        return ModelParams(d=self.d, heads=self.heads, dropout=self.dropout)

    def graph_config(self) -> GraphConfig:
        return GraphConfig(semantics=self.semantics, direction=self.direction, tau=self.tau)

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, peak_lr=self.peak_lr,
                           warmup_epochs=self.warmup_epochs, decay=self.decay, seed=self.seed,
                           supervision=self.supervision)

    def joint_config(self) -> JointConfig:
        return JointConfig(**dataclasses.asdict(self.train_config()), eps_ls=self.eps_ls, regime=self.regime)

    def decode_options(self) -> DecodeOptions:
        return DecodeOptions(mask_visited=self.mask_visited, mask_later=self.mask_later)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(name: str, typ, raw: str):
    try:
        if typ in (bool, "bool"):
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def make_config(values: dict[str, str] | None = None, env: dict | None = None, **overrides) -> RunConfig:
    types = {f.name: f.type for f in fields(RunConfig)}
    kwargs = {}
    for k, v in (values or {}).items():
        if k not in types:
            raise ConfigError(f"unknown config key {k!r}")
        kwargs[k] = _coerce(k, types[k], v)
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        kwargs["seed"] = _coerce(SEED_ENV, int, env[SEED_ENV])
    return RunConfig(**kwargs)


def load_config(path, env: dict | None = None, **overrides) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8")
    return make_config(parse_config_text(text, str(path)), env, **overrides)


# -- data ---------------------------------------------------------------------

@dataclass
class CorpusData:
    splits: dict[str, list[Dialogue]]
    gold: dict
    grids: dict[str, np.ndarray]


def load_corpus_dir(path) -> CorpusData:
    root = Path(path)
    splits = {s: load_corpus(root / f"{s}.jsonl") for s in ("train", "val", "test") if (root / f"{s}.jsonl").exists()}
    if "train" not in splits:
        raise FileNotFoundError(f"{root} has no train.jsonl")
    gold = {(g.dialogue, g.turn): g for g in load_gold(root / "gold.jsonl")} if (root / "gold.jsonl").exists() else {}
    grids = load_grids(root / "grids.bin") if (root / "grids.bin").exists() else {}
    return CorpusData(splits, gold, grids)


def make_builder(cfg: RunConfig) -> GraphBuilder:
    table = load_vectors(cfg.vectors) if cfg.vectors else EmbeddingTable(cfg.embedding_dim)
    extractor = RuleSpanExtractor(SpanExtractionConfig.from_dir(cfg.lexicon)) if cfg.lexicon else None
    return GraphBuilder(cfg.graph_config(), table, extractor)


@dataclass
class Prepared:
    vocab: Vocabulary
    builder: GraphBuilder
    train: list[Example]
    val: list[Example]
    test: list[Example]
    grids: dict[str, np.ndarray]


def prepare(cfg: RunConfig, data: CorpusData, vocab: Vocabulary | None = None) -> Prepared:
    """Examples for every split.  Training may use every turn; evaluation uses annotated turns."""
    vocab = vocab or Vocabulary.build(data.splits["train"])
    builder = make_builder(cfg)
    train = build_examples(data.splits["train"], builder, vocab, data.gold, all_turns=cfg.all_turns)
    val = build_examples(data.splits.get("val", []), builder, vocab, data.gold)
    test = build_examples(data.splits.get("test", []), builder, vocab, data.gold)
    return Prepared(vocab, builder, train, val, test, data.grids)


# -- training -----------------------------------------------------------------

def train_paths(cfg: RunConfig, prep: Prepared, callback=None):
    model = PathGeneratorModel(len(prep.vocab), cfg.model_params(), seed=cfg.seed, eq4=cfg.eq4)
    history = train_path_generator(model, prep.train, prep.val, cfg.train_config(), callback)
    return model, history


def train_joint_model(cfg: RunConfig, prep: Prepared, grid_dim: int, callback=None, path_model=None):
    """Joint regime trains both parts together; pipeline first trains (or reuses) the path generator."""
    share = cfg.regime == JOINT
    model = JointModel(len(prep.vocab), grid_dim, cfg.model_params(), gcn_layers=cfg.gcn_layers, seed=cfg.seed,
                       eq4=cfg.eq4, share_embedding=share)
    if cfg.regime == PIPELINE:
        if path_model is None:
            path_model, _ = train_paths(cfg, prep)
        model.path.load_state_dict(path_model.state_dict())
    history = train_joint(model, prep.train, prep.val, prep.grids, cfg.joint_config(), callback)
    return model, history


# -- evaluation ---------------------------------------------------------------

STRATEGY_NAMES = ("learned", "oracle", "random", "gold") + tuple(f"last_{n}" for n in range(1, 11))


def strategy_paths(strategy: str, examples: Sequence[Example], path_model: PathGeneratorModel | None = None,
                   seed: int = 0, beam: int = 1, opts: DecodeOptions = DecodeOptions()) -> list[tuple[int, ...]]:
    rng = np.random.default_rng(seed)
    if strategy == "learned":
        if path_model is None:
            raise ValueError("the learned strategy needs a trained path model")
        return [p.turns for p in generate_paths(path_model, examples, beam, opts)]
    if strategy == "gold":
        return [e.gold for e in examples]
    out = []
    for e in examples:
        if strategy == "oracle":
            p = baseline_path("oracle", None, e.turn, oracle=ReasoningPath(e.candidates[0]))
        elif strategy == "random":
            p = baseline_path("random", None, e.turn, rng, paths=[ReasoningPath(x) for x in e.paths])
        elif strategy.startswith("last_"):
            p = baseline_path("last_n", None, e.turn, n=int(strategy.split("_", 1)[1]))
        else:
            raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGY_NAMES}")
        out.append(p.turns)
    return out


def evaluate_examples(examples: Sequence[Example], paths: Sequence[tuple[int, ...]], vocab: Vocabulary,
                      model: JointModel | None = None, grids: dict | None = None,
                      zero_path: bool = False) -> EvalReport:
    """Path metrics against annotated paths and, with a joint model, answer metrics given ``paths``."""
    preds, refs = [], []
    answers = counts = None
    if model is not None:
        answers = generate_answers(model.prop, examples, paths, grids, zero_path=zero_path)
        counts, _ = answer_token_hits(model.prop, examples, paths, grids, zero_path=zero_path)
    for k, (e, p) in enumerate(zip(examples, paths)):
        hits, total = counts[k] if counts else (0, 0)
        answer = tuple(vocab.decode(answers[k])) if answers else None
        target = e.gold if e.gold is not None else e.candidates[0]
        preds.append(Prediction(e.dialogue_id, e.turn, tuple(p), answer, hits, total))
        refs.append(Reference(e.dialogue_id, e.turn, tuple(target), e.answer_tokens, e.hops))
    return evaluate(preds, refs)


def write_run_log(out_dir, command: str, cfg: RunConfig, extra: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "run.json"
    path.write_text(json.dumps({"command": command, "config": cfg.to_dict(), **(extra or {})},
                               sort_keys=True, indent=2) + "\n", encoding="utf-8")
    # the key = value copy can be passed straight back with --config to replay the run
    write_config_file(out / "run.cfg", cfg.to_dict())
    return path
