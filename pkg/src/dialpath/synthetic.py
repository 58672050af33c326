"""Synthetic dialogue corpora with planted reasoning paths and visual grids.

Each dialogue ends in a target turn ``T`` whose question asks for the colour of
an object.  The object is named either in the question (1 hop), in an earlier
turn linked to the question by a shared action word (2 hops), or in a turn two
links back through a middle turn (3 hops).  The remaining turns are

* decoys: they mention the same person as the target question, so they are
  graph-adjacent to it but never help the answer;
* distractors: they share no span with any other turn that matters;
* stale turns (off by default): an earlier turn using the same action as the
  end of the chain but with another object, so only the most recent one counts.

Every object mentioned in the dialogue owns one region of the visual grid; the
region's features are a fixed key vector for the object name followed by a
one-hot colour block, so the answer colour is only recoverable by attending
from the right turn to the right region.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dialogue import Dialogue, save_corpus
from .embeddings import hash_vector
from .nn.checkpoint import load_arrays, save_arrays

OBJECTS = (
    "apple backpack bag ball basket blanket book bottle bowl box bread broom bucket camera candle cup cushion "
    "dish hat jacket lamp laptop mirror mug newspaper notebook pen phone picture pillow plate sandwich shirt shoe "
    "spoon towel toy vacuum"
).split()
ACTIONS = (
    "walking running sitting standing reading cooking eating drinking cleaning washing sweeping dancing laughing "
    "talking typing writing drawing painting singing jumping sleeping smiling waving pointing folding pouring "
    "stirring knocking climbing crawling stretching yawning sneezing coughing whistling clapping kneeling shaking "
    "spinning tidying"
).split()
COLORS = "red blue green yellow black white brown pink".split()
PERSONS = "man woman girl boy person".split()
MOODS = "happy tired sad young old".split()

KEY_DIM = 16


class SyntheticConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticCorpusConfig:
    n_dialogues: int = 500
    n_val: int = 100
    n_test: int = 100
    turns_min: int = 5
    turns_max: int = 10
    entity_pool: int = 24
    hop_probs: tuple[float, float, float] = (0.2, 0.4, 0.4)
    distractor_rate: float = 0.5
    recency: float = 0.5
    stale_rate: float = 0.0
    vocab_size: int = 30
    grid_size: int = 12
    seed: int = 7

    def __post_init__(self):
        if len(self.hop_probs) != 3 or any(p < 0 for p in self.hop_probs):
            raise SyntheticConfigError("hop_probs needs three non-negative probabilities for 1, 2 and 3 hops")
        if abs(sum(self.hop_probs) - 1.0) > 1e-9:
            raise SyntheticConfigError(f"hop probabilities sum to {sum(self.hop_probs)}, not 1")
        for name in ("n_dialogues", "turns_min", "entity_pool", "vocab_size", "grid_size"):
            if getattr(self, name) < 1:
                raise SyntheticConfigError(f"{name} must be >= 1")
        if self.n_val < 0 or self.n_test < 0:
            raise SyntheticConfigError("split sizes must be >= 0")
        if self.turns_max < self.turns_min or self.turns_max > 10:
            raise SyntheticConfigError("need turns_min <= turns_max <= 10")
        max_hop = max(h for h, p in zip((1, 2, 3), self.hop_probs) if p > 0)
        if self.turns_min < max_hop:
            raise SyntheticConfigError(f"{max_hop}-hop chains do not fit in {self.turns_min}-turn dialogues")
        if self.entity_pool > len(OBJECTS):
            raise SyntheticConfigError(f"entity_pool {self.entity_pool} exceeds the {len(OBJECTS)} available objects")
        if self.entity_pool < self.turns_max:
            raise SyntheticConfigError("entity_pool must be at least turns_max so objects are not reused")
        if self.vocab_size > len(ACTIONS) or self.vocab_size < self.turns_max + 1:
            raise SyntheticConfigError(f"vocab_size must lie in [{self.turns_max + 1}, {len(ACTIONS)}]")
        if self.grid_size < self.turns_max:
            raise SyntheticConfigError("grid_size must be at least turns_max (one region per object)")
        if not all(0 <= r <= 1 for r in (self.distractor_rate, self.recency, self.stale_rate)):
            raise SyntheticConfigError("rates must lie in [0, 1]")

    @property
    def grid_dim(self) -> int:
        return KEY_DIM + len(COLORS)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hop_probs"] = list(self.hop_probs)
        return d


@dataclass
class GoldPath:
    dialogue: str
    split: str
    turn: int
    path: list[int]
    hops: int
    answer_object: str
    roles: dict[int, str] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"dialogue": self.dialogue, "split": self.split, "turn": self.turn, "path": self.path,
                "hops": self.hops, "answer_object": self.answer_object,
                "roles": {str(k): v for k, v in sorted(self.roles.items())}}

    @classmethod
    def from_json(cls, obj: dict) -> "GoldPath":
        return cls(obj["dialogue"], obj["split"], obj["turn"], list(obj["path"]), obj["hops"],
                   obj.get("answer_object", ""), {int(k): v for k, v in obj.get("roles", {}).items()})


@dataclass
class SyntheticCorpus:
    splits: dict[str, list[Dialogue]]
    gold: list[GoldPath]
    grids: dict[str, np.ndarray]
    config: SyntheticCorpusConfig

    def gold_index(self) -> dict[tuple[str, int], GoldPath]:
        return {(g.dialogue, g.turn): g for g in self.gold}


def object_key(name: str) -> np.ndarray:
    return 2.0 * hash_vector("object:" + name, KEY_DIM)


def _grid(rng: np.random.Generator, objects: dict[str, str], cfg: SyntheticCorpusConfig) -> np.ndarray:
    rows = []
    for name, color in objects.items():
        onehot = np.zeros(len(COLORS))
        onehot[COLORS.index(color)] = 1.0
        rows.append(np.concatenate([object_key(name), onehot]))
    while len(rows) < cfg.grid_size:
        rows.append(np.concatenate([0.3 * rng.standard_normal(KEY_DIM), np.zeros(len(COLORS))]))
    grid = np.array(rows)
    return grid[rng.permutation(len(grid))]


def _make_dialogue(rng: np.random.Generator, did: str, split: str, cfg: SyntheticCorpusConfig):
    n_turns = int(rng.integers(cfg.turns_min, cfg.turns_max + 1))
    hops = int(rng.choice([1, 2, 3], p=cfg.hop_probs))
    while hops > n_turns:
        hops = int(rng.choice([1, 2, 3], p=cfg.hop_probs))
    t = n_turns
    objects = list(rng.permutation(OBJECTS[: cfg.entity_pool]))
    actions = list(rng.permutation(ACTIONS[: cfg.vocab_size]))
    person = str(rng.choice(PERSONS))
    colors: dict[str, str] = {}

    def new_object():
        name = str(objects.pop())
        colors[name] = str(rng.choice(COLORS))
        return name

    target = new_object()
    roles: dict[int, str] = {}
    qa: dict[int, tuple[str, str]] = {}
    if hops == 1:
        path = [t]
        question = f"what color is the {target} near the {person} ?"
    else:
        if hops == 2:
            e = t - 1 if (rng.random() < cfg.recency or t == 2) else int(rng.integers(1, t - 1))
            chain = [e]
        else:
            a = t - 1 if (rng.random() < cfg.recency or t == 3) else int(rng.integers(2, t - 1))
            b = int(rng.integers(1, a))
            chain = [a, b]
        path = [t] + chain
        end = chain[-1]
        end_act = actions.pop()
        qa[end] = (f"what is {end_act} ?", f"the {target} is {end_act} .")
        roles[end] = "end"
        link_act = end_act
        free = [i for i in range(1, end) if i not in chain]
        if cfg.stale_rate > 0 and free and rng.random() < cfg.stale_rate:
            stale = int(rng.choice(free))
            qa[stale] = (f"what is {end_act} ?", f"the {new_object()} is {end_act} .")
            roles[stale] = "stale"
        if hops == 3:
            mid_act = actions.pop()
            qa[chain[0]] = (f"what comes after {end_act} ?", f"{mid_act} .")
            roles[chain[0]] = "middle"
            link_act = mid_act
        question = f"what color is the thing {link_act} near the {person} ?"
    qa[t] = (question, f"the {target} is {colors[target]} .")
    roles[t] = "target"

    for i in range(1, t):
        if i in qa:
            continue
        if rng.random() < cfg.distractor_rate:
            # the colour is only recoverable from the grid, so these turns also train visual lookup
            obj = new_object()
            qa[i] = (f"is there a {obj} ?", f"yes , it is {colors[obj]} .")
            roles[i] = "distractor"
        else:
            kind = int(rng.integers(3))
            if kind == 0:
                qa[i] = (f"what is the {person} doing ?", f"the {person} is {actions.pop()} .")
            elif kind == 1:
                qa[i] = (f"where is the {person} ?", f"the {person} is by the {new_object()} .")
            else:
                mood = str(rng.choice(MOODS))
                qa[i] = (f"does the {person} look {mood} ?", f"yes , the {person} looks {mood} .")
            roles[i] = "decoy"

    dialogue = Dialogue.from_texts(did, [qa[i] for i in range(1, t + 1)], video_ref=did)
    grid = _grid(rng, colors, cfg)
    gold = GoldPath(did, split, t, path, hops, target, roles)
    return dialogue, gold, grid


def gen_synthetic_corpus(cfg: SyntheticCorpusConfig | None = None) -> SyntheticCorpus:
    """Generate train/val/test splits, gold paths and grids; deterministic in ``cfg.seed``."""
    cfg = cfg or SyntheticCorpusConfig()
    rng = np.random.default_rng(cfg.seed)
    splits: dict[str, list[Dialogue]] = {}
    gold: list[GoldPath] = []
    grids: dict[str, np.ndarray] = {}
    for split, n in (("train", cfg.n_dialogues), ("val", cfg.n_val), ("test", cfg.n_test)):
        splits[split] = []
        for k in range(n):
            d, g, grid = _make_dialogue(rng, f"{split}-{k:04d}", split, cfg)
            splits[split].append(d)
            gold.append(g)
            grids[d.video_ref] = grid
    return SyntheticCorpus(splits, gold, grids, cfg)


# -- on-disk layout --------------------------------------------------------------

def write_config_file(path, values: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k in sorted(values):
            v = values[k]
            if isinstance(v, (list, tuple)):
                v = ",".join(str(x) for x in v)
            fh.write(f"{k} = {v}\n")


def save_synthetic_corpus(corpus: SyntheticCorpus, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for split, dialogues in corpus.splits.items():
        save_corpus(dialogues, out / f"{split}.jsonl")
    with open(out / "gold.jsonl", "w", encoding="utf-8") as fh:
        for g in corpus.gold:
            fh.write(json.dumps(g.to_json(), sort_keys=True) + "\n")
    save_arrays(out / "grids.bin", corpus.grids, {"kind": "visual_grids", "dim": corpus.config.grid_dim})
    write_config_file(out / "corpus.cfg", corpus.config.to_dict())


def load_gold(path) -> list[GoldPath]:
    with open(path, encoding="utf-8") as fh:
        return [GoldPath.from_json(json.loads(line)) for line in fh if line.strip()]


def load_grids(path) -> dict[str, np.ndarray]:
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "visual_grids":
        raise ValueError(f"{path} does not hold visual grids")
    return arrays
