"""Dialogue data model, tokenisation and JSONL corpus I/O.

Tokenisation rules (stable, fixtures depend on them):

1. Lowercase the text.
2. Split off the clitic ``n't`` (``isn't`` -> ``is``, ``n't``).
3. Split off apostrophe suffixes (``man's`` -> ``man``, ``'s``).
4. Runs of letters/digits/underscores form one token.
5. Every other non-space character is its own token.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

MAX_TURNS = 10

_TOKEN_RE = re.compile(r"\w+(?=n't\b)|n't\b|'\w+|\w+|[^\w\s]")

PAD, OOV, BOS, EOS = "<pad>", "<oov>", "<bos>", "<eos>"
RESERVED = (PAD, OOV, BOS, EOS)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def detokenize(tokens: Sequence[str]) -> str:
    out = ""
    for tok in tokens:
        if out and not (tok.startswith("'") or tok == "n't" or (len(tok) == 1 and not tok.isalnum())):
            out += " "
        out += tok
    return out


class CorpusError(ValueError):
    """Malformed corpus file or dialogue invariant violation."""


@dataclass(frozen=True)
class DialogueTurn:
    turn_index: int
    question: tuple[str, ...]
    answer: tuple[str, ...] = ()

    def __post_init__(self):
        if self.turn_index < 1:
            raise CorpusError(f"turn index must be >= 1, got {self.turn_index}")
        if not self.question:
            raise CorpusError(f"turn {self.turn_index} has an empty question")

    @property
    def tokens(self) -> tuple[str, ...]:
        """Question and answer concatenated, as fed to span extraction."""
        return self.question + self.answer

    def without_answer(self) -> "DialogueTurn":
        return DialogueTurn(self.turn_index, self.question, ())


@dataclass(frozen=True)
class Dialogue:
    id: str
    turns: tuple[DialogueTurn, ...]
    video_ref: str | None = None
    max_turns: int = field(default=MAX_TURNS, compare=False, repr=False)

    def __post_init__(self):
        if not self.turns:
            raise CorpusError(f"dialogue {self.id!r} has no turns")
        idx = [t.turn_index for t in self.turns]
        if idx != list(range(1, len(idx) + 1)):
            raise CorpusError(f"dialogue {self.id!r}: turn indices {idx} are not consecutive from 1")
        if len(idx) > self.max_turns:
            raise CorpusError(f"dialogue {self.id!r} has {len(idx)} turns, maximum is {self.max_turns}")

    def __len__(self) -> int:
        return len(self.turns)

    def turn(self, t: int) -> DialogueTurn:
        if not 1 <= t <= len(self.turns):
            raise IndexError(f"dialogue {self.id!r} has no turn {t} (1..{len(self.turns)})")
        return self.turns[t - 1]

    @classmethod
    def from_texts(cls, id: str, qa: Iterable[tuple[str, str]], video_ref: str | None = None,
                   max_turns: int = MAX_TURNS) -> "Dialogue":
        turns = tuple(DialogueTurn(i, tuple(tokenize(q)), tuple(tokenize(a))) for i, (q, a) in enumerate(qa, 1))
        return cls(id, turns, video_ref, max_turns)


@dataclass(frozen=True)
class DialogueContext:
    turns: tuple[DialogueTurn, ...]

    def __len__(self) -> int:
        return len(self.turns)

    @property
    def tokens(self) -> list[str]:
        return [tok for turn in self.turns for tok in turn.tokens]


def context_at(dialogue: Dialogue, t: int) -> tuple[DialogueContext, DialogueTurn]:
    """Turns 1..t-1 as context and turn t with its answer withheld."""
    current = dialogue.turn(t)
    return DialogueContext(dialogue.turns[: t - 1]), current.without_answer()


class Vocabulary:
    """Token <-> id map with reserved ids PAD=0, OOV=1, BOS=2, EOS=3."""

    def __init__(self, tokens: Iterable[str] = ()):
        self._itos: list[str] = list(RESERVED)
        self._stoi: dict[str, int] = {tok: i for i, tok in enumerate(self._itos)}
        for tok in tokens:
            self.add(tok)

    pad_id, oov_id, bos_id, eos_id = 0, 1, 2, 3

    def add(self, token: str) -> int:
        if token not in self._stoi:
            self._stoi[token] = len(self._itos)
            self._itos.append(token)
        return self._stoi[token]

    def __len__(self) -> int:
        return len(self._itos)

    def __contains__(self, token: str) -> bool:
        return token in self._stoi

    def id(self, token: str) -> int:
        return self._stoi.get(token, self.oov_id)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self._itos[i] for i in ids]

    @property
    def tokens(self) -> list[str]:
        return list(self._itos)

    @classmethod
    def from_tokens(cls, itos: Sequence[str]) -> "Vocabulary":
        if tuple(itos[: len(RESERVED)]) != RESERVED:
            raise ValueError("vocabulary does not start with the reserved tokens")
        return cls(itos[len(RESERVED):])

    @classmethod
    def build(cls, dialogues: Iterable[Dialogue]) -> "Vocabulary":
        seen: set[str] = set()
        for d in dialogues:
            for turn in d.turns:
                seen.update(turn.tokens)
        return cls(sorted(seen))


# -- JSONL corpus ------------------------------------------------------------------

def dialogue_to_json(d: Dialogue) -> dict:
    return {
        "id": d.id,
        "turns": [{"q": " ".join(t.question), "a": " ".join(t.answer)} for t in d.turns],
        "video_ref": d.video_ref,
    }


def dialogue_from_json(obj: dict, max_turns: int = MAX_TURNS) -> Dialogue:
    if not isinstance(obj, dict) or "id" not in obj or "turns" not in obj:
        raise CorpusError("dialogue object needs 'id' and 'turns'")
    turns = []
    for i, t in enumerate(obj["turns"], 1):
        idx = t.get("turn", i)
        turns.append(DialogueTurn(int(idx), tuple(tokenize(t["q"])), tuple(tokenize(t.get("a", "")))))
    return Dialogue(str(obj["id"]), tuple(turns), obj.get("video_ref"), max_turns)


def iter_corpus(path, max_turns: int = MAX_TURNS) -> Iterator[Dialogue]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            try:
                yield dialogue_from_json(obj, max_turns)
            except CorpusError as exc:
                raise CorpusError(f"{path}:{lineno}: {exc}") from exc


def load_corpus(path, max_turns: int = MAX_TURNS) -> list[Dialogue]:
    return list(iter_corpus(path, max_turns))


def save_corpus(dialogues: Iterable[Dialogue], path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for d in dialogues:
            fh.write(json.dumps(dialogue_to_json(d), sort_keys=True) + "\n")
