"""Rule-based coreference replacement and lexical span extraction.

A deterministic stand-in for a parser pipeline.  Tokens are tagged from a small
lexicon (``N`` noun, ``V`` verb, ``A`` attribute, ``S`` stopword, ``P``
punctuation); spans are the maximal stopword-free chunks, split so that verbs
form their own chunks and a noun followed by an attribute starts a new one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .dialogue import DialogueTurn

ENTITY, ACTION, ATTRIBUTE = "entity", "action", "attribute"

# pronoun -> (agreement class, possessive?)
_PRONOUN_FORMS = {
    "he": ("male", False), "him": ("male", False), "himself": ("male", False), "his": ("male", True),
    "she": ("female", False), "herself": ("female", False), "hers": ("female", True), "her": ("female", None),
    "it": ("neuter", False), "itself": ("neuter", False), "its": ("neuter", True),
    "they": ("plural", False), "them": ("plural", False), "themselves": ("plural", False),
    "their": ("plural", True), "theirs": ("plural", True),
}


@dataclass(frozen=True)
class LexicalSpan:
    turn_index: int
    tokens: tuple[str, ...]
    kind: str = ENTITY

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("a lexical span needs at least one token")
        if self.kind not in (ENTITY, ACTION, ATTRIBUTE):
            raise ValueError(f"unknown span kind {self.kind!r}")

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


def _read_words(path) -> frozenset[str]:
    with open(path, encoding="utf-8") as fh:
        return frozenset(w.strip().lower() for w in fh if w.strip() and not w.startswith("#"))


def _packaged(name: str) -> frozenset[str]:
    return _read_words(resources.files("dialpath.data.lexicon").joinpath(name))


@dataclass(frozen=True)
class SpanExtractionConfig:
    stopwords: frozenset[str]
    pronouns: frozenset[str]
    nouns: frozenset[str] = frozenset()
    verbs: frozenset[str] = frozenset()
    attributes: frozenset[str] = frozenset()
    male: frozenset[str] = frozenset()
    female: frozenset[str] = frozenset()
    persons: frozenset[str] = frozenset()
    max_span_len: int = 4

    def __post_init__(self):
        if self.max_span_len < 1:
            raise ValueError("max_span_len must be >= 1")

    _FILES = {
        "stopwords": "stopwords.txt", "pronouns": "pronouns.txt", "nouns": "nouns.txt", "verbs": "verbs.txt",
        "attributes": "adjectives.txt", "male": "male.txt", "female": "female.txt", "persons": "persons.txt",
    }

    @classmethod
    def default(cls, max_span_len: int = 4) -> "SpanExtractionConfig":
        return cls(**{k: _packaged(f) for k, f in cls._FILES.items()}, max_span_len=max_span_len)

    @classmethod
    def from_dir(cls, directory, max_span_len: int = 4) -> "SpanExtractionConfig":
        """Packaged lexicons, overridden by any same-named file found in ``directory``."""
        base = cls.default(max_span_len)
        found = {}
        for key, fname in cls._FILES.items():
            p = Path(directory) / fname
            if p.exists():
                found[key] = _read_words(p)
        return cls(**{**{k: getattr(base, k) for k in cls._FILES}, **found}, max_span_len=max_span_len)

    def with_words(self, **extra: Iterable[str]) -> "SpanExtractionConfig":
        fields = {k: getattr(self, k) for k in self._FILES}
        for k, words in extra.items():
            fields[k] = fields[k] | frozenset(words)
        return SpanExtractionConfig(**fields, max_span_len=self.max_span_len)


_VERB_SUFFIXES = ("ing", "es", "ed", "s", "d")


def _is_verb(tok: str, lemmas: frozenset[str]) -> bool:
    """Exact lemma or a regular inflection of one (``stirs``, ``stirred``, ``dropping``)."""
    if tok in lemmas:
        return True
    for suf in _VERB_SUFFIXES:
        if tok.endswith(suf) and len(tok) > len(suf) + 1:
            stem = tok[: -len(suf)]
            if stem in lemmas or stem + "e" in lemmas or (len(stem) > 2 and stem[-1] == stem[-2] and stem[:-1] in lemmas):
                return True
            if suf == "es" and stem.endswith("i") and stem[:-1] + "y" in lemmas:
                return True
    return False


def pos_tag(tokens: Sequence[str], cfg: SpanExtractionConfig) -> list[str]:
    tags = []
    for tok in tokens:
        if not any(ch.isalnum() for ch in tok):
            tags.append("P")
        elif tok in cfg.stopwords or tok in cfg.pronouns:
            tags.append("S")
        elif tok in cfg.nouns or tok in cfg.male or tok in cfg.female or tok in cfg.persons:
            tags.append("N")
        elif tok in cfg.attributes or tok.isdigit() or tok.endswith("ly"):
            tags.append("A")
        elif _is_verb(tok, cfg.verbs):
            tags.append("V")
        elif tok.endswith("ing") or tok.endswith("ed"):
            tags.append("V")
        else:
            tags.append("N")
    return tags


def _agreement(noun: str, cfg: SpanExtractionConfig) -> str:
    if noun in cfg.male:
        return "male"
    if noun in cfg.female:
        return "female"
    if noun in cfg.persons:
        return "person"
    return "thing"


def _compatible(pron_class: str, noun: str, cfg: SpanExtractionConfig) -> bool:
    agr = _agreement(noun, cfg)
    if pron_class == "neuter":
        return agr == "thing"
    if pron_class == "plural":
        # singular "they" may refer to a person
        return agr == "person" or noun.endswith("s") and not noun.endswith("ss") or noun in ("people", "men", "women", "kids")
    return agr == pron_class or agr == "person"


def _first_compatible(tokens: Sequence[str], pron_class: str, cfg: SpanExtractionConfig) -> str | None:
    """Most salient compatible noun: the first one introduced by "a"/"an", else the first one."""
    first = None
    article = None
    for word, tag in zip(tokens, pos_tag(tokens, cfg)):
        if tag == "N" and (pron_class == "any" or _compatible(pron_class, word, cfg)):
            if article in ("a", "an"):
                return word
            first = first or word
        if tag != "A":
            article = word
    return first


def _replacement(tok: str, nxt: str | None, turn_prefix: list[str], clause: list[str],
                 earlier: list[list[str]], cfg: SpanExtractionConfig) -> list[str] | None:
    pron_class, possessive = _PRONOUN_FORMS.get(tok, ("any", False))
    if possessive is None:  # "her": possessive when a content word follows
        possessive = nxt is not None and pos_tag([nxt], cfg)[0] in ("N", "A")
    if not possessive and "V" in pos_tag(clause, cfg):
        # an object pronoun does not refer back to its own clause's subject
        turn_prefix = turn_prefix[: len(turn_prefix) - len(clause)]
    for tokens in [turn_prefix, *reversed(earlier)]:
        word = _first_compatible(tokens, pron_class, cfg)
        if word is not None:
            return ["the", word, "'s"] if possessive else ["the", word]
    return None


class SpanExtractor(Protocol):
    def resolve(self, turns: Sequence[DialogueTurn]) -> list[DialogueTurn]: ...

    def extract(self, turn: DialogueTurn) -> list[LexicalSpan]: ...


@dataclass(frozen=True)
class RuleSpanExtractor:
    cfg: SpanExtractionConfig = field(default_factory=SpanExtractionConfig.default)

    def resolve(self, turns):
        return resolve_coreferences(turns, self.cfg)

    def extract(self, turn):
        return extract_spans(turn, self.cfg)


def resolve_coreferences(turns: Sequence[DialogueTurn], cfg: SpanExtractionConfig | None = None) -> list[DialogueTurn]:
    """Replace each pronoun by a compatible noun mentioned before it.

    The current turn is searched first, then earlier turns from the most recent.
    Within a turn the first compatible noun wins (first mention is the most
    salient).  Only text before the pronoun is searched and unresolvable
    pronouns stay.
    """
    cfg = cfg or SpanExtractionConfig.default()
    earlier: list[list[str]] = []
    out = []
    for turn in turns:
        prefix: list[str] = []
        parts = []
        for seq in (turn.question, turn.answer):
            clause: list[str] = []
            new: list[str] = []
            for i, tok in enumerate(seq):
                rep = None
                if tok in cfg.pronouns:
                    nxt = seq[i + 1] if i + 1 < len(seq) else None
                    rep = _replacement(tok, nxt, prefix, clause, earlier, cfg)
                toks = rep if rep else [tok]
                new.extend(toks)
                prefix.extend(toks)
                clause = [] if tok in (",", ".", "?", "!", ";") else clause + toks
            parts.append(tuple(new))
        earlier.append(prefix)
        out.append(DialogueTurn(turn.turn_index, parts[0], parts[1]))
    return out


def _chunks(tokens: Sequence[str], tags: Sequence[str]) -> list[tuple[list[str], list[str]]]:
    chunks: list[tuple[list[str], list[str]]] = []
    cur_t: list[str] = []
    cur_g: list[str] = []

    def flush():
        if cur_t:
            chunks.append((cur_t.copy(), cur_g.copy()))
            cur_t.clear()
            cur_g.clear()

    for tok, tag in zip(tokens, tags):
        if tag in ("S", "P"):
            flush()
            continue
        if cur_g:
            prev = cur_g[-1]
            if (tag == "V") != (prev == "V") or (prev == "N" and tag == "A"):
                flush()
        cur_t.append(tok)
        cur_g.append(tag)
    flush()
    return chunks


def extract_spans(turn: DialogueTurn, cfg: SpanExtractionConfig | None = None) -> list[LexicalSpan]:
    """Lexical spans of a turn's question and answer, deduplicated, in text order."""
    cfg = cfg or SpanExtractionConfig.default()
    tokens = list(turn.tokens)
    spans: list[LexicalSpan] = []
    seen: set[tuple[str, ...]] = set()
    for toks, tags in _chunks(tokens, pos_tag(tokens, cfg)):
        pieces = []
        while toks:
            pieces.insert(0, (toks[-cfg.max_span_len:], tags[-cfg.max_span_len:]))
            toks, tags = toks[:-cfg.max_span_len], tags[:-cfg.max_span_len]
        for ptoks, ptags in pieces:
            key = tuple(ptoks)
            if key in seen:
                continue
            seen.add(key)
            kind = ENTITY if "N" in ptags else ACTION if "V" in ptags else ATTRIBUTE
            spans.append(LexicalSpan(turn.turn_index, key, kind))
    return spans
