import json
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dialpath.dialogue import (
    CorpusError,
    Dialogue,
    DialogueTurn,
    Vocabulary,
    context_at,
    load_corpus,
    save_corpus,
    tokenize,
)
from dialpath.synthetic import SyntheticCorpusConfig, gen_synthetic_corpus

from conftest import FIXTURES


def test_tokenize_simple_question():
    assert tokenize("Is she walking?") == ["is", "she", "walking", "?"]


def test_tokenize_empty():
    assert tokenize("") == []


def test_tokenize_possessive():
    assert tokenize("the man's bag") == ["the", "man", "'s", "bag"]


def test_tokenize_fixture_file():
    rows = []
    for line in (FIXTURES / "tokenize.tsv").read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            continue
        sentence, expected = line.split("\t")
        rows.append((sentence, expected.split()))
    assert len(rows) == 20
    for sentence, expected in rows:
        assert tokenize(sentence) == expected, sentence


def _write(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")


def test_load_two_dialogues(tmp_path):
    p = tmp_path / "c.jsonl"
    _write(p, [{"id": "a", "turns": [{"q": "hi ?", "a": "yes ."}]},
               {"id": "b", "turns": [{"q": "who ?", "a": "me ."}, {"q": "why ?", "a": "no ."}]}])
    corpus = load_corpus(p)
    assert len(corpus) == 2
    assert len(corpus[1]) == 2


def test_gap_in_turn_indices_names_dialogue(tmp_path):
    p = tmp_path / "c.jsonl"
    _write(p, [{"id": "broken-7", "turns": [{"turn": 1, "q": "a ?", "a": "b"}, {"turn": 3, "q": "c ?", "a": "d"}]}])
    with pytest.raises(CorpusError, match="broken-7"):
        load_corpus(p)


def test_too_many_turns_rejected():
    with pytest.raises(CorpusError):
        Dialogue.from_texts("long", [("q ?", "a")] * 11)


def test_empty_question_rejected():
    with pytest.raises(CorpusError):
        DialogueTurn(1, ())


def test_synthetic_file_loads_fast(tmp_path):
    corpus = gen_synthetic_corpus(SyntheticCorpusConfig(n_dialogues=200, n_val=0, n_test=0))
    p = tmp_path / "train.jsonl"
    save_corpus(corpus.splits["train"], p)
    start = time.perf_counter()
    loaded = load_corpus(p)
    assert time.perf_counter() - start < 1.0
    assert len(loaded) == 200


def test_context_first_turn_is_empty(fig1):
    ctx, cur = context_at(fig1, 1)
    assert len(ctx) == 0
    assert cur.answer == ()


def test_context_at_fifth_turn(fig1):
    ctx, cur = context_at(fig1, 5)
    assert [t.turn_index for t in ctx.turns] == [1, 2, 3, 4]
    assert cur.turn_index == 5


def test_context_length():
    d = Dialogue.from_texts("x", [(f"q{i} ?", f"a{i} .") for i in range(10)])
    ctx, _ = context_at(d, 3)
    assert len(ctx) == 2


def test_vocabulary_reserved_ids():
    v = Vocabulary(["cat"])
    assert v.encode(["<pad>", "<oov>", "<bos>", "<eos>", "cat", "unseen"]) == [0, 1, 2, 3, 4, 1]
    assert v.decode([4]) == ["cat"]


words = st.text(alphabet="abcdefgh", min_size=1, max_size=6)
sentences = st.lists(words, min_size=1, max_size=6).map(lambda ws: " ".join(ws) + " ?")
dialogues = st.lists(st.tuples(sentences, st.lists(words, max_size=5).map(" ".join)), min_size=1, max_size=10)


@settings(max_examples=50, deadline=None)
@given(dialogues)
def test_context_never_contains_current_answer(qa):
    d = Dialogue.from_texts("p", qa)
    for t in range(1, len(d) + 1):
        ctx, cur = context_at(d, t)
        assert cur.answer == ()
        assert all(turn.turn_index < t for turn in ctx.turns)


@settings(max_examples=30, deadline=None)
@given(st.lists(dialogues, min_size=1, max_size=4))
def test_save_load_roundtrip(tmp_path_factory, many):
    corpus = [Dialogue.from_texts(f"d{k}", qa, video_ref=f"v{k}") for k, qa in enumerate(many)]
    p = tmp_path_factory.mktemp("rt") / "c.jsonl"
    save_corpus(corpus, p)
    assert load_corpus(p) == corpus
