import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dialpath.dialogue import Vocabulary
from dialpath.graph import GraphBuilder
from dialpath.nn import ModelParams, pos_encode
from dialpath.pathgen import (
    DecodeOptions,
    PathGeneratorModel,
    TrainConfig,
    decode_step,
    evaluate_loss,
    exact_match,
    generate_path,
    generate_paths,
    path_targets,
    step_mask,
    train_path_generator,
)
from dialpath.pipeline import Example, build_examples, make_example
from dialpath.synthetic import SyntheticCorpusConfig, gen_synthetic_corpus

TINY = ModelParams(d=16, heads=2, dropout=0.0)


def _random_example(rng, t, vocab_size=20, p=0.4):
    adj = np.zeros((t, t))
    for i in range(t):
        adj[i, i] = 1
        for j in range(i):
            if rng.random() < p:
                adj[i, j] = adj[j, i] = 1
    c_turns = [t] + [i for i in range(1, t) for _ in range(int(rng.integers(1, 4)))]
    return Example(
        dialogue_id="r", turn=t, q_ids=rng.integers(4, vocab_size, int(rng.integers(1, 6))),
        c_ids=rng.integers(4, vocab_size, len(c_turns)), c_turns=np.array(c_turns), node_ids=[],
        adj=adj, answer_ids=np.array([4]), candidates=[(t,)], paths=[(t,)])


def test_targets_end_with_eop():
    assert path_targets([5, 4, 2]) == [3, 1, 10]
    assert path_targets([3]) == [10]


def test_question_encoding_is_embedding_plus_position():
    model = PathGeneratorModel(20, TINY, seed=1)
    ids = np.array([[5, 7, 5]])
    enc = model.encode_question(ids).data[0]
    want = model.tokens.weight.data[[5, 7, 5]] + pos_encode(3, 16)
    assert np.array_equal(enc, want)
    assert enc.shape == (3, 16)
    assert not np.allclose(enc[0], enc[2])
    assert model.encode_question(np.array([[9]])).shape == (1, 1, 16)


def test_empty_question_rejected():
    with pytest.raises(ValueError):
        PathGeneratorModel(20, TINY).encode_question(np.zeros((1, 0), dtype=np.int64))


def test_step_mask_rules():
    adj = np.ones((5, 5))
    allowed = step_mask(adj, [5, 3])
    assert list(np.flatnonzero(allowed)) == [0, 1, 10]
    loose = step_mask(adj, [5, 3], opts=DecodeOptions(mask_visited=False, mask_later=False))
    assert list(np.flatnonzero(loose)) == [0, 1, 2, 3, 4, 10]


def test_masked_entries_negligible_on_random_graphs():
    rng = np.random.default_rng(0)
    model = PathGeneratorModel(20, TINY, seed=2)
    for _ in range(1000):
        ex = _random_example(rng, int(rng.integers(1, 11)))
        prefix = [ex.turn]
        p = decode_step(model, ex, prefix)
        allowed = step_mask(ex.adj, prefix)
        assert abs(p.sum() - 1.0) < 1e-12
        assert np.all(p[~allowed] < 1e-8)
        assert p[model.eop] > 1e-8


def test_self_loops_only_gives_eop():
    ex = _random_example(np.random.default_rng(1), 6, p=0.0)
    p = decode_step(PathGeneratorModel(20, TINY, seed=3), ex, [6])
    assert p[10] > 1 - 1e-8


def test_empty_context_gives_current_turn():
    ex = _random_example(np.random.default_rng(1), 1)
    model = PathGeneratorModel(20, TINY, seed=4)
    assert generate_path(model, ex)[0].turns == (1,)
    assert generate_path(model, ex, beam=3)[0].turns == (1,)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 10))
def test_beam_one_is_greedy_and_walks_are_valid(seed, t):
    rng = np.random.default_rng(seed)
    ex = _random_example(rng, t, p=0.6)
    model = PathGeneratorModel(20, TINY, seed=seed % 1000)
    greedy = generate_paths(model, [ex])[0]
    assert generate_path(model, ex, beam=1)[0].turns == greedy.turns
    for path in (greedy, generate_path(model, ex, beam=4)[0]):
        turns = path.turns
        assert turns[0] == t
        assert all(a > b and ex.adj[a - 1, b - 1] for a, b in zip(turns, turns[1:]))


def test_beam_never_worse_than_greedy_in_log_probability():
    rng = np.random.default_rng(9)
    model = PathGeneratorModel(20, TINY, seed=5)

    def logp(dists, turns):
        classes = [i - 1 for i in turns[1:]] + [model.eop]
        return sum(np.log(d[c]) for d, c in zip(dists, classes))

    for _ in range(20):
        ex = _random_example(rng, int(rng.integers(2, 9)), p=0.7)
        g, gd = generate_path(model, ex, beam=1)
        b, bd = generate_path(model, ex, beam=5)
        assert logp(bd, b.turns) >= logp(gd, g.turns) - 1e-9


# -- training ---------------------------------------------------------------------


def _examples(cfg):
    corpus = gen_synthetic_corpus(cfg)
    vocab = Vocabulary.build(corpus.splits["train"])
    builder, gi = GraphBuilder(), corpus.gold_index()
    return (build_examples(corpus.splits["train"], builder, vocab, gi),
            build_examples(corpus.splits["val"], builder, vocab, gi), vocab)


def test_degenerate_corpus_learns_eop_first():
    train, val, vocab = _examples(SyntheticCorpusConfig(n_dialogues=100, n_val=50, n_test=0,
                                                        hop_probs=(1.0, 0.0, 0.0), seed=3))
    model = PathGeneratorModel(len(vocab), TINY, seed=0)
    train_path_generator(model, train, val, TrainConfig(epochs=5, warmup_epochs=1, log_every=0))
    paths = generate_paths(model, val)
    assert np.mean([p.turns == (e.turn,) for p, e in zip(paths, val)]) >= 0.99


@pytest.fixture(scope="module")
def default_examples():
    return _examples(SyntheticCorpusConfig(n_dialogues=200, n_val=300, n_test=0))


def _uniform_step_bayes(e, path):
    """Best possible teacher-forced accuracy on a label drawn uniformly from ``e.paths``."""
    hits = []
    for m in range(1, len(path) + 1):
        prefix = path[:m]
        nxt = [p[m] if len(p) > m else None for p in e.paths if p[:m] == prefix]
        hits.append(max(nxt.count(c) for c in set(nxt)) / len(nxt))
    return hits


def test_shuffled_label_control(default_examples):
    train, val, vocab = default_examples
    rng = np.random.default_rng(0)

    def randomise(examples):
        return [Example(**{**e.__dict__, "gold": e.paths[int(rng.integers(len(e.paths)))]}) for e in examples]

    noisy_train, noisy_val = randomise(train), randomise(val)
    model = PathGeneratorModel(len(vocab), TINY, seed=0)
    train_path_generator(model, noisy_train, [], TrainConfig(epochs=8, warmup_epochs=1, log_every=0))
    # a label drawn uniformly and independently matches any valid prediction with probability 1/|paths|
    chance = float(np.mean([1 / len(e.paths) for e in noisy_val]))
    em = exact_match(generate_paths(model, noisy_val), [[e.gold] for e in noisy_val])
    sd = np.sqrt(chance * (1 - chance) / len(noisy_val))
    assert abs(em - chance) <= 3 * sd
    # teacher forcing must not see the step it predicts
    bayes = float(np.mean([h for e in noisy_val for h in _uniform_step_bayes(e, e.gold)]))
    _, step_acc = evaluate_loss(model, noisy_val, [[e.gold] for e in noisy_val])
    assert step_acc <= bayes + 0.05


def test_early_training_loss_non_increasing(default_examples):
    train, val, vocab = default_examples
    model = PathGeneratorModel(len(vocab), TINY, seed=0)
    hist = train_path_generator(model, train, [], TrainConfig(epochs=10, warmup_epochs=1, log_every=0))
    losses = np.array([h.train_loss for h in hist])
    avg = np.convolve(losses, np.ones(5) / 5, mode="valid")
    assert np.all(np.diff(avg) <= 0)


def test_figure_pattern_decodes_after_training(fig1):
    vocab = Vocabulary.build([fig1])
    ex = make_example(fig1, 5, GraphBuilder(), vocab)
    assert ex.oracle == (5, 4, 2)
    model = PathGeneratorModel(len(vocab), TINY, seed=0)
    train_path_generator(model, [ex] * 16, [],
                         TrainConfig(epochs=30, batch_size=16, warmup_epochs=1, supervision="oracle", log_every=0))
    path, dists = generate_path(model, ex)
    assert path.turns == (5, 4, 2)
    assert [int(np.argmax(d)) for d in dists] == [3, 1, 10]
