"""Command-line interface: ``dialpath <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiment as ex
from .data import FIG1, figure_dialogue
from .dialogue import load_corpus
from .graph import graph_json_text, graph_to_dot
from .oracle import enumerate_paths, global_ground_truth_candidates, ground_truth_candidates
from .pathgen import DecodeOptions, generate_path, load_path_model, save_path_model
from .pipeline import make_example
from .propagation import load_joint_model, save_joint_model
from .synthetic import SyntheticConfigError, SyntheticCorpusConfig, gen_synthetic_corpus, save_synthetic_corpus

log = logging.getLogger("dialpath")

def _dump(obj, out) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")


def _config(args) -> ex.RunConfig:
    overrides = {k: getattr(args, k, None) for k in ("corpus", "out", "seed", "semantics", "direction", "tau",
                                                      "vectors", "lexicon", "epochs", "d", "regime")}
    if getattr(args, "config", None):
        cfg = ex.load_config(args.config, **overrides)
    else:
        cfg = ex.make_config({}, **overrides)
    if not cfg.model_params().in_paper_ranges():
        log.warning("model width/heads/dropout %s lie outside the published sweep", cfg.model_params().to_dict())
    log.info("run config %s", json.dumps(cfg.to_dict(), sort_keys=True))
    return cfg


def _graph_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--semantics", choices=["compositional", "global", "fully_connected"])
    p.add_argument("--direction", choices=["BiDirect", "TODirect"])
    p.add_argument("--tau", type=float)
    p.add_argument("--vectors", "--embeddings", dest="vectors", help="word vector file (token v1 ... vd per line)")
    p.add_argument("--lexicon", help="directory of stopword/pronoun/POS word lists")


def _find(dialogues, did):
    for d in dialogues:
        if d.id == did:
            return d
    raise SystemExit(f"dialogue {did!r} not found")


def _dialogues_for(args):
    if args.corpus:
        path = Path(args.corpus)
        if path.is_dir():
            data = ex.load_corpus_dir(path)
            return [d for split in data.splits.values() for d in split]
        return load_corpus(path)
    return [figure_dialogue()]


# -- subcommands --------------------------------------------------------------

def cmd_gen_corpus(args) -> int:
    seed = ex.make_config({}, seed=args.seed).seed
    try:
        cfg = SyntheticCorpusConfig(n_dialogues=args.n, n_val=args.n_val, n_test=args.n_test,
                                    stale_rate=args.stale_rate, seed=seed)
    except SyntheticConfigError as err:
        log.error("%s", err)
        return 1
    corpus = gen_synthetic_corpus(cfg)
    save_synthetic_corpus(corpus, args.out)
    log.info("wrote %d/%d/%d dialogues to %s", args.n, args.n_val, args.n_test, args.out)
    return 0


def cmd_build_graph(args) -> int:
    cfg = _config(args)
    dialogue = _find(_dialogues_for(args), args.dialogue)
    graph = ex.make_builder(cfg).build(dialogue, args.turn or len(dialogue))
    sys.stdout.write(graph_to_dot(graph) if args.format == "dot" else graph_json_text(graph) + "\n")
    return 0


def cmd_oracle_paths(args) -> int:
    cfg = _config(args)
    builder = ex.make_builder(cfg)
    rng = np.random.default_rng(cfg.seed)
    lines = []
    for d in _dialogues_for(args):
        turns = [args.turn] if args.turn else range(1, len(d) + 1)
        for t in turns:
            graph = builder.build(d, t)
            paths = enumerate_paths(graph)
            if cfg.semantics == "global":
                cands, score = global_ground_truth_candidates(graph, builder.answer_tokens(d, t), builder.table)
            else:
                cands, score = ground_truth_candidates(paths, builder.answer_spans(d, t), graph)
            chosen = cands[int(rng.integers(len(cands)))]
            lines.append({"dialogue": d.id, "turn": t, "path": list(chosen.turns), "score": score,
                          "candidates": len(cands), "tied": [list(p.turns) for p in cands],
                          "enumerated": [list(p.turns) for p in paths]})
    text = "".join(json.dumps(x, sort_keys=True) + "\n" for x in lines)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _load(cfg):
    data = ex.load_corpus_dir(cfg.corpus)
    return data, ex.prepare(cfg, data)


def cmd_train_paths(args) -> int:
    cfg = _config(args)
    ex.write_run_log(cfg.out, "train-paths", cfg)
    data, prep = _load(cfg)
    model, history = ex.train_paths(cfg, prep)
    save_path_model(Path(cfg.out) / "paths.ckpt", model, prep.vocab, {"run": cfg.to_dict()})
    _dump([vars(h) for h in history], Path(cfg.out) / "history.json")
    report = ex.evaluate_examples(prep.val, ex.strategy_paths("learned", prep.val, model), prep.vocab)
    _dump(report.to_dict(), Path(cfg.out) / "val_report.json")
    log.info("validation path exact match %.3f", report.path_exact_match)
    return 0


def cmd_train_joint(args) -> int:
    cfg = _config(args)
    ex.write_run_log(cfg.out, "train-joint", cfg)
    data, prep = _load(cfg)
    if not data.grids:
        log.error("corpus %s has no visual grids", cfg.corpus)
        return 1
    grid_dim = next(iter(data.grids.values())).shape[1]
    model, history = ex.train_joint_model(cfg, prep, grid_dim)
    save_joint_model(Path(cfg.out) / "joint.ckpt", model, prep.vocab, {"run": cfg.to_dict()})
    _dump([vars(h) for h in history], Path(cfg.out) / "history.json")
    return 0


def _load_any(path):
    try:
        model, vocab, meta = load_joint_model(path)
        return model.path, model, vocab, meta
    except ValueError:
        model, vocab, meta = load_path_model(path)
        return model, None, vocab, meta


def cmd_decode_path(args) -> int:
    path_model, _, vocab, meta = _load_any(args.model)
    cfg = ex.make_config({k: str(v) for k, v in meta.get("run", {}).items()
                          if k in ex.RunConfig.__dataclass_fields__}, corpus=args.corpus)
    dialogue = _find(_dialogues_for(args), args.dialogue)
    example = make_example(dialogue, args.turn, ex.make_builder(cfg), vocab)
    opts = DecodeOptions(mask_visited=not args.no_visited_mask, mask_later=not args.no_temporal_mask)
    path, dists = generate_path(path_model, example, args.beam, opts)
    out = {"dialogue": dialogue.id, "turn": args.turn, "path": list(path.turns),
           "step_probabilities": [[round(float(x), 6) for x in p] for p in dists]}
    sys.stdout.write(json.dumps(out, sort_keys=True) + "\n")
    return 0


def cmd_evaluate(args) -> int:
    path_model, joint, vocab, meta = (None, None, None, {}) if not args.model else _load_any(args.model)
    values = {k: str(v) for k, v in meta.get("run", {}).items() if k in ex.RunConfig.__dataclass_fields__}
    cfg = ex.make_config(values, corpus=args.corpus, seed=args.seed)
    data = ex.load_corpus_dir(cfg.corpus)
    prep = ex.prepare(ex.make_config(values, corpus=args.corpus, all_turns=False), data, vocab)
    examples = getattr(prep, args.split)
    paths = ex.strategy_paths(args.strategy, examples, path_model, cfg.seed, args.beam)
    report = ex.evaluate_examples(examples, paths, prep.vocab, joint, data.grids)
    out = {"strategy": args.strategy, "split": args.split, **report.to_dict()}
    _dump(out, args.output)
    return 0


def cmd_inspect(args) -> int:
    cfg = _config(args)
    data = ex.load_corpus_dir(cfg.corpus)
    dialogues = [d for s in data.splits.values() for d in s]
    hops: dict[str, int] = {}
    for g in data.gold.values():
        hops[str(g.hops)] = hops.get(str(g.hops), 0) + 1
    sweep = []
    for tau in args.taus:
        c = ex.make_config({}, corpus=cfg.corpus, semantics=cfg.semantics, tau=tau, vectors=cfg.vectors)
        builder = ex.make_builder(c)
        edges = hit = n = 0
        for d in dialogues[:args.limit]:
            g = data.gold.get((d.id, len(d)))
            if g is None:
                continue
            e = make_example(d, g.turn, builder, _NullVocab())
            edges += int(e.adj.sum()) - e.turn
            hit += tuple(g.path) in set(e.candidates)
            n += 1
        sweep.append({"tau": tau, "mean_edges": edges / max(n, 1), "oracle_recovers_gold": hit / max(n, 1), "n": n})
    out = {"dialogues": {k: len(v) for k, v in data.splits.items()}, "gold_hops": hops,
           "turns": {"min": min(len(d) for d in dialogues), "max": max(len(d) for d in dialogues)},
           "tau_sweep": sweep}
    _dump(out, args.output)
    return 0


class _NullVocab:
    pad_id, bos_id = 0, 2

    def encode(self, tokens):
        return [1 for _ in tokens]


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dialpath", description="Reasoning paths over dialogue turn graphs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-corpus", help="generate a synthetic corpus with planted paths")
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--n", type=int, default=500, help="training dialogues")
    g.add_argument("--n-val", type=int, default=100)
    g.add_argument("--n-test", type=int, default=100)
    g.add_argument("--stale-rate", type=float, default=0.0,
                   help="chance of an earlier turn reusing the chain-end action with another object")
    g.add_argument("-o", "--out", required=True)
    g.set_defaults(func=cmd_gen_corpus)

    b = sub.add_parser("build-graph", help="print the semantic graph of one turn")
    b.add_argument("--dialogue", default=FIG1)
    b.add_argument("--turn", type=int)
    b.add_argument("--corpus", help="JSONL file or corpus directory (default: packaged example)")
    b.add_argument("--format", choices=["json", "dot"], default="json")
    b.add_argument("--config")
    _graph_flags(b)
    b.set_defaults(func=cmd_build_graph)

    o = sub.add_parser("oracle-paths", help="enumerate paths and select ground truth")
    o.add_argument("--corpus", help="JSONL file or corpus directory (default: packaged example)")
    o.add_argument("--turn", type=int)
    o.add_argument("--seed", type=int)
    o.add_argument("--config")
    o.add_argument("-o", "--output")
    _graph_flags(o)
    o.set_defaults(func=cmd_oracle_paths)

    for name, fn, helptext in (("train-paths", cmd_train_paths, "train the path generator"),
                               ("train-joint", cmd_train_joint, "train path generator and answer model")):
        t = sub.add_parser(name, help=helptext)
        t.add_argument("--config")
        t.add_argument("--corpus")
        t.add_argument("--out")
        t.add_argument("--seed", type=int)
        t.add_argument("--epochs", type=int)
        t.add_argument("--d", type=int)
        if name == "train-joint":
            t.add_argument("--regime", choices=["joint", "pipeline"])
        _graph_flags(t)
        t.set_defaults(func=fn)

    dp = sub.add_parser("decode-path", help="decode the reasoning path of one turn")
    dp.add_argument("--model", required=True)
    dp.add_argument("--corpus", help="JSONL file or corpus directory (default: packaged example)")
    dp.add_argument("--dialogue", required=True)
    dp.add_argument("--turn", type=int, required=True)
    dp.add_argument("--beam", type=int, default=1)
    dp.add_argument("--no-visited-mask", action="store_true")
    dp.add_argument("--no-temporal-mask", action="store_true")
    dp.set_defaults(func=cmd_decode_path)

    e = sub.add_parser("evaluate", help="score a path strategy (and answers, given a joint model)")
    e.add_argument("--corpus", required=True)
    e.add_argument("--model")
    e.add_argument("--strategy", default="learned", choices=ex.STRATEGY_NAMES)
    e.add_argument("--split", default="test", choices=["train", "val", "test"])
    e.add_argument("--beam", type=int, default=1)
    e.add_argument("--seed", type=int)
    e.add_argument("-o", "--output")
    e.set_defaults(func=cmd_evaluate)

    i = sub.add_parser("inspect", help="corpus statistics and a similarity-threshold sweep")
    i.add_argument("--corpus", required=True)
    i.add_argument("--config")
    i.add_argument("--taus", type=float, nargs="+", default=[0.4, 0.5, 0.6, 0.7, 0.8])
    i.add_argument("--limit", type=int, default=200)
    i.add_argument("-o", "--output")
    _graph_flags(i)
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command == "evaluate" and args.strategy == "learned" and not args.model:
        parser.error("--strategy learned needs --model")
    try:
        return args.func(args)
    except (ex.ConfigError, FileNotFoundError, ValueError) as err:
        log.error("%s", err)
        return 1


if __name__ == "__main__":
    sys.exit(main())
