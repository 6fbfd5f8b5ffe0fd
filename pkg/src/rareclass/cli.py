"""Command-line surface: train, predict, evaluate, coverage, bench, synth."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import coverage as cov
from . import evaluation, featurize, recognizer, rejection, trainer
from .dataset import (CorpusError, RARE, SyntheticConfig, gen_synthetic,
                      load_corpus, save_corpus)
from .objective import Hyperparams, ObjectiveError, bind_data, gram_squared, identity_gram
from .recognizer import ModelDocument, ModelDocumentError
from .trainer import DivergenceError, TrainConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(ValueError):
    pass


def _atomic_write(path: str, payload: str) -> None:
    recognizer._atomic_write(path, payload)


def _default_seed() -> int:
    env = os.environ.get("RARE_SEED")
    return int(env) if env else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rareclass", allow_abbrev=False)
    parser.add_argument("--config", help="JSON config file; flags override its values")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=None)

    def add_train_flags(p):
        p.add_argument("--rep", default="tfidf1k",
                       help="tfidf1k | pca:<rank> | raw")
        p.add_argument("--lambda0", type=float, default=1.0)
        p.add_argument("--lambdak", type=float, default=1.0)
        p.add_argument("--mu", type=float, default=1.0)
        p.add_argument("--iters", type=int, default=500)
        p.add_argument("--step", type=float, default=None)
        p.add_argument("--momentum", type=float, default=0.9)
        p.add_argument("--batch", type=int, default=None)
        p.add_argument("--reject", choices=["evt", "percentile"], default="evt")
        p.add_argument("--q", type=float, default=0.01)
        p.add_argument("--log-every", type=int, default=0)

    p = sub.add_parser("train", help="fit a model and write a model document")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    add_train_flags(p)
    add_common(p)

    p = sub.add_parser("predict", help="stream jsonl in, decisions jsonl out")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", default=None, help="default: stdout")
    add_common(p)

    p = sub.add_parser("evaluate", help="repeated split/train/test protocol")
    p.add_argument("--input", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--reps", type=int, default=5)
    add_train_flags(p)
    add_common(p)

    p = sub.add_parser("coverage", help="build and solve the word-cover program")
    p.add_argument("--input", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--top-n", type=int, default=20)
    p.add_argument("--solver", choices=["exact", "greedy"], default="greedy")
    p.add_argument("--time-cap", type=float, default=None)
    p.add_argument("--words-csv", default=None, help="also export ranked word lists as CSV")
    add_common(p)

    p = sub.add_parser("bench", help="time fit at n, 2n, 4n")
    p.add_argument("--out", default=None)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--d", type=int, default=200)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--mu", type=float, default=1.0)
    add_common(p)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--d", type=int, default=20)
    p.add_argument("--k-total", type=int, default=6)
    p.add_argument("--docs-per-subclass", type=int, default=100)
    p.add_argument("--majority-docs", type=int, default=600)
    p.add_argument("--separation", type=float, default=6.0)
    p.add_argument("--noise", type=float, default=1.0)
    add_common(p)
    return parser


def _merge_config(args: argparse.Namespace, argv: list[str]) -> argparse.Namespace:
    """Config-file values fill in flags the user did not pass explicitly."""
    if not args.config:
        return args
    with open(args.config, encoding="utf-8") as fh:
        conf = json.load(fh)
    known = set(vars(args))
    unknown = [k for k in conf if k.replace("-", "_") not in known]
    if unknown:
        raise UsageError(f"unknown config keys: {unknown}")
    passed = {a.split("=")[0].lstrip("-").replace("-", "_") for a in argv if a.startswith("--")}
    for key, value in conf.items():
        attr = key.replace("-", "_")
        if attr not in passed:
            setattr(args, attr, value)
    return args


def _effective_config(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "config"}


def _parse_rep(rep: str) -> tuple[str, int]:
    if rep == "tfidf1k":
        return "tfidf", 0
    if rep == "raw":
        return "raw", 0
    if rep.startswith("pca:"):
        try:
            return "pca", int(rep.split(":", 1)[1])
        except ValueError:
            raise UsageError(f"bad pca rank in --rep {rep!r}") from None
    raise UsageError(f"unknown representation {rep!r}")


def _train_cfg(args) -> TrainConfig:
    return TrainConfig(max_iters=args.iters, step_size=args.step,
                       momentum=args.momentum, batch=args.batch,
                       seed=args.seed, log_every=args.log_every)


def _reject_method(args) -> str:
    return rejection.EVT_POT if args.reject == "evt" else rejection.PERCENTILE


def cmd_train(args) -> int:
    corpus = load_corpus(args.input)
    rep, pca_rank = _parse_rep(args.rep)
    n = corpus.n
    # the whole input corpus is the training set for `train`
    if rep == "raw":
        X = corpus.feature_matrix()
        descriptor, vocab, proj = {"kind": "raw", "d": X.shape[1]}, None, None
    else:
        texts = [d.text for d in corpus.docs]
        vocab = featurize.build_vocab(texts, top_n=1000)
        X = featurize.tfidf_transform(texts, vocab).values
        descriptor, proj = {"kind": "tfidf"}, None
        if rep == "pca":
            proj = featurize.pca_fit(X, rank=min(pca_rank, min(X.shape)))
            X = (X - proj.mean) @ proj.components.T
            descriptor = {"kind": "pca", "rank": proj.rank}
    rare_mask = np.array([d.label == RARE for d in corpus.docs])
    subs = np.array([d.subclass or 0 for d in corpus.docs])
    data = bind_data(X, rare_mask, subs)
    hp = Hyperparams.uniform(data.K, lambda0=args.lambda0, lambdak=args.lambdak, mu=args.mu)
    gram = identity_gram(X) if rep == "pca" else gram_squared(X)
    model = trainer.fit(data, hp, _train_cfg(args), gram=gram)
    thresholds = rejection.calibrate(model, data, method=_reject_method(args), q=args.q)
    doc = ModelDocument(
        version=recognizer.MODEL_VERSION, d=data.d, K=data.K, params=model.params,
        thresholds=thresholds, representation=descriptor,
        subclass_names=corpus.subclass_names or tuple(str(k) for k in range(1, data.K + 1)),
        vocab=vocab, projection=proj)
    recognizer.save(doc, args.out)
    return EXIT_OK


def cmd_predict(args) -> int:
    model = recognizer.load(args.model)
    records = []
    with open(args.input, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: invalid json ({exc.msg})") from exc
    X = model.featurize(records)
    decisions, _ = recognizer.predict_stream(model, list(X))
    out = "".join(json.dumps(d.to_json(index=i)) + "\n" for i, d in enumerate(decisions))
    if args.out:
        _atomic_write(args.out, out)
    else:
        sys.stdout.write(out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    corpus = load_corpus(args.input)
    rep, pca_rank = _parse_rep(args.rep)
    rep_name = {"tfidf": "tfidf", "pca": "pca", "raw": "raw"}[rep]
    report = evaluation.run_experiment(
        corpus,
        hp_template={"lambda0": args.lambda0, "lambdak": args.lambdak, "mu": args.mu},
        cfg=_train_cfg(args),
        repetitions=args.reps, base_seed=args.seed,
        representation=rep_name, pca_rank=pca_rank,
        reject_method=_reject_method(args), q=args.q,
        config_echo=_effective_config(args))
    payload = json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n"
    if args.out:
        _atomic_write(args.out, payload)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_coverage(args) -> int:
    corpus = load_corpus(args.input)
    texts = [d.text for d in corpus.docs]
    vocab = featurize.build_vocab(texts, top_n=args.top_n)
    program = cov.build_program(corpus, vocab)
    if args.solver == "exact":
        sol = cov.solve_exact(program, time_cap=args.time_cap)
    else:
        sol = cov.solve_greedy(program)
    report = cov.coverage_report(sol, program)
    report["config"] = _effective_config(args)
    if args.out:
        _atomic_write(args.out, json.dumps(report, indent=2, sort_keys=True) + "\n")
    if args.words_csv:
        _atomic_write(args.words_csv, cov.report_words_csv(report))
    sys.stdout.write(cov.report_text(report))
    return EXIT_OK


def bench_timings(n: int, d: int, K: int, iters: int, mu: float, seed: int) -> list[dict]:
    """Wall time of fit at n, 2n, 4n with d, K, iteration count fixed."""
    timings = []
    for mult in (1, 2, 4):
        cfg = SyntheticConfig(d=d, K_total=K + 1, docs_per_subclass=max(n * mult // (2 * K), 4),
                              majority_docs=n * mult // 2, subclass_separation=4.0,
                              noise_scale=1.0, seed=seed)
        corpus = gen_synthetic(cfg)
        X = corpus.feature_matrix()
        rare_mask = np.array([doc.label == RARE for doc in corpus.docs])
        subs = np.array([doc.subclass or 0 for doc in corpus.docs])
        data = bind_data(X, rare_mask, subs)
        hp = Hyperparams.uniform(data.K, mu=mu)
        tcfg = TrainConfig(max_iters=iters, tol=1e-15, seed=seed)
        start = time.perf_counter()
        trainer.fit(data, hp, tcfg)
        timings.append({"n": data.n, "seconds": time.perf_counter() - start})
    return timings


def cmd_bench(args) -> int:
    timings = bench_timings(args.n, args.d, args.k, args.iters, args.mu, args.seed)
    ratios = [timings[i + 1]["seconds"] / timings[i]["seconds"] for i in range(len(timings) - 1)]
    payload = {"timings": timings, "ratios": ratios, "config": _effective_config(args)}
    text = json.dumps(payload, indent=2) + "\n"
    if args.out:
        _atomic_write(args.out, text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = SyntheticConfig(d=args.d, K_total=args.k_total,
                          docs_per_subclass=args.docs_per_subclass,
                          majority_docs=args.majority_docs,
                          subclass_separation=args.separation,
                          noise_scale=args.noise, seed=args.seed)
    corpus = gen_synthetic(cfg)
    save_corpus(corpus, args.out)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "coverage": cmd_coverage,
    "bench": cmd_bench,
    "synth": cmd_synth,
}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _merge_config(args, argv)
        if getattr(args, "seed", None) is None:
            args.seed = _default_seed()
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusError, ModelDocumentError, cov.CoverageError,
            featurize.FeaturizeError, rejection.RejectionError,
            evaluation.EvalError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, ObjectiveError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
