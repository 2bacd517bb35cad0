"""Command-line entry point: preprocess, train, generate, reconstruct,
optimize, evaluate."""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .chemgraph import AtomVocabulary
from .config import ConfigError, build_run_config
from .decoder import decode_from_latent
from .histograms import HistogramDistribution
from .metrics import generation_report, reconstruction_rate
from .model import GenerativeModel
from .smiles import load_dataset, parse_smiles, write_smiles
from .training import optimize_latent, predict_property, train_loop


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def _load_model(path: str, vocab_path: str | None = None) -> GenerativeModel:
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    model = GenerativeModel.load(path)
    if vocab_path:
        model.check_compatible(AtomVocabulary.load(vocab_path))
    return model


def cmd_preprocess(args) -> int:
    vocab = AtomVocabulary.load(args.vocab)
    loaded = load_dataset(args.data, vocab)
    if not loaded.records:
        raise ValueError(f"no parseable molecules in {args.data}")
    os.makedirs(args.out, exist_ok=True)

    rng = _rng(args.seed)
    order = rng.permutation(len(loaded.records))
    n_test = int(round(len(order) * args.test_frac))
    test_idx = set(order[:n_test].tolist())

    train_records = [r for i, r in enumerate(loaded.records) if i not in test_idx]
    test_records = [r for i, r in enumerate(loaded.records) if i in test_idx]

    manifest = os.path.join(args.out, "split.txt")
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.write(f"# source={args.data} seed={args.seed} test_frac={args.test_frac}\n")
        for r in train_records:
            fh.write(f"train\t{r.line_no}\t{r.smiles}\n")
        for r in test_records:
            fh.write(f"test\t{r.line_no}\t{r.smiles}\n")
    for name, records in (("train.smi", train_records), ("test.smi", test_records)):
        with open(os.path.join(args.out, name), "w", encoding="utf-8") as fh:
            for r in records:
                line = r.smiles if r.prop is None else f"{r.smiles}\t{r.prop}"
                fh.write(line + "\n")

    dist = HistogramDistribution.from_graphs([r.graph for r in train_records])
    dist_path = os.path.join(args.out, "histograms.dist")
    dist.save(dist_path)

    print(f"parsed={len(loaded.records)} failures={len(loaded.failures)}")
    for line_no, message in loaded.failures[:20]:
        print(f"  line {line_no}: {message}", file=sys.stderr)
    print(f"train={len(train_records)} test={len(test_records)}")
    print(f"distribution: {dist_path} ({len(dist)} distinct histograms)")
    return 0


def cmd_train(args) -> int:
    overrides = {
        key: getattr(args, key)
        for key in ("latent_dim", "hidden_dim", "mp_steps", "epochs", "batch_size",
                    "lambda_latent", "lambda_opt", "lr", "seed")
        if getattr(args, key) is not None
    }
    run = build_run_config(args.config, overrides)
    run.validate(require_files=("vocab", "train_data"))
    vocab = AtomVocabulary.load(run.vocab)
    loaded = load_dataset(run.train_data, vocab)
    if not loaded.records:
        raise ValueError(f"no parseable molecules in {run.train_data}")
    if loaded.failures:
        print(f"# skipped {len(loaded.failures)} unparseable lines", file=sys.stderr)

    rng = _rng(run.seed)
    graphs = [r.graph for r in loaded.records]
    dist = HistogramDistribution.from_graphs(graphs)
    model = GenerativeModel(vocab, run.model_config(), dist, rng)

    def checkpoint_fn(epoch: int) -> None:
        model.save(args.out, extra_meta={"epoch": epoch, "seed": run.seed})

    train_loop(
        graphs,
        [r.prop for r in loaded.records],
        model.params,
        vocab,
        run,
        rng,
        checkpoint_fn=checkpoint_fn,
    )
    print(f"checkpoint: {args.out}")
    return 0


def cmd_generate(args) -> int:
    model = _load_model(args.ckpt)
    rng = _rng(args.seed)
    trace_lines: list[str] = []
    with open(args.out, "w", encoding="utf-8") as fh:
        for i in range(args.n):
            result = model.generate(rng, collect_trace=args.trace is not None)
            smiles = write_smiles(result.graph)
            flag = 1 if result.fallback_count > 0 else 0
            fh.write(f"{smiles}\tfallback={flag}\n")
            if args.trace is not None:
                trace_lines.append(f"# molecule {i}")
                trace_lines.extend(result.trace)
    if args.trace is not None:
        with open(args.trace, "w", encoding="utf-8") as fh:
            fh.write("\n".join(trace_lines) + "\n")
    print(f"wrote {args.n} molecules to {args.out}")
    return 0


def cmd_reconstruct(args) -> int:
    model = _load_model(args.ckpt, args.vocab)
    loaded = load_dataset(args.data, model.vocab)
    if loaded.failures:
        print(f"# skipped {len(loaded.failures)} unparseable lines", file=sys.stderr)
    result = reconstruction_rate(
        model,
        loaded.graphs,
        _rng(args.seed),
        encodings_per_molecule=args.encodings,
        molecule_cap=args.cap,
    )
    result.skipped = len(loaded.failures)
    print(
        f"reconstruction_pct={result.rate_pct:.2f} successes={result.successes} "
        f"attempts={result.attempts} molecules={result.molecules} skipped={result.skipped}"
    )
    return 0


def cmd_optimize(args) -> int:
    model = _load_model(args.ckpt)
    rng = _rng(args.seed)
    graph = parse_smiles(args.smiles, model.vocab)
    encoding = model.encode(graph)
    z = encoding.mu  # deterministic start: the posterior means
    before = predict_property(z, model.params, model.cfg).item()
    direction = "ascend" if args.direction == "up" else "descend"
    z_new, history = optimize_latent(
        z, model.params, model.cfg, direction=direction,
        steps=args.steps, step_size=args.step_size,
    )
    after = history[-1]
    target = graph.valence_histogram(include_hydrogens=False)
    out_graph = decode_from_latent(z_new, target, model.params, model.vocab, model.cfg, rng)
    print(f"input={args.smiles}")
    print(f"optimized={write_smiles(out_graph)}")
    print(f"property_before={before:.6f}")
    print(f"property_after={after:.6f}")
    return 0


def cmd_evaluate(args) -> int:
    model = _load_model(args.ckpt, args.vocab)
    loaded = load_dataset(args.train_data, model.vocab)
    if not loaded.records:
        raise ValueError(f"no parseable molecules in {args.train_data}")
    report = generation_report(
        model, loaded.graphs, _rng(args.seed), samples=args.samples
    )
    for line in report.as_lines():
        print(line)
    print(report.as_table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="histvae",
        description="Histogram-conditioned molecular graph VAE",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="parse a dataset, split it, build the histogram distribution")
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--test-frac", type=float, default=0.1, dest="test_frac")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p.add_argument("--latent-dim", type=int, default=None, dest="latent_dim")
    p.add_argument("--hidden-dim", type=int, default=None, dest="hidden_dim")
    p.add_argument("--mp-steps", type=int, default=None, dest="mp_steps")
    p.add_argument("--lambda-latent", type=float, default=None, dest="lambda_latent")
    p.add_argument("--lambda-opt", type=float, default=None, dest="lambda_opt")
    p.add_argument("--lr", type=float, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("generate", help="sample molecules from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("-n", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", default=None, help="write per-decision traces here")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("reconstruct", help="run the reconstruction protocol on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", default=None, help="cross-check against the checkpoint vocabulary")
    p.add_argument("--encodings", type=int, default=20)
    p.add_argument("--cap", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_reconstruct)

    p = sub.add_parser("optimize", help="gradient steps in latent space on one molecule")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--smiles", required=True)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--direction", choices=("up", "down"), default="up")
    p.add_argument("--step-size", type=float, default=0.05, dest="step_size")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_optimize)

    p = sub.add_parser("evaluate", help="generation metrics against a training set")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--train-data", required=True, dest="train_data")
    p.add_argument("--vocab", default=None)
    p.add_argument("--samples", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
