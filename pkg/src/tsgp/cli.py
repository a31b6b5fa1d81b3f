"""Command-line interface.

Exit status: 0 success, 1 internal error, 2 input/data error, 3 configuration
error (including invalid command-line usage). Progress goes to standard error;
artifacts are written to files.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import os
import sys
import time

from . import TOOL_ID, __version__
from .classifier import accuracy, fit_extra_trees, fit_predict_1nn
from .cost import analyze
from .dataset import format_number, load_ucr_tsv, load_unlabeled
from .errors import ConfigError, DataError, MalformedModel
from .evolution import EvoConfig, EvolvedModel, default_threads, evolve, history_csv, znormalize
from .program import (
    ProgramTree,
    branches,
    output_dim,
    render_tree,
    structural_stats,
    transform_dataset,
    tree_from_document,
    validate_tree,
)

log = logging.getLogger("tsgp")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(3)


def _sidecar(out: str, suffix: str) -> str:
    stem, _ = os.path.splitext(out)
    return f"{stem}{suffix}"


def write_manifest(path: str, command: str, args: argparse.Namespace, started: float, extra=None) -> None:
    settings = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command")}
    doc = {
        "command": command,
        "argv": sys.argv[1:],
        "settings": settings,
        "inputs": {k: os.path.abspath(v) for k, v in settings.items()
                   if k in ("train", "test", "data", "model") and isinstance(v, str)},
        "seed": settings.get("seed"),
        "tool_version": __version__,
        "wall_clock_seconds": round(time.time() - started, 3),
    }
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, default=str)
        fh.write("\n")


def load_model(path: str):
    """Return ``(tree, EvolvedModel or None)``; bare tree documents are accepted."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"no such file: {path}") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedModel(f"{path}: not valid JSON ({exc})") from None
    if isinstance(doc, dict) and "classifier" in doc:
        model = EvolvedModel.from_document(doc)
        return model.tree, model
    return tree_from_document(doc), None


def _require_model(path: str) -> EvolvedModel:
    _, model = load_model(path)
    if model is None:
        raise MalformedModel(f"{path} holds a program without a trained classifier")
    return model


def _load_inputs(path: str, model: EvolvedModel | None, no_labels: bool):
    """Return (matrix, label codes or None)."""
    if no_labels:
        return load_unlabeled(path), None
    labels = model.label_values if model is not None else None
    d = load_ucr_tsv(path, labels)
    return d.X, d.y


def _fmt_label(value) -> str:
    return str(value)


# ---------------------------------------------------------------------------
# commands

def cmd_evolve(args) -> int:
    started = time.time()
    cfg = EvoConfig(
        population_size=args.population,
        generations=args.generations,
        folds=args.folds,
        fitness_trees=args.fitness_trees,
        final_trees=args.final_trees,
        tournament_ratio=args.mu,
        seed=args.seed,
        selection=args.selection,
        znorm=args.znorm,
    )
    if args.threads < 1:
        raise ConfigError("--threads must be at least 1")
    train = load_ucr_tsv(args.train)
    log.info("evolving on %s: %d series of length %d", train.name, train.n_instances, train.series_length)

    def progress(row):
        log.info("gen %3d  best %.4f  mean %.4f  size %d", row["generation"], row["best_mean_fitness"],
                 row["mean_mean_fitness"], row["best_tree_size"])

    model = evolve(train, cfg, threads=args.threads, progress=progress)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(model.to_json())
    log_path = args.log or _sidecar(args.out, "_log.csv")
    with open(log_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(history_csv(model.history))
    write_manifest(_sidecar(args.out, "_manifest.json"), "evolve", args, started,
                   {"config": cfg.to_dict(), "outputs": {"model": args.out, "log": log_path}})
    log.info("best program: %s", render_tree(model.tree))
    return 0


def cmd_transform(args) -> int:
    started = time.time()
    tree, model = load_model(args.model)
    X, y = _load_inputs(args.data, model, args.no_labels)
    if model is not None and model.config.znorm:
        X = znormalize(X)
    F = transform_dataset(tree, X)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = [f"f{i}" for i in range(F.shape[1])]
        if y is not None:
            labels = model.label_values if model is not None else None
            w.writerow(["label"] + header)
            for code, row in zip(y, F):
                label = labels[code] if labels else int(code)
                w.writerow([_fmt_label(label)] + [format_number(v) for v in row])
        else:
            w.writerow(header)
            for row in F:
                w.writerow([format_number(v) for v in row])
    write_manifest(_sidecar(args.out, "_manifest.json"), "transform", args, started)
    log.info("wrote %d x %d features to %s", F.shape[0], F.shape[1], args.out)
    return 0


def cmd_predict(args) -> int:
    started = time.time()
    model = _require_model(args.model)
    X, y = _load_inputs(args.data, model, args.no_labels)
    pred = model.predict(X)
    lines = [_fmt_label(model.label_values[int(p)]) for p in pred]
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        write_manifest(_sidecar(args.out, "_manifest.json"), "predict", args, started)
    else:
        print("\n".join(lines))
    if y is not None:
        print(f"accuracy={accuracy(pred, y)!r}")
    return 0


def cmd_inspect(args) -> int:
    tree, model = load_model(args.model)
    print(f"program: {render_tree(tree)}")
    print(f"series_length: {tree.series_length}")
    print(f"depth: {tree.depth}  nodes: {tree.size}")
    for i, b in enumerate(branches(tree), start=1):
        print(f"branch {i}: {b.describe()}")
    print(f"feature_dim: {output_dim(tree)}")
    if model is not None:
        folds = ", ".join(f"{a:.4f}" for a in model.fitness.per_fold)
        print(f"fitness: mean={model.fitness.mean:.4f} folds=[{folds}]")
        print(f"classifier: extra-trees, {len(model.classifier.trees)} trees")
    return 0


def cmd_cost(args) -> int:
    tree, model = load_model(args.model)
    clf = None
    if args.with_classifier:
        if model is None:
            raise MalformedModel("--with-classifier needs a model with a trained classifier")
        clf = model.classifier
    if args.length is not None and args.length != tree.series_length:
        report_ok = validate_tree(ProgramTree(tree.root, args.length)).ok
        if not report_ok:
            raise DataError(f"program is not valid for series length {args.length}")
    report = analyze(tree, args.length, clf)
    doc = json.dumps(report.to_dict(), indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(doc + "\n")
    else:
        print(doc)
    print(report.summary())
    return 0


def cmd_stats(args) -> int:
    paths = sorted({p for pattern in args.models for p in glob.glob(pattern)})
    if not paths:
        raise DataError(f"no model files match {' '.join(args.models)}")
    trees = [load_model(p)[0] for p in paths]
    table = structural_stats(trees)
    text = table.to_csv()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    for cat in table.zero_denominators:
        log.warning("category %s has no occurrences and was omitted", cat)
    log.info("aggregated %d models, %d branches", table.n_trees, table.n_branches)
    return 0


def cmd_baseline(args) -> int:
    train = load_ucr_tsv(args.train)
    test = load_ucr_tsv(args.test, train.label_values)
    if train.series_length != test.series_length:
        raise DataError("train and test series lengths differ")
    Xtr, Xte = train.X, test.X
    if args.znorm:
        Xtr, Xte = znormalize(Xtr), znormalize(Xte)
    if args.method == "1nn":
        pred = fit_predict_1nn(Xtr, train.y, Xte)
    else:
        if args.final_trees < 1:
            raise ConfigError("--final-trees must be at least 1")
        pred = fit_extra_trees(Xtr, train.y, args.final_trees, args.seed, train.n_classes).predict(Xte)
    print(f"method={args.method} accuracy={accuracy(pred, test.y)!r}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tsgp", description="Evolve, apply and analyse time series feature programs.")
    p.add_argument("--version", action="version", version=TOOL_ID)
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    p.add_argument("-q", "--quiet", action="store_true", help="only warnings and errors")
    # the same flags after the subcommand; SUPPRESS keeps them from resetting the top-level values
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    common.add_argument("-q", "--quiet", action="store_true", default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("evolve", parents=[common], help="evolve a feature program on a training set")
    e.add_argument("--train", required=True)
    e.add_argument("--out", required=True, help="model JSON path")
    e.add_argument("--log", help="per-generation CSV (default: <out>_log.csv)")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--generations", type=int, default=50)
    e.add_argument("--population", type=int, default=100)
    e.add_argument("--mu", type=float, default=7.0, help="tournament size, percent of the population")
    e.add_argument("--fitness-trees", type=int, default=10)
    e.add_argument("--final-trees", type=int, default=100)
    e.add_argument("--folds", type=int, default=5)
    e.add_argument("--selection", choices=("pareto", "tournament"), default="pareto")
    e.add_argument("--znorm", action="store_true", help="z-normalise each series first")
    e.add_argument("--threads", type=int, default=default_threads())
    e.set_defaults(func=cmd_evolve)

    t = sub.add_parser("transform", parents=[common], help="write the feature matrix of a dataset")
    t.add_argument("--model", required=True)
    t.add_argument("--data", "--test", dest="data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--no-labels", action="store_true")
    t.set_defaults(func=cmd_transform)

    pr = sub.add_parser("predict", parents=[common], help="classify a dataset with an evolved model")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", "--test", dest="data", required=True)
    pr.add_argument("--out", help="write predicted labels here instead of standard output")
    pr.add_argument("--no-labels", action="store_true")
    pr.set_defaults(func=cmd_predict)

    i = sub.add_parser("inspect", parents=[common], help="describe the layers of an evolved program")
    i.add_argument("--model", required=True)
    i.set_defaults(func=cmd_inspect)

    c = sub.add_parser("cost", parents=[common], help="FLOP count and peak memory of a program")
    c.add_argument("--model", required=True)
    c.add_argument("--length", type=int, help="series length (default: the model's)")
    c.add_argument("--with-classifier", action="store_true", help="add extra-trees traversal cost")
    c.add_argument("--out", help="write the JSON report here instead of standard output")
    c.set_defaults(func=cmd_cost)

    s = sub.add_parser("stats", parents=[common], help="operation usage proportions over many models")
    s.add_argument("models", nargs="+", help="model files or glob patterns")
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)

    b = sub.add_parser("baseline", parents=[common], help="accuracy of a classifier on the raw series")
    b.add_argument("--train", required=True)
    b.add_argument("--test", required=True)
    b.add_argument("--method", choices=("1nn", "et-raw"), default="1nn")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--final-trees", type=int, default=100)
    b.add_argument("--znorm", action="store_true")
    b.set_defaults(func=cmd_baseline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return 3
    except DataError as exc:
        log.error("input error: %s", exc)
        return 2
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return 2
    except Exception:  # noqa: BLE001 - last-resort boundary
        log.exception("internal error")
        return 1


if __name__ == "__main__":
    sys.exit(main())
