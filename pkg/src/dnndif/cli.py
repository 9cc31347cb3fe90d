"""Command-line interface: ``dnndif <command> ...``.

Exit status is 0 on success, 1 for invalid input (arguments, configs, file
formats, shapes) and 2 for any other failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

# one BLAS thread unless the caller asks otherwise; keeps runs reproducible
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np  # noqa: E402

from . import store  # noqa: E402
from .corpus import generate_corpus, open_corpus  # noqa: E402
from .dnn import PROFILES, Architecture, TrainConfig, train  # noqa: E402
from .errors import ConfigError, DegenerateLabelsError, FormatError, ShapeError  # noqa: E402
from .evaluation import (baseline_confusion, pooled_evaluation, write_roc_csv, write_roc_svg,  # noqa: E402
                         write_summary_csv)
from .pipeline import SCALES, StageError, StudyCondition, flag_target, run_baseline, run_condition  # noqa: E402

log = logging.getLogger("dnndif")

EXIT_OK, EXIT_INVALID, EXIT_FAILURE = 0, 1, 2
INVALID = (ConfigError, FormatError, ShapeError, DegenerateLabelsError, FileNotFoundError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _load_sections(path) -> dict:
    return store.read_config(path) if path else {}


def cmd_gen(args) -> int:
    sections = _load_sections(args.config)
    config = sections.get("simulation")
    if config is None:
        raise ConfigError(f"{args.config}: a 'simulation' section is required")
    if args.reps < 1:
        raise ConfigError("--reps must be >= 1")
    corpus = generate_corpus(config, args.reps, args.out, args.seed, workers=args.workers)
    print(f"wrote {corpus.n_replications} replications to {corpus.root}")
    return EXIT_OK


def cmd_train(args) -> int:
    sections = _load_sections(args.config)
    base = sections.get("train", TrainConfig()).to_dict()
    overrides = {"epochs": args.epochs, "batch_size": args.batch, "learning_rate": args.lr,
                 "momentum": args.momentum, "seed": args.seed}
    base.update({k: v for k, v in overrides.items() if v is not None})
    cfg = TrainConfig.from_dict(base)
    corpus = open_corpus(args.data)
    arch = Architecture.for_profile(args.profile, corpus.input_dim, corpus.n_cells)
    if args.hidden:
        arch = Architecture(corpus.input_dim, corpus.n_cells, tuple(args.hidden))
    net, history = train(corpus, args.target, arch, cfg, np.random.default_rng(cfg.seed))
    meta = {"target": args.target, "seed": cfg.seed, "epochs": cfg.epochs_for(args.target),
            "train": cfg.to_dict(), "corpus_config_hash": corpus.config.digest(),
            "history": history.to_dict()}
    store.write_model(net, args.out, meta)
    print(f"{args.target} model written to {args.out} "
          f"(final val AUROC {history.val_auroc[-1]:.4f})")
    return EXIT_OK


def cmd_eval(args) -> int:
    net_t, _, _ = store.read_model(args.model_thresholds)
    net_l, _, _ = store.read_model(args.model_loadings)
    corpus = open_corpus(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evaluations = pooled_evaluation(net_t, net_l, corpus)
    base = None
    if args.baseline:
        flags = store.read_flag_csv(args.baseline, corpus.n_replications, corpus.n_groups, corpus.n_items)
        labels = [corpus.read(k)[1] for k in range(corpus.n_replications)]
        base = baseline_confusion(flags, labels)
    for target, ev in evaluations.items():
        write_roc_csv(ev.roc, out / f"roc_{target}.csv")
        if args.svg:
            write_roc_svg(ev, out / f"roc_{target}.svg", baseline=base[target] if base else None)
        print(f"{target}: AUROC {ev.roc.auroc:.4f}  cutpoint {ev.cutpoint:.6g}  "
              f"sensitivity {ev.sensitivity:.3f}  specificity {ev.specificity:.3f}")
    write_summary_csv(evaluations.values(), out / "summary.csv")
    if args.store_cutpoints:
        for path, target in ((args.model_thresholds, "thresholds"), (args.model_loadings, "loadings")):
            net, meta, _ = store.read_model(path)
            store.write_model(net, path, meta, cutpoint=evaluations[target].cutpoint)
    return EXIT_OK


def cmd_baseline(args) -> int:
    corpus = open_corpus(args.data)
    flags, failures = run_baseline(corpus, args.alpha)
    store.write_flag_csv(flags, args.out)
    labels = [corpus.read(k)[1] for k, f in enumerate(flags) if f is not None]
    done = [f for f in flags if f is not None]
    if done:
        for target, c in baseline_confusion(done, labels).items():
            print(f"{target}: TPR {c.tpr:.4f}  FPR {c.fpr:.4f}")
    if failures:
        print(f"{len(failures)} replication(s) failed", file=sys.stderr)
    return EXIT_OK


def cmd_predict(args) -> int:
    net_t, _, cut_t = store.read_model(args.model_thresholds)
    net_l, _, cut_l = store.read_model(args.model_loadings)
    cut_t = args.cut_thresholds if args.cut_thresholds is not None else cut_t
    cut_l = args.cut_loadings if args.cut_loadings is not None else cut_l
    if cut_t is None or cut_l is None:
        raise ConfigError("model has no stored cutpoint; pass --cut-thresholds/--cut-loadings")
    target = store.read_response_file(args.target, args.groups, args.items, args.per_group)
    report = flag_target(net_t, net_l, target, (cut_t, cut_l),
                         models=(str(args.model_thresholds), str(args.model_loadings)))
    store.atomic_write_text(args.out, report.to_csv())
    print(f"{report.n_flags} cell flag(s) written to {args.out}")
    return EXIT_OK


def cmd_study(args) -> int:
    sections = _load_sections(args.config)
    cond = StudyCondition.from_id(args.condition, args.scale)
    if "condition" in sections:
        cond = sections["condition"]
    sim_overrides = None
    if "simulation" in sections:
        sim = sections["simulation"].to_dict()
        sim_overrides = {k: v for k, v in sim.items() if k not in ("n_groups", "n_items", "n_per_group")}
    arch = sections.get("architecture", {})
    if "profile" in arch:
        if arch["profile"] not in PROFILES:
            raise ConfigError(f"unknown profile {arch['profile']!r}")
        cond.profile = arch["profile"]
    report = run_condition(cond, args.seed, args.out, train_cfg=sections.get("train"),
                           sim_overrides=sim_overrides, alpha=args.alpha, svg=args.svg,
                           hidden_widths=arch.get("hidden_widths"), workers=args.workers)
    for target, summary in report.metrics["dnn"].items():
        b = report.metrics["baseline"][target]
        print(f"{target}: AUROC {summary['auroc']:.4f}  cutpoint {summary['cutpoint']:.6g}  "
              f"baseline TPR {b['tpr']:.3f} FPR {b['fpr']:.3f}")
    print(f"report written to {Path(args.out) / 'report.json'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dnndif", description="Simulation-trained detectors of item non-invariance.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="simulate a training or evaluation corpus")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--reps", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--workers", type=int, default=1)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train a thresholds or loadings network")
    t.add_argument("--data", required=True)
    t.add_argument("--target", choices=("thresholds", "loadings"), required=True)
    t.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    t.add_argument("--hidden", type=int, nargs=3, metavar="WIDTH", help="override the profile widths")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--momentum", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--config", help="JSON config whose 'train' section supplies defaults")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="pooled ROC evaluation of two networks on a corpus")
    e.add_argument("--model-thresholds", required=True)
    e.add_argument("--model-loadings", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--svg", action="store_true")
    e.add_argument("--baseline", help="flag CSV from the baseline command, overlaid on the SVG")
    e.add_argument("--store-cutpoints", action="store_true", help="save the Liu cutpoints into the models")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("baseline", help="pairwise logistic flags for every replication")
    b.add_argument("--data", required=True)
    b.add_argument("--alpha", type=float, default=0.01)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_baseline)

    r = sub.add_parser("predict", help="flag the cells of a target response file")
    r.add_argument("--model-thresholds", required=True)
    r.add_argument("--model-loadings", required=True)
    r.add_argument("--target", required=True)
    r.add_argument("--groups", type=int, required=True)
    r.add_argument("--items", type=int, required=True)
    r.add_argument("--per-group", type=int, required=True)
    r.add_argument("--cut-thresholds", type=float)
    r.add_argument("--cut-loadings", type=float)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_predict)

    s = sub.add_parser("study", help="run one simulation-study condition end to end")
    s.add_argument("--condition", type=int, choices=(1, 2, 3, 4), required=True)
    s.add_argument("--scale", default="desk", help=f"one of {sorted(SCALES)} or a fraction in (0, 1]")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--alpha", type=float, default=0.01)
    s.add_argument("--svg", action="store_true")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--config")
    s.set_defaults(func=cmd_study)
    return p


def _is_invalid(exc) -> bool:
    while exc is not None:
        if isinstance(exc, INVALID) or isinstance(exc, ValueError) and not isinstance(exc, StageError):
            return True
        exc = exc.__cause__
    return False


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped onto exit codes
        print(f"error: {exc}", file=sys.stderr)
        if args.verbose:
            log.exception("details")
        return EXIT_INVALID if _is_invalid(exc) else EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
