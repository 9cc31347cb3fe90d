"""End-to-end simulation studies and flagging of target datasets.

A study for one condition generates a training and an evaluation corpus,
trains the threshold and loading networks, runs the logistic baseline on the
evaluation corpus, and writes a JSON report with the pooled ROC results.

Study directory layout::

    train/            training corpus
    eval/             evaluation corpus
    models/thresholds.json, models/loadings.json
    roc_thresholds.csv, roc_loadings.csv, summary.csv, baseline_flags.csv
    metrics.json      seed-determined results
    report.json       metrics plus file list and timings
"""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import store
from .corpus import Corpus, generate_corpus
from .dnn import Architecture, Network, TrainConfig, predict, train
from .errors import ConfigError, DnnDifError, ShapeError
from .evaluation import (baseline_confusion, pooled_evaluation, write_roc_csv, write_roc_svg,
                         write_summary_csv)
from .logitdif import majority_flags
from .simgen import ResponseDataset, SimulationConfig

log = logging.getLogger(__name__)

CONDITIONS = {1: (4, 5), 2: (10, 5), 3: (4, 3), 4: (10, 3)}
PAPER_TRAINING_REPS = 300_000
PAPER_EVAL_REPS = 5_000
# named scales: (training replications, evaluation replications, width profile)
SCALES = {
    "small": (1_000, 100, "desk"),
    "desk": (20_000, 500, "desk"),
    "paper": (PAPER_TRAINING_REPS, PAPER_EVAL_REPS, "paper"),
}
STAGES = ("train-corpus", "eval-corpus", "train-thresholds", "train-loadings", "baseline", "evaluate")


class StageError(DnnDifError):
    def __init__(self, stage, exc):
        super().__init__(f"stage {stage} failed: {exc}")
        self.stage = stage


@dataclass
class StudyCondition:
    condition_id: int = 1
    n_groups: int = 4
    n_items: int = 5
    n_per_group: int = 400
    n_training_reps: int = PAPER_TRAINING_REPS
    n_eval_reps: int = PAPER_EVAL_REPS
    profile: str = "paper"

    def __post_init__(self):
        if self.condition_id in CONDITIONS and (self.n_groups, self.n_items) != CONDITIONS[self.condition_id]:
            raise ConfigError(f"condition {self.condition_id} is {CONDITIONS[self.condition_id]} "
                              f"(groups, items), got ({self.n_groups}, {self.n_items})")
        if self.n_training_reps < 1 or self.n_eval_reps < 1:
            raise ConfigError("replication counts must be positive")

    @classmethod
    def from_id(cls, condition_id: int, scale="desk") -> "StudyCondition":
        if condition_id not in CONDITIONS:
            raise ConfigError(f"condition must be one of {sorted(CONDITIONS)}, got {condition_id}")
        n_train, n_eval, profile = resolve_scale(scale)
        G, I = CONDITIONS[condition_id]
        return cls(condition_id, G, I, 400, n_train, n_eval, profile)

    def simulation_config(self, **overrides) -> SimulationConfig:
        return SimulationConfig(n_groups=self.n_groups, n_items=self.n_items,
                                n_per_group=self.n_per_group, **overrides)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "StudyCondition":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown condition keys: {sorted(unknown)}")
        return cls(**d)


def resolve_scale(scale) -> tuple:
    """``(training reps, eval reps, width profile)`` for a named or numeric scale."""
    if isinstance(scale, str) and scale in SCALES:
        return SCALES[scale]
    try:
        s = float(scale)
    except (TypeError, ValueError):
        raise ConfigError(f"scale must be one of {sorted(SCALES)} or a number in (0, 1]") from None
    if not 0 < s <= 1:
        raise ConfigError(f"numeric scale must lie in (0, 1], got {s}")
    return (max(1, round(PAPER_TRAINING_REPS * s)), max(1, round(PAPER_EVAL_REPS * s)),
            "desk" if s < 1 else "paper")


def derive_seed(master_seed: int, stage: str) -> int:
    """Stage seed from the study seed; stable across runs and platforms."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(STAGES.index(stage) + 1000,))
    return int(ss.generate_state(1, np.uint64)[0])


def run_baseline(corpus: Corpus, alpha: float = 0.01) -> tuple:
    """Majority-rule logistic flags per replication; ``(flags, failures)``.

    A replication that cannot be read or analysed yields ``None`` in ``flags``
    and an entry in ``failures``.
    """
    flags, failures = [], []
    for k in range(corpus.n_replications):
        try:
            data, _ = corpus.read(k)
            flags.append(majority_flags(data, alpha))
        except (DnnDifError, ValueError, OSError, np.linalg.LinAlgError) as exc:
            log.warning("baseline failed on replication %d: %s", k + 1, exc)
            flags.append(None)
            failures.append({"replication": k + 1, "error": str(exc)})
    return flags, failures


@dataclass
class FlagReport:
    threshold_probability: np.ndarray
    loading_probability: np.ndarray
    threshold_flag: np.ndarray
    loading_flag: np.ndarray
    cutpoints: tuple
    models: tuple = ("", "")

    def to_csv(self) -> str:
        lines = ["group,item,threshold_probability,loading_probability,threshold_flag,loading_flag"]
        G, I = self.threshold_probability.shape
        for g in range(G):
            for i in range(I):
                lines.append("%d,%d,%.17g,%.17g,%d,%d" % (
                    g + 1, i + 1, self.threshold_probability[g, i], self.loading_probability[g, i],
                    self.threshold_flag[g, i], self.loading_flag[g, i]))
        return "\n".join(lines) + "\n"

    @property
    def n_flags(self) -> int:
        return int(self.threshold_flag.sum() + self.loading_flag.sum())


def flag_target(model_thresholds: Network, model_loadings: Network, target: ResponseDataset,
                cutpoints: tuple, models: tuple = ("", "")) -> FlagReport:
    """Predict both probability vectors for ``target`` and apply the cutpoints."""
    G, I, n = target.n_groups, target.n_items, target.n_per_group
    for net in (model_thresholds, model_loadings):
        arch = net.architecture
        if arch.input_dim != G * I * n or arch.output_dim != G * I:
            raise ShapeError(f"target is {G} groups x {I} items x {n} per group "
                             f"({G * I * n} inputs, {G * I} cells); model expects "
                             f"{arch.input_dim} inputs and {arch.output_dim} cells")
    x = target.flatten()
    p_thr = predict(model_thresholds, x).reshape(G, I)
    p_load = predict(model_loadings, x).reshape(G, I)
    cut_thr, cut_load = cutpoints
    return FlagReport(p_thr, p_load, (p_thr >= cut_thr).astype(np.uint8),
                      (p_load >= cut_load).astype(np.uint8), (float(cut_thr), float(cut_load)), models)


@dataclass
class StudyReport:
    condition: dict
    master_seed: int
    metrics: dict
    files: dict
    timings: dict = field(default_factory=dict)
    baseline_failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _timed(timings, stage, func, *args, **kwargs):
    start = time.perf_counter()
    try:
        result = func(*args, **kwargs)
    except Exception as exc:  # noqa: BLE001 - rewrapped with the stage name
        raise StageError(stage, exc) from exc
    timings[stage] = time.perf_counter() - start
    return result


def run_condition(cond: StudyCondition, master_seed: int, out_dir, train_cfg: TrainConfig | None = None,
                  sim_overrides: dict | None = None, alpha: float = 0.01, svg: bool = False,
                  hidden_widths: tuple | None = None, workers: int = 1) -> StudyReport:
    """Run one simulation-study condition into ``out_dir`` and return its report.

    ``metrics.json`` holds everything that depends only on the seed, so two
    runs with equal inputs produce byte-identical copies; ``report.json`` adds
    wall-clock timings.
    """
    out = Path(out_dir)
    (out / "models").mkdir(parents=True, exist_ok=True)
    train_cfg = train_cfg or TrainConfig()
    sim = cond.simulation_config(**(sim_overrides or {}))
    timings = {}
    if hidden_widths:
        arch = Architecture(sim.input_dim, sim.n_cells, tuple(hidden_widths))
    else:
        arch = Architecture.for_profile(cond.profile, sim.input_dim, sim.n_cells)

    train_corpus = _timed(timings, "train-corpus", generate_corpus, sim, cond.n_training_reps,
                          out / "train", derive_seed(master_seed, "train-corpus"), workers)
    eval_corpus = _timed(timings, "eval-corpus", generate_corpus, sim, cond.n_eval_reps,
                         out / "eval", derive_seed(master_seed, "eval-corpus"), workers)

    nets, histories = {}, {}
    for target in ("thresholds", "loadings"):
        stage = f"train-{target}"
        rng = np.random.default_rng(derive_seed(master_seed, stage))
        nets[target], histories[target] = _timed(timings, stage, train, train_corpus, target,
                                                  arch, train_cfg, rng)

    flags, failures = _timed(timings, "baseline", run_baseline, eval_corpus, alpha)
    evaluations = _timed(timings, "evaluate", pooled_evaluation, nets["thresholds"], nets["loadings"],
                         eval_corpus)
    labels = [eval_corpus.read(k)[1] for k in range(eval_corpus.n_replications)]
    base = baseline_confusion(flags, labels)

    files = {"train_corpus": "train/manifest.json", "eval_corpus": "eval/manifest.json"}
    for target, net in nets.items():
        ev = evaluations[target]
        rel = f"models/{target}.json"
        meta = {"target": target, "seed": derive_seed(master_seed, f"train-{target}"),
                "epochs": train_cfg.epochs_for(target), "train": train_cfg.to_dict(),
                "corpus_config_hash": sim.digest()}
        store.write_model(net, out / rel, meta, cutpoint=ev.cutpoint)
        files[f"model_{target}"] = rel
        write_roc_csv(ev.roc, out / f"roc_{target}.csv")
        files[f"roc_{target}"] = f"roc_{target}.csv"
        if svg:
            write_roc_svg(ev, out / f"roc_{target}.svg", baseline=base[target])
            files[f"svg_{target}"] = f"roc_{target}.svg"
    write_summary_csv([evaluations["thresholds"], evaluations["loadings"]], out / "summary.csv")
    files["summary"] = "summary.csv"
    store.write_flag_csv(flags, out / "baseline_flags.csv")
    files["baseline_flags"] = "baseline_flags.csv"

    metrics = {
        "dnn": {t: evaluations[t].summary() for t in evaluations},
        "baseline": {t: base[t].to_dict() for t in base},
        "history": {t: histories[t].to_dict() for t in histories},
        "n_training_reps": cond.n_training_reps,
        "n_eval_reps": cond.n_eval_reps,
    }
    files["metrics"] = "metrics.json"
    store.atomic_write_text(out / "metrics.json", json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    report = StudyReport(cond.to_dict(), int(master_seed), metrics, files, timings, failures)
    store.atomic_write_text(out / "report.json", json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return report


def run_scaled_condition(condition_id: int, scale, master_seed: int, out_dir, **kwargs) -> StudyReport:
    """:func:`run_condition` for a numbered condition at a named or numeric scale."""
    return run_condition(StudyCondition.from_id(condition_id, scale), master_seed, out_dir, **kwargs)


def load_report(out_dir) -> dict:
    return json.loads((Path(out_dir) / "report.json").read_text())
