"""Per-class bootstrap accuracy estimation with confidence intervals.

Each replicate draws a fixed number of evaluation records per class with
replacement; the per-class accuracy of that draw is one sample of the
accuracy distribution. Replicate seeds derive from (seed, replicate index)
so replicates are order-independent and parallelizable while the full
result stays deterministic.

The default interval is the normal approximation around the replicate
mean, mean +/- z * sd / sqrt(B). A conventional percentile interval is
offered separately under its own name; the two are not interchangeable
(the percentile interval spans roughly the min-max columns, the normal
one is a standard error of the mean).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from statistics import NormalDist

import numpy as np

from .errors import EmptyClass, IncompletePredictions, InsufficientSamples
from .manifest import DatasetManifest
from .predictions import PredictionTable
from .seeds import derive_seed


@dataclass(frozen=True)
class BootstrapConfig:
    replicates: int = 500
    per_class_n: int = 200
    confidence_level: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.replicates < 2:
            raise ValueError("replicates must be >= 2 (sd undefined for a single replicate)")
        if self.per_class_n < 1:
            raise ValueError("per_class_n must be >= 1")
        if not 0.0 < self.confidence_level < 1.0:
            raise ValueError("confidence_level must lie in (0, 1)")


@dataclass(frozen=True)
class ClassAccuracyStats:
    class_label: str
    replicate_accuracies: tuple[float, ...]
    min: float
    mean: float
    max: float
    ci_lo: float
    ci_hi: float
    warning: str | None = None

    @classmethod
    def from_replicates(cls, class_label: str, accuracies, level: float,
                        warning: str | None = None) -> "ClassAccuracyStats":
        values = [float(v) for v in accuracies]
        lo, hi = confidence_interval(values, level)
        return cls(
            class_label=class_label,
            replicate_accuracies=tuple(values),
            min=min(values),
            mean=float(np.mean(values)),
            max=max(values),
            ci_lo=lo,
            ci_hi=hi,
            warning=warning,
        )

    @classmethod
    def from_summary(cls, class_label: str, min: float, mean: float, max: float,
                     ci_lo: float, ci_hi: float) -> "ClassAccuracyStats":
        """Build stats from already-summarized values (no replicate array)."""
        return cls(
            class_label=class_label,
            replicate_accuracies=(),
            min=min, mean=mean, max=max, ci_lo=ci_lo, ci_hi=ci_hi,
        )

    def to_dict(self) -> dict:
        d = {
            "class": self.class_label,
            "min": self.min,
            "mean": self.mean,
            "max": self.max,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
            "replicate_accuracies": list(self.replicate_accuracies),
        }
        if self.warning is not None:
            d["warning"] = self.warning
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClassAccuracyStats":
        return cls(
            class_label=d["class"],
            replicate_accuracies=tuple(d.get("replicate_accuracies", ())),
            min=d["min"],
            mean=d["mean"],
            max=d["max"],
            ci_lo=d["ci_lo"],
            ci_hi=d["ci_hi"],
            warning=d.get("warning"),
        )


def normal_quantile(level: float) -> float:
    """Two-sided standard normal quantile for a confidence level."""
    return NormalDist().inv_cdf((1.0 + level) / 2.0)


def confidence_interval(values, level: float) -> tuple[float, float]:
    """Normal-approximation interval: mean +/- z * s / sqrt(n), s with n-1 denominator."""
    values = [float(v) for v in values]
    n = len(values)
    if n < 2:
        raise InsufficientSamples(f"need at least 2 values, got {n}")
    if not 0.0 < level < 1.0:
        raise ValueError("confidence level must lie in (0, 1)")
    m = float(np.mean(values))
    s = float(np.std(values, ddof=1))
    half = normal_quantile(level) * s / math.sqrt(n)
    return (m - half, m + half)


def percentile_interval(values, level: float) -> tuple[float, float]:
    """Conventional percentile bootstrap interval (NOT the default reporting interval)."""
    values = [float(v) for v in values]
    if len(values) < 2:
        raise InsufficientSamples(f"need at least 2 values, got {len(values)}")
    if not 0.0 < level < 1.0:
        raise ValueError("confidence level must lie in (0, 1)")
    alpha = 1.0 - level
    lo, hi = np.quantile(values, [alpha / 2.0, 1.0 - alpha / 2.0])
    return (float(lo), float(hi))


def _correctness_by_class(predictions: PredictionTable, truth: DatasetManifest) -> dict[str, np.ndarray]:
    """Per class, an array marking whether each truth record was predicted correctly.

    Rows with a per-record error can never match the truth and count as
    incorrect.
    """
    pred_by_path = predictions.by_path()
    missing = [r.path for r in truth.records if r.path not in pred_by_path]
    if missing:
        raise IncompletePredictions(
            f"{len(missing)} truth records lack predictions, e.g. {missing[0]!r}"
        )
    correct: dict[str, list[bool]] = {c: [] for c in truth.class_set}
    for rec in truth.records:
        row = pred_by_path[rec.path]
        ok = row.error is None and row.predicted_label == rec.class_label
        correct[rec.class_label].append(ok)
    for label, flags in correct.items():
        if not flags:
            raise EmptyClass(f"class {label!r} has no records in the truth manifest")
    return {label: np.asarray(flags, dtype=np.float64) for label, flags in correct.items()}


def replicate_seed(seed: int, replicate_index: int) -> int:
    """Seed for one bootstrap replicate; shared convention with reference checkers."""
    return derive_seed(seed, "replicate", replicate_index)


def bootstrap_per_class(predictions: PredictionTable, truth: DatasetManifest,
                        cfg: BootstrapConfig) -> list[ClassAccuracyStats]:
    """Bootstrap the per-class accuracy over ``cfg.replicates`` resamples.

    Within a replicate, classes are drawn in class_set order from a single
    generator seeded by (cfg.seed, replicate index); each class draws
    ``cfg.per_class_n`` records with replacement.
    """
    correctness = _correctness_by_class(predictions, truth)
    labels = list(truth.class_set)
    per_class: dict[str, list[float]] = {c: [] for c in labels}
    for b in range(cfg.replicates):
        rng = np.random.default_rng(replicate_seed(cfg.seed, b))
        for label in labels:
            flags = correctness[label]
            draw = rng.integers(0, len(flags), size=cfg.per_class_n)
            per_class[label].append(float(flags[draw].mean()))

    stats = []
    for label in labels:
        available = len(correctness[label])
        warning = None
        if available < cfg.per_class_n:
            warning = (f"class has only {available} records; replicates of "
                       f"{cfg.per_class_n} drawn with replacement overlap heavily")
        stats.append(ClassAccuracyStats.from_replicates(
            label, per_class[label], cfg.confidence_level, warning=warning
        ))
    return stats


def per_class_accuracy(predictions: PredictionTable, truth: DatasetManifest) -> dict[str, float]:
    """Non-bootstrap point estimate: exact fraction correct per class."""
    correctness = _correctness_by_class(predictions, truth)
    return {label: float(flags.mean()) for label, flags in correctness.items()}


# --- export ------------------------------------------------------------------

def save_stats_csv(stats: list[ClassAccuracyStats], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "min", "mean", "max", "ci_lo", "ci_hi"])
        for s in stats:
            writer.writerow([s.class_label, repr(s.min), repr(s.mean), repr(s.max),
                             repr(s.ci_lo), repr(s.ci_hi)])
    return path


def load_stats_csv(path: str | Path) -> list[ClassAccuracyStats]:
    stats = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            stats.append(ClassAccuracyStats.from_summary(
                class_label=row["class"],
                min=float(row["min"]), mean=float(row["mean"]), max=float(row["max"]),
                ci_lo=float(row["ci_lo"]), ci_hi=float(row["ci_hi"]),
            ))
    return stats


def save_stats_json(stats: list[ClassAccuracyStats], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump([s.to_dict() for s in stats], fh, indent=2)
        fh.write("\n")
    return path


def load_stats_json(path: str | Path) -> list[ClassAccuracyStats]:
    with open(path) as fh:
        return [ClassAccuracyStats.from_dict(d) for d in json.load(fh)]
