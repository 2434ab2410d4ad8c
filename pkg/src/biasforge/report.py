"""Cross-model comparison, bias identification and augmentation planning.

``compare_models`` lines the per-class bootstrap means of several models up
against the first (baseline) model. ``identify_bias`` picks the weak
classes under a policy, and ``recommend_augmentation`` turns them into
draft render specs, closing the diagnose-render-retrain loop.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

from .bootstrap import ClassAccuracyStats
from .errors import ClassSetMismatch, KTooLarge
from .render import RenderSpec
from .seeds import derive_seed

DEFAULT_REGRESSION_EPSILON = 0.01


@dataclass(frozen=True)
class ComparisonReport:
    models: tuple[str, ...]
    per_class: dict[str, tuple[float, ...]]
    deltas: dict[str, tuple[float, ...]]
    worst_class_per_model: dict[str, str]
    regressed_classes: tuple[str, ...]
    regression_epsilon: float = DEFAULT_REGRESSION_EPSILON

    @property
    def class_set(self) -> tuple[str, ...]:
        return tuple(sorted(self.per_class))

    def to_dict(self) -> dict:
        return {
            "models": list(self.models),
            "per_class": {c: list(v) for c, v in sorted(self.per_class.items())},
            "deltas": {c: list(v) for c, v in sorted(self.deltas.items())},
            "worst_class_per_model": dict(sorted(self.worst_class_per_model.items())),
            "regressed_classes": list(self.regressed_classes),
            "regression_epsilon": self.regression_epsilon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ComparisonReport":
        return cls(
            models=tuple(d["models"]),
            per_class={c: tuple(v) for c, v in d["per_class"].items()},
            deltas={c: tuple(v) for c, v in d["deltas"].items()},
            worst_class_per_model=dict(d["worst_class_per_model"]),
            regressed_classes=tuple(d["regressed_classes"]),
            regression_epsilon=d.get("regression_epsilon", DEFAULT_REGRESSION_EPSILON),
        )

    def save_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")
        return path

    @classmethod
    def load_json(cls, path: str | Path) -> "ComparisonReport":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save_csv(self, path: str | Path) -> Path:
        """Matrix export: one row per class, one column per model."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["class"] + list(self.models))
            for label in self.class_set:
                writer.writerow([label] + [repr(v) for v in self.per_class[label]])
        return path


@dataclass(frozen=True)
class AugmentationRecommendation:
    target_classes: tuple[str, ...]
    per_class_count: int
    draft_specs: tuple[RenderSpec, ...]

    def __post_init__(self):
        if not self.target_classes:
            raise ValueError("target_classes must be non-empty")
        if len(self.draft_specs) != len(self.target_classes):
            raise ValueError("one draft spec per target class required")
        if any(s.count != self.per_class_count for s in self.draft_specs):
            raise ValueError("every draft spec must use per_class_count")

    def to_dict(self) -> dict:
        return {
            "target_classes": list(self.target_classes),
            "per_class_count": self.per_class_count,
            "draft_specs": [s.to_dict() for s in self.draft_specs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationRecommendation":
        return cls(
            target_classes=tuple(d["target_classes"]),
            per_class_count=d["per_class_count"],
            draft_specs=tuple(RenderSpec.from_dict(s) for s in d["draft_specs"]),
        )

    def save_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")
        return path


def compare_models(stats_sets: list[tuple[str, list[ClassAccuracyStats]]],
                   regression_epsilon: float = DEFAULT_REGRESSION_EPSILON) -> ComparisonReport:
    """Line up per-class means across models; the first model is the baseline.

    A class counts as regressed when the last model's mean sits more than
    ``regression_epsilon`` below the baseline's.
    """
    if not stats_sets:
        raise ValueError("need at least one stats set")
    model_ids = [model_id for model_id, _ in stats_sets]
    reference = tuple(sorted(s.class_label for s in stats_sets[0][1]))
    means_by_model: list[dict[str, float]] = []
    for model_id, stats in stats_sets:
        labels = tuple(sorted(s.class_label for s in stats))
        if labels != reference:
            raise ClassSetMismatch(
                f"model {model_id!r} covers classes {labels}, baseline covers {reference}"
            )
        means_by_model.append({s.class_label: s.mean for s in stats})

    per_class = {
        label: tuple(means[label] for means in means_by_model)
        for label in reference
    }
    deltas = {
        label: tuple(v - values[0] for v in values)
        for label, values in per_class.items()
    }
    worst = {}
    for j, model_id in enumerate(model_ids):
        worst[model_id] = min(reference, key=lambda c: (per_class[c][j], c))
    regressed = tuple(
        label for label in reference if deltas[label][-1] < -regression_epsilon
    )
    return ComparisonReport(
        models=tuple(model_ids),
        per_class=per_class,
        deltas=deltas,
        worst_class_per_model=worst,
        regressed_classes=regressed,
        regression_epsilon=regression_epsilon,
    )


def identify_bias(stats: list[ClassAccuracyStats], strategy: str = "worst_k",
                  k: int | None = None, threshold: float | None = None) -> list[str]:
    """Pick underperforming classes, worst first (ties broken lexicographically).

    ``worst_k`` returns the k lowest-mean classes; ``below_threshold``
    returns every class whose mean falls below the threshold.
    """
    if not stats:
        raise ValueError("stats must be non-empty")
    ordered = sorted(stats, key=lambda s: (s.mean, s.class_label))
    if strategy == "worst_k":
        if k is None or k < 1:
            raise ValueError("worst_k strategy requires k >= 1")
        if k > len(stats):
            raise KTooLarge(f"k={k} but only {len(stats)} classes")
        return [s.class_label for s in ordered[:k]]
    if strategy == "below_threshold":
        if threshold is None:
            raise ValueError("below_threshold strategy requires a threshold")
        return [s.class_label for s in ordered if s.mean < threshold]
    raise ValueError(f"unknown strategy {strategy!r}")


def recommend_augmentation(biased: list[str], per_class_count: int,
                           template: RenderSpec) -> AugmentationRecommendation:
    """One draft spec per biased class, cloned from the template with a derived seed."""
    if not biased:
        raise ValueError("biased class list must be non-empty")
    if per_class_count < 1:
        raise ValueError("per_class_count must be >= 1")
    specs = []
    for label in biased:
        specs.append(replace(
            template,
            spec_id=f"{template.spec_id}-{label}",
            class_label=label,
            count=per_class_count,
            master_seed=derive_seed(template.master_seed, "augment", label),
            texture_seed=derive_seed(template.texture_seed, "augment-texture", label),
        ))
    return AugmentationRecommendation(
        target_classes=tuple(biased),
        per_class_count=per_class_count,
        draft_specs=tuple(specs),
    )
