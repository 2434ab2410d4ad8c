"""Multi-stage experiment orchestration.

A plan describes an ordered list of stages. Stage 0 trains on the real
data alone; each later stage adds its procedural render jobs on top of
every earlier stage's, retrains, and re-evaluates, so stage k's training
manifest contains the procedural records of stages 1..k exactly. All
randomness derives from the plan's master seed and the stage index, so a
single integer pins the whole experiment.

Completed stages checkpoint their outputs; a rerun loads them instead of
recomputing, which both resumes interrupted runs and lets a plan grow new
stages without retraining old ones. The checkpoint directory defaults to
``<output_dir>/checkpoints`` and can be overridden with the
``BIASFORGE_CACHE`` environment variable.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from . import bootstrap as bootstrap_mod
from .bootstrap import BootstrapConfig, ClassAccuracyStats
from .errors import ConfigError
from .manifest import (
    PROVENANCE_REAL,
    DatasetManifest,
    ingest,
    merge,
    stratified_split,
)
from .plots import emit_comparison_chart, emit_history_plots
from .render import RenderSpec, render_batch
from .report import ComparisonReport, compare_models
from .seeds import derive_seed
from .training import TrainConfig, TrainingHistory, predict, train

log = logging.getLogger("biasforge.experiment")

CACHE_ENV_VAR = "BIASFORGE_CACHE"


def log_event(event: str, **fields) -> None:
    """Line-oriented JSON event for later analysis."""
    log.info(json.dumps({"event": event, **fields}, sort_keys=True))


@dataclass(frozen=True)
class ExperimentStage:
    stage_id: str
    augmentation: tuple[RenderSpec, ...] = ()

    def to_dict(self) -> dict:
        return {
            "stage_id": self.stage_id,
            "augmentation": [s.to_dict() for s in self.augmentation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentStage":
        return cls(
            stage_id=d["stage_id"],
            augmentation=tuple(RenderSpec.from_dict(s) for s in (d.get("augmentation") or ())),
        )


@dataclass(frozen=True)
class ExperimentPlan:
    name: str
    real_data_root: str
    eval_data_root: str
    stages: tuple[ExperimentStage, ...]
    train_config: TrainConfig
    bootstrap_config: BootstrapConfig
    output_dir: str
    master_seed: int
    split_ratio: tuple[int, int] = (4, 1)
    warm_start: bool = False  # stage k>0 initializes from stage k-1's weights

    def __post_init__(self):
        if not self.stages:
            raise ConfigError("plan needs at least one stage")
        ids = [s.stage_id for s in self.stages]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"stage ids must be unique, got {ids}")
        if self.stages[0].augmentation:
            raise ConfigError("stage 0 is the real-data baseline and takes no augmentation")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "real_data_root": self.real_data_root,
            "eval_data_root": self.eval_data_root,
            "stages": [s.to_dict() for s in self.stages],
            "train": self.train_config.to_dict(),
            "bootstrap": {
                "replicates": self.bootstrap_config.replicates,
                "per_class_n": self.bootstrap_config.per_class_n,
                "confidence_level": self.bootstrap_config.confidence_level,
            },
            "output_dir": self.output_dir,
            "master_seed": self.master_seed,
            "split_ratio": list(self.split_ratio),
            "warm_start": self.warm_start,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        try:
            train_cfg = TrainConfig.from_dict(d.get("train", {}))
            boot = d.get("bootstrap", {})
            boot_cfg = BootstrapConfig(
                replicates=boot.get("replicates", 500),
                per_class_n=boot.get("per_class_n", 200),
                confidence_level=boot.get("confidence_level", 0.95),
            )
            return cls(
                name=d["name"],
                real_data_root=d["real_data_root"],
                eval_data_root=d["eval_data_root"],
                stages=tuple(ExperimentStage.from_dict(s) for s in d["stages"]),
                train_config=train_cfg,
                bootstrap_config=boot_cfg,
                output_dir=d["output_dir"],
                master_seed=int(d["master_seed"]),
                split_ratio=tuple(d.get("split_ratio", (4, 1))),
                warm_start=bool(d.get("warm_start", False)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid experiment plan: {exc}") from exc

    @classmethod
    def load_yaml(cls, path: str | Path, overrides: dict | None = None) -> "ExperimentPlan":
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if overrides:
            data.update(overrides)
        return cls.from_dict(data)

    def save_yaml(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)
        return path


# --- seed derivations (the documented chain from one master seed) -------------

def stage_train_seed(master_seed: int, stage_index: int) -> int:
    return derive_seed(master_seed, "train", stage_index)


def stage_split_seed(master_seed: int, stage_index: int) -> int:
    return derive_seed(master_seed, "split", stage_index)


def stage_bootstrap_seed(master_seed: int, stage_index: int) -> int:
    return derive_seed(master_seed, "bootstrap", stage_index)


def stage_render_spec(spec: RenderSpec, master_seed: int, stage_index: int,
                      position: int) -> RenderSpec:
    """Pin a stage's render spec seeds to the plan's master seed."""
    return replace(
        spec,
        master_seed=derive_seed(master_seed, "render", stage_index, position),
        texture_seed=derive_seed(master_seed, "render-texture", stage_index, position),
    )


# --- checkpointing ------------------------------------------------------------

def checkpoint_dir(plan: ExperimentPlan) -> Path:
    override = os.environ.get(CACHE_ENV_VAR)
    if override:
        return Path(override)
    return Path(plan.output_dir) / "checkpoints"


def _stage_fingerprint(plan: ExperimentPlan, stage_index: int) -> str:
    """Hash of everything that influences a stage's outputs (not the output dir)."""
    payload = {
        "master_seed": plan.master_seed,
        "real_data_root": str(Path(plan.real_data_root).resolve()),
        "eval_data_root": str(Path(plan.eval_data_root).resolve()),
        "train": plan.train_config.to_dict(),
        "bootstrap": {
            "replicates": plan.bootstrap_config.replicates,
            "per_class_n": plan.bootstrap_config.per_class_n,
            "confidence_level": plan.bootstrap_config.confidence_level,
        },
        "split_ratio": list(plan.split_ratio),
        "warm_start": plan.warm_start,
        "stages": [plan.stages[i].to_dict() for i in range(stage_index + 1)],
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


@dataclass
class StageResult:
    stage_id: str
    model_id: str
    stats: list[ClassAccuracyStats]
    augmentation_manifest: DatasetManifest | None
    history: TrainingHistory | None = None


def _stage_paths(plan: ExperimentPlan, stage: ExperimentStage) -> dict[str, Path]:
    stage_dir = Path(plan.output_dir) / stage.stage_id
    return {
        "dir": stage_dir,
        "renders": stage_dir / "renders",
        "aug_manifest": stage_dir / "augmentation_manifest.json",
        "train_manifest": stage_dir / "train_manifest.json",
        "val_manifest": stage_dir / "val_manifest.json",
        "history": stage_dir / "history.csv",
        "predictions": stage_dir / "predictions.json",
        "stats_csv": stage_dir / "stats.csv",
        "stats_json": stage_dir / "stats.json",
    }


def _load_checkpoint(plan: ExperimentPlan, stage_index: int) -> StageResult | None:
    stage = plan.stages[stage_index]
    marker = checkpoint_dir(plan) / f"{stage.stage_id}.json"
    if not marker.is_file():
        return None
    with open(marker) as fh:
        data = json.load(fh)
    if data.get("fingerprint") != _stage_fingerprint(plan, stage_index):
        log_event("checkpoint_stale", stage=stage.stage_id)
        return None
    paths = _stage_paths(plan, stage)
    if not paths["stats_json"].is_file():
        return None
    aug = None
    if paths["aug_manifest"].is_file():
        aug = DatasetManifest.load_json(paths["aug_manifest"])
    log_event("stage_resumed", stage=stage.stage_id)
    return StageResult(
        stage_id=stage.stage_id,
        model_id=data["model_id"],
        stats=bootstrap_mod.load_stats_json(paths["stats_json"]),
        augmentation_manifest=aug,
    )


def _write_checkpoint(plan: ExperimentPlan, stage_index: int, model_id: str) -> None:
    stage = plan.stages[stage_index]
    ckpt = checkpoint_dir(plan)
    ckpt.mkdir(parents=True, exist_ok=True)
    with open(ckpt / f"{stage.stage_id}.json", "w") as fh:
        json.dump({
            "stage_id": stage.stage_id,
            "model_id": model_id,
            "fingerprint": _stage_fingerprint(plan, stage_index),
        }, fh, indent=2)
        fh.write("\n")


# --- the protocol --------------------------------------------------------------

def _run_stage(plan: ExperimentPlan, stage_index: int, real: DatasetManifest,
               eval_set: DatasetManifest, prior_aug: list[DatasetManifest],
               prev_weights: str | None) -> StageResult:
    stage = plan.stages[stage_index]
    paths = _stage_paths(plan, stage)
    paths["dir"].mkdir(parents=True, exist_ok=True)
    log_event("stage_start", stage=stage.stage_id, index=stage_index)

    aug_manifest: DatasetManifest | None = None
    if stage.augmentation:
        batches = []
        for position, spec in enumerate(stage.augmentation):
            pinned = stage_render_spec(spec, plan.master_seed, stage_index, position)
            batch = render_batch(pinned, paths["renders"])
            log_event("rendered", stage=stage.stage_id, spec=pinned.spec_id,
                      count=len(batch.manifest))
            batches.append(batch)
        records = tuple(r for b in batches for r in b.manifest.records)
        class_set = tuple(sorted({r.class_label for r in records}))
        aug_manifest = DatasetManifest(
            records=records, class_set=class_set,
            manifest_id=f"aug-{stage.stage_id}",
        )
        aug_manifest.save_json(paths["aug_manifest"])

    train_pool = real
    for prior in prior_aug:
        train_pool = merge(train_pool, prior)
    if aug_manifest is not None:
        train_pool = merge(train_pool, aug_manifest)

    split = stratified_split(train_pool, plan.split_ratio,
                             stage_split_seed(plan.master_seed, stage_index))
    split.train.save_json(paths["train_manifest"])
    split.val.save_json(paths["val_manifest"])

    cfg = replace(plan.train_config, seed=stage_train_seed(plan.master_seed, stage_index))
    artifact, history = train(
        split.train, split.val, cfg, paths["dir"],
        init_weights=prev_weights if plan.warm_start else None,
        model_id=stage.stage_id,
    )
    history.save_csv(paths["history"])
    emit_history_plots(history, paths["dir"])
    log_event("trained", stage=stage.stage_id, model=artifact.model_id,
              final_val_acc=history.val_accuracy[-1])

    table = predict(artifact, eval_set)
    table.save_json(paths["predictions"])

    boot_cfg = replace(plan.bootstrap_config,
                       seed=stage_bootstrap_seed(plan.master_seed, stage_index))
    stats = bootstrap_mod.bootstrap_per_class(table, eval_set, boot_cfg)
    bootstrap_mod.save_stats_csv(stats, paths["stats_csv"])
    bootstrap_mod.save_stats_json(stats, paths["stats_json"])
    log_event("evaluated", stage=stage.stage_id,
              means={s.class_label: s.mean for s in stats})

    _write_checkpoint(plan, stage_index, artifact.model_id)
    return StageResult(
        stage_id=stage.stage_id,
        model_id=artifact.model_id,
        stats=stats,
        augmentation_manifest=aug_manifest,
        history=history,
    )


def run_experiment(plan: ExperimentPlan) -> ComparisonReport:
    """Execute every stage of the plan and compare the resulting models."""
    out_dir = Path(plan.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_event("experiment_start", name=plan.name, master_seed=plan.master_seed,
              stages=[s.stage_id for s in plan.stages])

    real_result = ingest(plan.real_data_root, PROVENANCE_REAL)
    if real_result.rejects:
        log_event("ingest_rejects", root=plan.real_data_root,
                  count=len(real_result.rejects))
        real_result.save_rejects_json(out_dir / "real_rejects.json")
    real = real_result.manifest
    real.save_json(out_dir / "real_manifest.json")

    eval_result = ingest(plan.eval_data_root, PROVENANCE_REAL)
    if eval_result.rejects:
        eval_result.save_rejects_json(out_dir / "eval_rejects.json")
    eval_set = eval_result.manifest
    eval_set.save_json(out_dir / "eval_manifest.json")

    results: list[StageResult] = []
    prior_aug: list[DatasetManifest] = []
    prev_weights: str | None = None
    for stage_index, stage in enumerate(plan.stages):
        cached = _load_checkpoint(plan, stage_index)
        if cached is not None:
            results.append(cached)
        else:
            results.append(_run_stage(plan, stage_index, real, eval_set,
                                      prior_aug, prev_weights))
        if results[-1].augmentation_manifest is not None:
            prior_aug.append(results[-1].augmentation_manifest)
        stage_dir = out_dir / stage.stage_id
        prev_weights = str(stage_dir / f"model_{results[-1].model_id}.pt")

    report = compare_models([(r.model_id, r.stats) for r in results])
    report.save_json(out_dir / "report.json")
    report.save_csv(out_dir / "report.csv")
    emit_comparison_chart(report, out_dir)

    with open(out_dir / "run.json", "w") as fh:
        json.dump({
            "name": plan.name,
            "master_seed": plan.master_seed,
            "stages": [s.stage_id for s in plan.stages],
            "models": [r.model_id for r in results],
        }, fh, indent=2)
        fh.write("\n")
    log_event("experiment_done", name=plan.name)
    return report


def rebuild_report(run_dir: str | Path) -> ComparisonReport:
    """Regenerate the comparison report and chart from a completed run directory."""
    run_dir = Path(run_dir)
    with open(run_dir / "run.json") as fh:
        run = json.load(fh)
    stats_sets = []
    for stage_id, model_id in zip(run["stages"], run["models"]):
        stats = bootstrap_mod.load_stats_json(run_dir / stage_id / "stats.json")
        stats_sets.append((model_id, stats))
    report = compare_models(stats_sets)
    report.save_json(run_dir / "report.json")
    report.save_csv(run_dir / "report.csv")
    emit_comparison_chart(report, run_dir)
    return report
