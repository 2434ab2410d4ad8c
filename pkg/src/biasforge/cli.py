"""Command-line entry point.

Subcommands mirror the pipeline: ingest, split, render, import-renders,
train, eval, compare, recommend, run (a whole plan), report. Config files
supply defaults; command-line flags win. Exit codes: 0 success, 1 user or
config error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .errors import ConfigError, DataError

log = logging.getLogger("biasforge.cli")

EXIT_OK = 0
EXIT_USER = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits with code 2 on bad flags; our contract says 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _parse_ratio(text: str) -> tuple[int, int]:
    try:
        a, b = text.split(":")
        return (int(a), int(b))
    except ValueError as exc:
        raise ConfigError(f"ratio must look like 4:1, got {text!r}") from exc


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return (int(w), int(h))
    except ValueError as exc:
        raise ConfigError(f"size must look like 64x64, got {text!r}") from exc


def _load_yaml_or_json(path: str) -> dict:
    with open(path) as fh:
        if path.endswith(".json"):
            return json.load(fh)
        return yaml.safe_load(fh) or {}


# --- subcommand implementations -----------------------------------------------

def _cmd_ingest(args) -> int:
    from .manifest import ingest

    result = ingest(args.root, args.provenance)
    out = result.manifest.save_json(args.out)
    if args.csv:
        result.manifest.save_csv(args.csv)
    rejects_path = args.rejects or str(Path(args.out).with_suffix("")) + "_rejects.json"
    if result.rejects:
        result.save_rejects_json(rejects_path)
    print(json.dumps({
        "manifest": str(out),
        "records": len(result.manifest),
        "classes": list(result.manifest.class_set),
        "rejects": len(result.rejects),
        "rejects_report": str(rejects_path) if result.rejects else None,
    }, indent=2))
    return EXIT_OK


def _cmd_split(args) -> int:
    from .manifest import DatasetManifest, stratified_split

    manifest = DatasetManifest.load_json(args.manifest)
    result = stratified_split(manifest, _parse_ratio(args.ratio), args.seed)
    result.train.save_json(args.out_train)
    result.val.save_json(args.out_val)
    print(json.dumps({
        "train": {"path": args.out_train, "records": len(result.train)},
        "val": {"path": args.out_val, "records": len(result.val)},
        "per_class_val": result.val.class_counts(),
    }, indent=2))
    return EXIT_OK


def _spec_from_args(args) -> "RenderSpec":
    from .render import RenderSpec

    base = _load_yaml_or_json(args.spec) if args.spec else {}
    overrides = {
        "spec_id": args.spec_id,
        "class_label": args.class_label,
        "count": args.count,
        "image_width": args.width,
        "image_height": args.height,
        "field_of_view": args.fov,
        "texture_seed": args.texture_seed,
        "master_seed": args.master_seed,
    }
    if args.pose_range:
        overrides["pose_range"] = tuple(args.pose_range)
    if args.lighting_range:
        overrides["lighting_range"] = tuple(args.lighting_range)
    base.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RenderSpec.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid render spec: {exc}") from exc


def _add_spec_flags(sub) -> None:
    sub.add_argument("--spec", help="render spec file (YAML or JSON); flags override")
    sub.add_argument("--spec-id")
    sub.add_argument("--class-label")
    sub.add_argument("--count", type=int)
    sub.add_argument("--width", type=int)
    sub.add_argument("--height", type=int)
    sub.add_argument("--fov", type=float)
    sub.add_argument("--texture-seed", type=int)
    sub.add_argument("--master-seed", type=int)
    sub.add_argument("--pose-range", nargs=2, type=float, metavar=("LO", "HI"))
    sub.add_argument("--lighting-range", nargs=2, type=float, metavar=("LO", "HI"))


def _cmd_render(args) -> int:
    from .render import render_batch

    spec = _spec_from_args(args)
    batch = render_batch(spec, args.out)
    manifest_out = args.manifest_out or str(Path(args.out) / spec.spec_id / "manifest.json")
    batch.manifest.save_json(manifest_out)
    print(json.dumps({
        "spec_id": spec.spec_id,
        "images": len(batch.manifest),
        "out": str(Path(args.out) / spec.spec_id),
        "manifest": manifest_out,
    }, indent=2))
    return EXIT_OK


def _cmd_import_renders(args) -> int:
    from .render import import_external_batch

    spec = _spec_from_args(args)
    batch = import_external_batch(spec, args.dir)
    manifest_out = args.manifest_out or str(Path(args.dir) / "manifest.json")
    batch.manifest.save_json(manifest_out)
    print(json.dumps({
        "spec_id": spec.spec_id,
        "images": len(batch.manifest),
        "manifest": manifest_out,
    }, indent=2))
    return EXIT_OK


def _train_config_from_args(args) -> "TrainConfig":
    from .training import TrainConfig

    base = _load_yaml_or_json(args.config) if args.config else {}
    overrides = {
        "epochs": args.epochs,
        "learning_rate": args.lr,
        "optimizer": args.optimizer,
        "leaky_slope": args.leaky_slope,
        "backbone": args.backbone,
        "batch_size": args.batch_size,
        "seed": args.seed,
        "head_width": args.head_width,
        "pretrained_weights": args.pretrained_weights,
    }
    if args.input_size:
        overrides["input_size"] = _parse_size(args.input_size)
    if args.nondeterministic:
        overrides["deterministic"] = False
    base.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return TrainConfig.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid train config: {exc}") from exc


def _add_train_flags(sub) -> None:
    sub.add_argument("--config", help="train config file (YAML or JSON); flags override")
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--lr", type=float)
    sub.add_argument("--optimizer", choices=["rmsprop", "adam", "sgd"])
    sub.add_argument("--leaky-slope", type=float)
    sub.add_argument("--backbone", choices=["desk_small_conv", "paper_vgg16_transfer"])
    sub.add_argument("--batch-size", type=int)
    sub.add_argument("--seed", type=int)
    sub.add_argument("--input-size", help="WxH, e.g. 64x64")
    sub.add_argument("--head-width", type=int)
    sub.add_argument("--pretrained-weights")
    sub.add_argument("--nondeterministic", action="store_true")


def _cmd_train(args) -> int:
    from .manifest import DatasetManifest
    from .plots import emit_history_plots
    from .training import train

    cfg = _train_config_from_args(args)
    train_set = DatasetManifest.load_json(args.train)
    val_set = DatasetManifest.load_json(args.val)
    artifact, history = train(train_set, val_set, cfg, args.out_dir,
                              init_weights=args.init_weights)
    out_dir = Path(args.out_dir)
    history.save_csv(out_dir / "history.csv")
    emit_history_plots(history, out_dir)
    print(json.dumps({
        "model": str(out_dir / f"model_{artifact.model_id}.json"),
        "weights": artifact.weights_path,
        "final_val_accuracy": history.val_accuracy[-1],
    }, indent=2))
    return EXIT_OK


def _cmd_eval(args) -> int:
    from . import bootstrap as bootstrap_mod
    from .bootstrap import BootstrapConfig
    from .manifest import DatasetManifest
    from .training import ModelArtifact, predict

    artifact = ModelArtifact.load_json(args.model)
    eval_set = DatasetManifest.load_json(args.data)
    cfg = BootstrapConfig(
        replicates=args.replicates,
        per_class_n=args.per_class_n,
        confidence_level=args.confidence,
        seed=args.seed,
    )
    table = predict(artifact, eval_set)
    out_dir = Path(args.out_dir)
    table.save_json(out_dir / "predictions.json")
    stats = bootstrap_mod.bootstrap_per_class(table, eval_set, cfg)
    bootstrap_mod.save_stats_csv(stats, out_dir / "stats.csv")
    bootstrap_mod.save_stats_json(stats, out_dir / "stats.json")
    print(json.dumps({
        "model": artifact.model_id,
        "stats_csv": str(out_dir / "stats.csv"),
        "means": {s.class_label: s.mean for s in stats},
    }, indent=2))
    return EXIT_OK


def _cmd_compare(args) -> int:
    from . import bootstrap as bootstrap_mod
    from .plots import emit_comparison_chart
    from .report import compare_models

    model_ids = args.models or [Path(p).parent.name or Path(p).stem for p in args.stats]
    if len(model_ids) != len(args.stats):
        raise ConfigError("--models must name one id per stats file")
    stats_sets = [
        (model_id, bootstrap_mod.load_stats_json(path))
        for model_id, path in zip(model_ids, args.stats)
    ]
    report = compare_models(stats_sets, regression_epsilon=args.regression_epsilon)
    out_dir = Path(args.out_dir)
    report.save_json(out_dir / "report.json")
    report.save_csv(out_dir / "report.csv")
    chart = emit_comparison_chart(report, out_dir)
    print(json.dumps({
        "report": str(out_dir / "report.json"),
        "chart": str(chart),
        "worst_class_per_model": report.worst_class_per_model,
        "regressed_classes": list(report.regressed_classes),
    }, indent=2))
    return EXIT_OK


def _cmd_recommend(args) -> int:
    from . import bootstrap as bootstrap_mod
    from .render import RenderSpec
    from .report import identify_bias, recommend_augmentation

    stats = bootstrap_mod.load_stats_json(args.stats)
    biased = identify_bias(stats, strategy=args.strategy, k=args.k,
                           threshold=args.threshold)
    if not biased:
        print(json.dumps({"target_classes": [], "note": "no class fell below the policy"}))
        return EXIT_OK
    if args.template:
        template = RenderSpec.from_dict(_load_yaml_or_json(args.template))
    else:
        template = RenderSpec(spec_id="augment", class_label=biased[0], count=args.count)
    rec = recommend_augmentation(biased, args.count, template)
    rec.save_json(args.out)
    print(json.dumps({
        "target_classes": list(rec.target_classes),
        "per_class_count": rec.per_class_count,
        "recommendation": args.out,
    }, indent=2))
    return EXIT_OK


def _cmd_run(args) -> int:
    from .experiment import ExperimentPlan, run_experiment

    overrides = {}
    if args.output_dir:
        overrides["output_dir"] = args.output_dir
    if args.master_seed is not None:
        overrides["master_seed"] = args.master_seed
    if args.name:
        overrides["name"] = args.name
    plan = ExperimentPlan.load_yaml(args.plan, overrides)
    report = run_experiment(plan)
    print(json.dumps({
        "report": str(Path(plan.output_dir) / "report.json"),
        "models": list(report.models),
        "worst_class_per_model": report.worst_class_per_model,
        "regressed_classes": list(report.regressed_classes),
    }, indent=2))
    return EXIT_OK


def _cmd_report(args) -> int:
    from .experiment import rebuild_report

    report = rebuild_report(args.run_dir)
    print(json.dumps({
        "report": str(Path(args.run_dir) / "report.json"),
        "models": list(report.models),
    }, indent=2))
    return EXIT_OK


# --- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="biasforge",
                     description="Per-class bias detection and procedural-data adjustment pipeline")
    parser.add_argument("--quiet", action="store_true", help="only warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="scan an image folder tree into a manifest")
    p.add_argument("root")
    p.add_argument("--provenance", choices=["real", "procedural"], default="real")
    p.add_argument("--out", required=True)
    p.add_argument("--csv")
    p.add_argument("--rejects")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("split", help="stratified train/val split of a manifest")
    p.add_argument("manifest")
    p.add_argument("--ratio", default="4:1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-train", required=True)
    p.add_argument("--out-val", required=True)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("render", help="generate a procedural image batch")
    _add_spec_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest-out")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("import-renders", help="adopt an external render directory")
    _add_spec_flags(p)
    p.add_argument("--dir", required=True)
    p.add_argument("--manifest-out")
    p.set_defaults(func=_cmd_import_renders)

    p = sub.add_parser("train", help="train a classifier from manifests")
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--init-weights")
    _add_train_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="predict and bootstrap per-class accuracy")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--replicates", type=int, default=500)
    p.add_argument("--per-class-n", type=int, default=200)
    p.add_argument("--confidence", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("compare", help="compare stats files across models")
    p.add_argument("--stats", nargs="+", required=True)
    p.add_argument("--models", nargs="+")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--regression-epsilon", type=float, default=0.01)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("recommend", help="pick weak classes and draft render specs")
    p.add_argument("--stats", required=True)
    p.add_argument("--strategy", choices=["worst_k", "below_threshold"], default="worst_k")
    p.add_argument("--k", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--template")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_recommend)

    p = sub.add_parser("run", help="execute a full experiment plan")
    p.add_argument("--plan", required=True)
    p.add_argument("--output-dir")
    p.add_argument("--master-seed", type=int)
    p.add_argument("--name")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("report", help="rebuild the report from a finished run")
    p.add_argument("--run-dir", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            stream=sys.stderr,
            level=logging.WARNING if args.quiet else logging.INFO,
            format="%(message)s",
        )
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except (ValueError, FileNotFoundError, IsADirectoryError, yaml.YAMLError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports anything
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
