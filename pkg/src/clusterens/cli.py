"""Command-line surface for the clustering pipeline.

Every subcommand reads an optional ``--config`` file plus repeatable
``--set key=value`` overrides; path flags are shorthand for the matching
config keys and win over both.  Exit codes: 0 success, 1 configuration
error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import pipeline as pl
from .config import PipelineConfig, read_config_file, resolve
from .errors import ClusterensError, ConfigError
from .labeling import load_labeling, save_labeling, save_labeling_text
from .metrics import evaluate
from .selftrain import load_classifier, predict as clf_predict


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as configuration errors."""

    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="clusterens", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, flags=()):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value config file")
        p.add_argument(
            "--set", action="append", default=[], metavar="KEY=VALUE",
            help="override a config key (repeatable)",
        )
        for flag, key, helptext in flags:
            p.add_argument(flag, dest=key.replace(".", "__"), help=helptext)
        return p

    add("gen-synth", "generate synthetic blob features + ground-truth labels", [
        ("--n", "synth.n", "sample count"),
        ("--d", "synth.d", "feature dimension"),
        ("--k", "synth.k", "cluster count"),
        ("--separation", "synth.separation", "inter-center separation"),
        ("--seed", "seed", "random seed"),
        ("--features", "features", "output feature file"),
        ("--labels", "labels", "output ground-truth labeling file"),
    ])
    add("train", "train the clustering heads from features (+ neighbor sets)", [
        ("--features", "features", "input feature file"),
        ("--labels", "labels", "optional ground-truth labels for metrics"),
        ("--neighbors", "neighbors.file", "precomputed neighbor-set file"),
        ("--out", "output_dir", "run directory for checkpoints and reports"),
    ])
    add("ensemble", "consensus over a training run's head labelings", [
        ("--run-dir", "output_dir", "run directory holding train outputs"),
        ("--k", "ensemble.k", "target cluster count"),
        ("--labels", "labels", "optional ground-truth labels for metrics"),
    ])
    p = add("selftrain", "train the linear probe on consensus pseudo-labels", [
        ("--features", "features", "input feature file"),
        ("--labels", "labels", "optional ground-truth labels for metrics"),
    ])
    p.add_argument("--pseudo-labels", help="pseudo-label file (consensus labeling)")
    p.add_argument("--out", help="output directory")
    p = add("predict", "label features with a trained classifier", [
        ("--features", "features", "input feature file"),
    ])
    p.add_argument("--classifier", help="classifier checkpoint")
    p.add_argument("--out", help="output labeling file")
    p = add("eval", "score a predicted labeling against ground truth", [])
    p.add_argument("--pred", help="predicted labeling file")
    p.add_argument("--gt", help="ground-truth labeling file")
    add("pipeline", "run train -> ensemble -> selftrain end to end", [])
    add("nn-analysis", "sweep neighbor thresholds and report count/accuracy", [
        ("--features", "features", "input feature file"),
        ("--labels", "labels", "ground-truth labels (required)"),
    ])
    p = add("ablate", "run an ablation sweep", [])
    p.add_argument(
        "--kind", required=True,
        choices=["threshold_sweep", "head_count_sweep", "gt_neighbors"],
    )
    return parser


def _config_from_args(args, flag_keys=()) -> PipelineConfig:
    entries = read_config_file(args.config) if args.config else {}
    overrides = list(args.set)
    for key in flag_keys:
        value = getattr(args, key.replace(".", "__"), None)
        if value is not None:
            overrides.append(f"{key}={value}")
    return PipelineConfig(resolve(entries, overrides))


def _require_file(path, what) -> Path:
    if path is None:
        raise ConfigError(f"missing required {what}")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _cmd_gen_synth(args) -> str:
    cfg = _config_from_args(
        args, ["synth.n", "synth.d", "synth.k", "synth.separation", "seed",
               "features", "labels"],
    )
    cfg.require("features")
    return pl.gen_synth_files(cfg)


def _cmd_train(args) -> str:
    cfg = _config_from_args(args, ["features", "labels", "neighbors.file", "output_dir"])
    features, labels = pl.validate_inputs(cfg)
    sets = pl.build_sets_for_config(cfg, features, labels)
    _, _, _, text = pl.train_stage(
        Path(cfg.output_dir), features, sets, cfg.train_config(), labels
    )
    return text


def _cmd_ensemble(args) -> str:
    cfg = _config_from_args(args, ["output_dir", "ensemble.k", "labels"])
    cfg.require("output_dir")
    run_dir = Path(cfg.output_dir)
    report_path = _require_file(run_dir / "train_report.txt", "train report")
    block = pl.read_machine_block(report_path.read_text(encoding="utf-8"))
    best_head = int(block["best_head"])
    lab_paths = sorted((run_dir / "labelings").glob("head_*.lbl"))
    if not lab_paths:
        raise ConfigError(f"no head labelings under {run_dir / 'labelings'}")
    inputs = [load_labeling(p) for p in lab_paths]
    labels = load_labeling(_require_file(cfg.labels_path, "labels file")) \
        if cfg.labels_path else None
    if cfg.resolved["ensemble.k"] is None and cfg.resolved["train.num_clusters"] is None:
        raise ConfigError("ensemble needs --k (or train.num_clusters) to be set")
    _, text = pl.ensemble_stage(
        run_dir, inputs, cfg.ensemble_k(), [inputs[best_head]], ["best_head"],
        labels, threads=cfg.threads,
    )
    return text


def _cmd_selftrain(args) -> str:
    cfg = _config_from_args(args, ["features", "labels"])
    fpath = _require_file(cfg.features_path, "feature file")
    pseudo_path = _require_file(args.pseudo_labels, "pseudo-label file")
    out_dir = Path(args.out) if args.out else (
        Path(cfg.output_dir) if cfg.output_dir else pseudo_path.parent
    )
    features = pl.load_features_any(fpath, cfg["features_format"])
    pseudo = load_labeling(pseudo_path)
    labels = load_labeling(_require_file(cfg.labels_path, "labels file")) \
        if cfg.labels_path else None
    _, _, text = pl.selftrain_stage(
        out_dir, features, pseudo, cfg.selftrain_config(), labels
    )
    return text


def _cmd_predict(args) -> str:
    cfg = _config_from_args(args, ["features"])
    fpath = _require_file(cfg.features_path, "feature file")
    clf_path = _require_file(args.classifier, "classifier checkpoint")
    if args.out is None:
        raise ConfigError("predict needs --out for the output labeling")
    features = pl.load_features_any(fpath, cfg["features_format"])
    clf = load_classifier(clf_path)
    labeling = clf_predict(clf, features)
    if str(args.out).endswith(".txt"):
        save_labeling_text(labeling, args.out)
    else:
        save_labeling(labeling, args.out)
    human = [
        "prediction report",
        "",
        f"  labeled {labeling.n} samples into {labeling.k} cluster(s)",
        f"  written to {args.out}",
    ]
    return pl.render_report(human, {"n": labeling.n, "k": labeling.k, "out": str(args.out)})


def _cmd_eval(args) -> str:
    pred = load_labeling(_require_file(args.pred, "predicted labeling"))
    gt = load_labeling(_require_file(args.gt, "ground-truth labeling"))
    report = evaluate(pred, gt)
    human = ["clustering metrics"] + pl.metrics_human_lines(report)
    return pl.render_report(human, report.machine_block())


def _cmd_pipeline(args) -> str:
    cfg = _config_from_args(args)
    manifest = pl.run_pipeline(cfg)
    human = ["pipeline run complete", ""]
    machine = {
        "config_hash": manifest.config_hash,
        "seed": manifest.seed,
        "selftrain_rounds": manifest.selftrain_rounds,
        "manifest": str(Path(cfg.output_dir) / "manifest.json"),
    }
    for stage in manifest.stages:
        line = f"  {stage.name}: {stage.wall_clock_s:.2f}s"
        if stage.metrics:
            line += f"  ACC {pl.pct(stage.metrics['acc'])}%"
            machine[f"{stage.name}.acc"] = stage.metrics["acc"]
            machine[f"{stage.name}.nmi"] = stage.metrics["nmi"]
            machine[f"{stage.name}.ari"] = stage.metrics["ari"]
        human.append(line)
    return pl.render_report(human, machine)


def _cmd_nn_analysis(args) -> str:
    cfg = _config_from_args(args, ["features", "labels"])
    fpath = _require_file(cfg.features_path, "feature file")
    lpath = _require_file(cfg.labels_path, "labels file")
    features = pl.load_features_any(fpath, cfg["features_format"])
    labels = load_labeling(lpath)
    return pl.nn_analysis(
        features, labels, cfg["ablate.thresholds"], cfg["neighbors.k_min"],
        threads=cfg.threads,
    )


def _cmd_ablate(args) -> str:
    cfg = _config_from_args(args)
    return pl.run_ablation(args.kind, cfg)


_COMMANDS = {
    "gen-synth": _cmd_gen_synth,
    "train": _cmd_train,
    "ensemble": _cmd_ensemble,
    "selftrain": _cmd_selftrain,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
    "pipeline": _cmd_pipeline,
    "nn-analysis": _cmd_nn_analysis,
    "ablate": _cmd_ablate,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        text = _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except ClusterensError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - boundary of the process
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(text, end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
