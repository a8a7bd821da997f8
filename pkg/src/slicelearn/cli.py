"""Command-line entry point wiring ingestion -> selection -> preprocessing
-> training -> evaluation.

Verbs: select, pretrain, train-eval, compare, report. Every run artifact
lands under a single output directory with fixed subpaths (selections/,
weights/, reports/). Commands validate their configuration fully before
writing anything, and exit nonzero iff an error was emitted. All commands
are deterministic given their configuration; the only non-reproducible
output byte is the created_at metadata key in report JSON files.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import evaluate as ev
from .config import RunConfig, load_run_config
from .errors import ConfigError, MalformedReport, SliceLearnError
from .nn import build_architecture
from .pipeline import SelectionStrategy, build_examples
from .slice_select import rank_slices, selection_report
from .training import (
    TransferMode,
    apply_transfer,
    load_weights,
    save_weights,
    train,
)
from .volume_io import Volume, load_volume, parse_manifest

# Published results on the OASIS AD/HC task, kept purely as labelled
# reference rows for side-by-side context in consolidated reports; this
# code never produces them. Accuracies are percentages; training sizes are
# image counts; None marks values the source tables do not state.
REFERENCE_ROWS = [
    {"model": "VGG16 (from scratch)", "mean_accuracy_pct": 74.12,
     "stddev_pct": 1.55, "training_size": None, "source": "reported"},
    {"model": "VGG16 (transfer learning)", "mean_accuracy_pct": 92.3,
     "stddev_pct": 2.42, "training_size": None, "source": "reported"},
    {"model": "Inception V4 (transfer learning)", "mean_accuracy_pct": 96.25,
     "stddev_pct": 1.2, "training_size": 5120, "source": "reported"},
    {"model": "Wavelet + NN", "mean_accuracy_pct": 90.06,
     "stddev_pct": None, "training_size": 3629, "source": "reported"},
    {"model": "DeepAD (Inception)", "mean_accuracy_pct": 98.84,
     "stddev_pct": None, "training_size": 46751, "source": "reported"},
    {"model": "3DConv", "mean_accuracy_pct": 95.39,
     "stddev_pct": None, "training_size": 117708, "source": "reported"},
    {"model": "Sparse autoencoder + conv", "mean_accuracy_pct": 94.74,
     "stddev_pct": None, "training_size": 103683, "source": "reported"},
    {"model": "Stacked autoencoders", "mean_accuracy_pct": 87.76,
     "stddev_pct": None, "training_size": 21726, "source": "reported"},
]


def verify_reference_identities() -> dict:
    """The arithmetic behind the reference training size, checked exactly:
    200 subjects x 32 slices = 6400 images, and 80% of 6400 = 5120."""
    total = 200 * 32
    training = int(total * 8 // 10)
    return {
        "subjects_times_slices": total,
        "subjects_times_slices_ok": total == 6400,
        "training_split": training,
        "training_split_ok": training == 5120,
    }


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _load_cohort(manifest_path: str):
    """Manifest -> (records, volumes); volume paths resolve relative to
    the manifest's directory."""
    manifest = Path(manifest_path)
    try:
        text = manifest.read_text(encoding="utf-8")
    except OSError as exc:
        raise SliceLearnError(f"cannot read manifest {manifest}: {exc}") from exc
    records = parse_manifest(text)
    volumes = []
    for record in records:
        path = Path(record.volume_path)
        if not path.is_absolute():
            path = manifest.parent / path
        try:
            volumes.append(load_volume(path))
        except (OSError, SliceLearnError) as exc:
            raise SliceLearnError(
                f"subject {record.subject_id}: volume {path}: {exc}") from exc
    return records, volumes


def _out_dir(cfg: RunConfig, sub: str) -> Path:
    d = Path(cfg.output_dir) / sub
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_json(path: Path, payload: dict, timestamp: bool = False):
    if timestamp:
        payload = dict(payload)
        payload["created_at"] = datetime.now(timezone.utc).isoformat()
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.output is not None:
        cfg.output_dir = args.output
    if args.seed is not None:
        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
        cfg.cv = dataclasses.replace(cfg.cv, seed=args.seed)
        if cfg.pretrain is not None:
            cfg.pretrain = dataclasses.replace(
                cfg.pretrain,
                train=dataclasses.replace(cfg.pretrain.train, seed=args.seed))
    return cfg


def _require_manifest(cfg: RunConfig) -> str:
    if not cfg.manifest_path:
        raise ConfigError("this command requires manifest_path in the config")
    return cfg.manifest_path


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_select(cfg: RunConfig, args) -> int:
    records, volumes = _load_cohort(_require_manifest(cfg))
    out = _out_dir(cfg, "selections")

    def rank_one(pair):
        record, volume = pair
        return record, rank_slices(volume, cfg.selection)

    pairs = list(zip(records, volumes))
    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            ranked = list(pool.map(rank_one, pairs))
    else:
        ranked = [rank_one(p) for p in pairs]

    for record, scores in ranked:
        doc = selection_report(record.subject_id, cfg.selection, scores)
        _write_json(out / f"{record.subject_id}.json", doc)
        if len(scores) < cfg.selection.k:
            print(f"warning: subject {record.subject_id} has only "
                  f"{len(scores)} slices (k={cfg.selection.k}); kept all",
                  file=sys.stderr)
        print(f"select {record.subject_id}: kept {len(scores)} slices, "
              f"top={scores[0].entropy_bits:.4f} bits, "
              f"cutoff={scores[-1].entropy_bits:.4f} bits")
    return 0


def cmd_pretrain(cfg: RunConfig, args) -> int:
    if cfg.pretrain is None:
        raise ConfigError("pretrain command requires a pretrain section")
    pre = cfg.pretrain
    volumes, records = ev.generate_synthetic_cohort(
        pre.n_subjects, pre.dims, pre.class_gap, pre.cohort_seed,
        noise_std=pre.noise_std)

    dataset = build_examples(records, volumes, cfg.selection, cfg.input_size,
                             cfg.normalization)
    model = build_architecture(cfg.architecture, cfg.input_size, n_classes=2)
    model, mask = apply_transfer(model, None, TransferMode.SCRATCH,
                                 seed=pre.train.seed)
    model, history = train(model, [(e.x, e.label) for e in dataset],
                           pre.train, mask)

    out = _out_dir(cfg, "weights")
    path = out / f"{cfg.architecture}_pretrained.nswt"
    path.write_bytes(save_weights(model,
                                  normalization=cfg.normalization.mode.value))
    print(f"pretrain: {len(dataset)} auxiliary examples, "
          f"final loss {history[-1].loss:.4f}, "
          f"final acc {history[-1].accuracy:.3f}")
    print(f"pretrain: wrote {path}")
    return 0


def _regime_from_config(cfg: RunConfig) -> ev.Regime:
    container = None
    if cfg.regime is TransferMode.HEAD_ONLY:
        try:
            container = load_weights(Path(cfg.weights_path).read_bytes())
        except OSError as exc:
            raise SliceLearnError(
                f"cannot read weights {cfg.weights_path}: {exc}") from exc
    return ev.Regime(mode=cfg.regime, architecture=cfg.architecture,
                     input_size=cfg.input_size, container=container)


def cmd_train_eval(cfg: RunConfig, args) -> int:
    records, volumes = _load_cohort(_require_manifest(cfg))
    regime = _regime_from_config(cfg)

    dataset = build_examples(
        records, volumes, cfg.selection, cfg.input_size, cfg.normalization,
        subject_level=(cfg.cv.level is ev.FoldLevel.SUBJECT))
    units = sorted({e.unit_id for e in dataset})
    plan = ev.kfold_split(units, cfg.cv.k, cfg.cv.seed, cfg.cv.level)
    report = ev.cross_validate(dataset, plan, regime, cfg.train)

    out = _out_dir(cfg, "reports")
    stem = f"report_{regime.name}_seed{cfg.train.seed}"
    _write_json(out / f"{stem}.json", report.to_dict(), timestamp=True)
    text = ev.render_accuracy_table([report])
    (out / f"{stem}.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    print(f"train-eval: wrote {out / (stem + '.json')}")
    return 0


def cmd_compare(cfg: RunConfig, args) -> int:
    if cfg.compare is None:
        raise ConfigError("compare command requires a compare section")
    records, volumes = _load_cohort(_require_manifest(cfg))
    regime = _regime_from_config(cfg)

    table = ev.compare_selection(
        records, volumes, cfg.compare.strategies, cfg.compare.seeds,
        cfg.selection, cfg.input_size, cfg.normalization, regime,
        cfg.train, cfg.cv.k, cfg.cv.level, cfg.cv.seed)

    out = _out_dir(cfg, "reports")
    _write_json(out / "comparison.json", table.to_dict(), timestamp=True)
    text = table.render_text()
    (out / "comparison.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    try:
        print(f"compare: mean accuracy gap (entropy - random) = "
              f"{100 * table.mean_gap():+.2f} pp")
    except SliceLearnError:
        pass  # gap undefined unless both strategies ran
    return 0


def _format_consolidated(rows: list[dict]) -> str:
    lines = [f"{'model':<44}{'avg. acc. (%)':>14}{'st. dev.':>10}"
             f"{'training size':>16}  source"]
    for r in rows:
        std = f"{r['stddev_pct']:.2f}" if r["stddev_pct"] is not None else "-"
        size = f"{r['training_size']:,}" if r["training_size"] is not None else "-"
        mark = " [ref]" if r["source"] == "reported" else ""
        lines.append(f"{r['model']:<44}{r['mean_accuracy_pct']:>14.2f}"
                     f"{std:>10}{size:>16}  {r['source']}{mark}")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    if not args.reports:
        raise MalformedReport("no report files given")
    rows = []
    for path in args.reports:
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
            report = ev.EvalReport.from_dict(payload)
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise MalformedReport(f"{path}: {exc}") from exc
        rows.append({
            "model": f"{report.model} ({report.regime}, {report.strategy})",
            "mean_accuracy_pct": 100 * report.mean_accuracy,
            "stddev_pct": 100 * report.stddev,
            "training_size": report.training_size,
            "source": "this run",
        })
    rows.extend(REFERENCE_ROWS)

    identities = verify_reference_identities()
    text = _format_consolidated(rows)
    print(text, end="")
    print(f"identity: 200 subjects x 32 slices = "
          f"{identities['subjects_times_slices']} images "
          f"[{'OK' if identities['subjects_times_slices_ok'] else 'FAIL'}]")
    print(f"identity: 80% of 6400 = {identities['training_split']} "
          f"training images "
          f"[{'OK' if identities['training_split_ok'] else 'FAIL'}]")

    if args.output is not None:
        out = Path(args.output) / "reports"
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "consolidated.json",
                    {"rows": rows, "identities": identities}, timestamp=True)
        (out / "consolidated.txt").write_text(text, encoding="utf-8")
        print(f"report: wrote {out / 'consolidated.json'}")
    if not (identities["subjects_times_slices_ok"]
            and identities["training_split_ok"]):
        return 1
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _global_flags(defaults: bool) -> argparse.ArgumentParser:
    """Parent parser with the global flags.

    The top-level parser carries the real defaults; the per-subcommand
    copies use SUPPRESS so a flag given before the subcommand is not
    clobbered when the subparser merges its namespace.
    """
    s = argparse.SUPPRESS
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", default=None if defaults else s,
                        help="path to a JSON run configuration")
    parent.add_argument("--output", default=None if defaults else s,
                        help="override the config's output_dir")
    parent.add_argument("--seed", type=int, default=None if defaults else s,
                        help="override training/CV seeds in the config")
    parent.add_argument("--deterministic", action="store_true",
                        default=False if defaults else s,
                        help="force fixed-order reductions (this "
                             "implementation always reduces in fixed order; "
                             "the flag is accepted for interface stability)")
    parent.add_argument("--threads", type=int, default=1 if defaults else s,
                        help="worker threads for per-subject selection")
    return parent


def build_parser() -> argparse.ArgumentParser:
    # global flags are accepted both before and after the subcommand
    parser = argparse.ArgumentParser(
        prog="slicelearn", parents=[_global_flags(defaults=True)],
        description="Entropy-based slice selection and transfer-learning "
                    "classification for 3D brain volumes.")
    sub = parser.add_subparsers(dest="command", required=True)

    shared = _global_flags(defaults=False)
    for name in ("select", "pretrain", "train-eval", "compare"):
        sub.add_parser(name, parents=[shared])
    rep = sub.add_parser("report", parents=[shared])
    rep.add_argument("reports", nargs="*",
                     help="EvalReport JSON files to consolidate")
    return parser


_CONFIG_COMMANDS = {
    "select": cmd_select,
    "pretrain": cmd_pretrain,
    "train-eval": cmd_train_eval,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        if args.command == "report":
            return cmd_report(args)
        if not args.config:
            raise ConfigError(f"{args.command} requires --config")
        cfg = _apply_overrides(load_run_config(args.config), args)
        return _CONFIG_COMMANDS[args.command](cfg, args)
    except SliceLearnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
