"""Run configuration: a JSON document mirroring RunConfig field-for-field.

Parsing is strict: unknown keys anywhere in the document are errors, so a
typo never silently falls back to a default.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .evaluate import FoldLevel
from .image_ops import NormalizationSpec, NormMode
from .nn import ARCHITECTURES, MICRO_VGG
from .pipeline import SelectionStrategy
from .slice_select import Axis, RangeMode, SelectionConfig
from .training import OptimizerKind, TrainConfig, TransferMode


@dataclass
class CvConfig:
    k: int = 5
    level: FoldLevel = FoldLevel.SUBJECT
    seed: int = 0


@dataclass
class PretrainConfig:
    """Auxiliary-task parameters for producing a pretrained container:
    a disjoint synthetic cohort plus the training settings for it."""

    n_subjects: int = 40
    dims: tuple[int, int, int] = (32, 32, 24)
    class_gap: float = 4.0
    noise_std: float = 1.0
    cohort_seed: int = 9001
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=60))


@dataclass
class CompareConfig:
    strategies: list[SelectionStrategy] = field(
        default_factory=lambda: [SelectionStrategy.ENTROPY, SelectionStrategy.RANDOM])
    seeds: list[int] = field(default_factory=lambda: [0, 1])


@dataclass
class RunConfig:
    manifest_path: str | None = None
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    input_size: int = 32
    normalization: NormalizationSpec = field(default_factory=NormalizationSpec)
    architecture: str = MICRO_VGG
    regime: TransferMode = TransferMode.SCRATCH
    weights_path: str | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    cv: CvConfig = field(default_factory=CvConfig)
    output_dir: str = "runs"
    pretrain: PretrainConfig | None = None
    compare: CompareConfig | None = None

    def validate(self):
        if self.input_size < 8:
            raise ConfigError("input_size must be >= 8")
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(
                f"architecture must be one of {ARCHITECTURES}, got {self.architecture!r}")
        if self.regime is TransferMode.HEAD_ONLY and not self.weights_path:
            raise ConfigError("head_only regime requires weights_path")


def _check_keys(obj: dict, allowed: set[str], context: str):
    if not isinstance(obj, dict):
        raise ConfigError(f"{context}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{context}: unknown keys {sorted(unknown)}")


def _enum(cls, value, context: str):
    try:
        return cls(value)
    except ValueError as exc:
        raise ConfigError(
            f"{context}: {value!r} is not one of "
            f"{[m.value for m in cls]}") from exc


def _selection_from(obj: dict) -> SelectionConfig:
    _check_keys(obj, {"k", "bins", "axis", "range_mode"}, "selection")
    try:
        return SelectionConfig(
            k=int(obj.get("k", 32)),
            bins=int(obj.get("bins", 256)),
            axis=_enum(Axis, obj.get("axis", "z"), "selection.axis"),
            range_mode=_enum(RangeMode, obj.get("range_mode", "per_volume"),
                             "selection.range_mode"),
        )
    except ValueError as exc:
        raise ConfigError(f"selection: {exc}") from exc


def _normalization_from(obj: dict) -> NormalizationSpec:
    _check_keys(obj, {"mode", "mean", "std"}, "normalization")
    try:
        return NormalizationSpec(
            mode=_enum(NormMode, obj.get("mode", "unit_range"),
                       "normalization.mode"),
            mean=tuple(obj.get("mean", (0.0, 0.0, 0.0))),
            std=tuple(obj.get("std", (1.0, 1.0, 1.0))),
        )
    except ValueError as exc:
        raise ConfigError(f"normalization: {exc}") from exc


def _train_from(obj: dict, context: str = "train") -> TrainConfig:
    _check_keys(obj, {"epochs", "batch_size", "optimizer", "learning_rate",
                      "rmsprop_decay", "rmsprop_epsilon", "seed", "shuffle"},
                context)
    try:
        return TrainConfig(
            epochs=int(obj.get("epochs", 100)),
            batch_size=int(obj.get("batch_size", 40)),
            optimizer=_enum(OptimizerKind, obj.get("optimizer", "rmsprop"),
                            f"{context}.optimizer"),
            learning_rate=float(obj.get("learning_rate", 1e-3)),
            rmsprop_decay=float(obj.get("rmsprop_decay", 0.9)),
            rmsprop_epsilon=float(obj.get("rmsprop_epsilon", 1e-8)),
            seed=int(obj.get("seed", 0)),
            shuffle=bool(obj.get("shuffle", True)),
        )
    except ValueError as exc:
        raise ConfigError(f"{context}: {exc}") from exc


def _cv_from(obj: dict) -> CvConfig:
    _check_keys(obj, {"k", "level", "seed"}, "cv")
    return CvConfig(
        k=int(obj.get("k", 5)),
        level=_enum(FoldLevel, obj.get("level", "subject"), "cv.level"),
        seed=int(obj.get("seed", 0)),
    )


def _pretrain_from(obj: dict) -> PretrainConfig:
    _check_keys(obj, {"n_subjects", "dims", "class_gap", "noise_std",
                      "cohort_seed", "train"}, "pretrain")
    dims = obj.get("dims", (32, 32, 24))
    if len(dims) != 3:
        raise ConfigError("pretrain.dims must have 3 entries")
    return PretrainConfig(
        n_subjects=int(obj.get("n_subjects", 40)),
        dims=tuple(int(d) for d in dims),
        class_gap=float(obj.get("class_gap", 4.0)),
        noise_std=float(obj.get("noise_std", 1.0)),
        cohort_seed=int(obj.get("cohort_seed", 9001)),
        train=_train_from(obj.get("train", {}), "pretrain.train")
        if "train" in obj else TrainConfig(epochs=60),
    )


def _compare_from(obj: dict) -> CompareConfig:
    _check_keys(obj, {"strategies", "seeds"}, "compare")
    strategies = [
        _enum(SelectionStrategy, s, "compare.strategies")
        for s in obj.get("strategies", ["entropy", "random"])
    ]
    seeds = [int(s) for s in obj.get("seeds", [0, 1])]
    return CompareConfig(strategies=strategies, seeds=seeds)


_TOP_KEYS = {"manifest_path", "selection", "input_size", "normalization",
             "architecture", "regime", "weights_path", "train", "cv",
             "output_dir", "pretrain", "compare"}


def run_config_from_dict(obj: dict) -> RunConfig:
    _check_keys(obj, _TOP_KEYS, "config")
    cfg = RunConfig(
        manifest_path=obj.get("manifest_path"),
        selection=_selection_from(obj.get("selection", {})),
        input_size=int(obj.get("input_size", 32)),
        normalization=_normalization_from(obj.get("normalization", {})),
        architecture=obj.get("architecture", MICRO_VGG),
        regime=_enum(TransferMode, obj.get("regime", "scratch"), "regime"),
        weights_path=obj.get("weights_path"),
        train=_train_from(obj.get("train", {})),
        cv=_cv_from(obj.get("cv", {})),
        output_dir=obj.get("output_dir", "runs"),
        pretrain=_pretrain_from(obj["pretrain"]) if "pretrain" in obj else None,
        compare=_compare_from(obj["compare"]) if "compare" in obj else None,
    )
    cfg.validate()
    return cfg


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return run_config_from_dict(obj)
