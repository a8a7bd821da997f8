"""k-fold cross-validation, accuracy reporting, the entropy-vs-random
selection comparison, and the synthetic cohort generator that makes the
whole pipeline verifiable at desk scale.

Fold assignment defaults to subject level so no subject's slices appear on
both sides of a fold; slice-level assignment is available behind a flag to
emulate the leakier reading of an 80/20 split. Reported spread is the
sample (n-1) standard deviation over folds.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import (
    BadParams,
    DegenerateFold,
    Empty,
    LengthMismatch,
    TooFewUnits,
)
from .image_ops import NormalizationSpec
from .nn import Network, build_architecture
from .pipeline import Example, SelectionStrategy, build_examples
from .slice_select import SelectionConfig
from .training import (
    FreezeMask,
    TrainConfig,
    TransferMode,
    WeightContainer,
    apply_transfer,
    predict_batch,
    train,
)
from .volume_io import Label, SubjectRecord, Volume, write_manifest, write_raw_volume


class FoldLevel(str, Enum):
    SUBJECT = "subject"
    SLICE = "slice"


@dataclass
class FoldPlan:
    """A complete fold assignment: every unit maps to exactly one fold,
    and fold sizes differ by at most one."""

    k: int
    level: FoldLevel
    assignment: dict[str, int]

    def fold_units(self, fold: int) -> set[str]:
        return {u for u, f in self.assignment.items() if f == fold}

    def fold_sizes(self) -> list[int]:
        sizes = [0] * self.k
        for f in self.assignment.values():
            sizes[f] += 1
        return sizes


def kfold_split(units: list[str], k: int, seed: int,
                level: FoldLevel = FoldLevel.SUBJECT) -> FoldPlan:
    """Seeded shuffle followed by round-robin assignment into k folds."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(set(units)) != len(units):
        raise ValueError("unit ids must be unique")
    if len(units) < k:
        raise TooFewUnits(f"{len(units)} units cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    order = [units[i] for i in rng.permutation(len(units))]
    assignment = {unit: i % k for i, unit in enumerate(order)}
    return FoldPlan(k=k, level=FoldLevel(level), assignment=assignment)


def accuracy(predictions, truth) -> float:
    """Fraction of exact matches between two equal-length label lists."""
    predictions = list(predictions)
    truth = list(truth)
    if len(predictions) != len(truth):
        raise LengthMismatch(
            f"{len(predictions)} predictions vs {len(truth)} truths")
    if not predictions:
        raise Empty("accuracy of zero items is undefined")
    hits = sum(1 for p, t in zip(predictions, truth) if p == t)
    return hits / len(predictions)


def sample_stddev(values: list[float]) -> float:
    """Sample standard deviation (n-1 denominator); 0.0 for a single value."""
    n = len(values)
    if n < 1:
        raise Empty("stddev of zero items is undefined")
    if n == 1:
        return 0.0
    mean = sum(values) / n
    return math.sqrt(sum((v - mean) ** 2 for v in values) / (n - 1))


# ---------------------------------------------------------------------------
# Regimes and reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Regime:
    """A way to produce a fresh (model, freeze mask) pair per fold."""

    mode: TransferMode
    architecture: str
    input_size: int
    n_classes: int = 2
    container: WeightContainer | None = None
    dtype: np.dtype = np.dtype(np.float32)

    @property
    def name(self) -> str:
        return self.mode.value

    def build(self, seed: int) -> tuple[Network, FreezeMask]:
        net = build_architecture(self.architecture, self.input_size,
                                 self.n_classes, self.dtype)
        return apply_transfer(net, self.container, self.mode, seed)


@dataclass
class EvalReport:
    """Cross-validation outcome plus the configuration that produced it."""

    model: str
    regime: str
    strategy: str
    cv_k: int
    cv_level: str
    seed: int
    fold_accuracies: list[float]
    mean_accuracy: float
    stddev: float
    training_size: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        fields = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in fields})

    def table_row(self) -> str:
        return (f"{self.model + ' (' + self.regime + ')':<42}"
                f"{100 * self.mean_accuracy:>8.2f} "
                f"({100 * self.stddev:.2f})")


def render_accuracy_table(reports: list[EvalReport]) -> str:
    lines = [f"{'model':<42}{'avg. acc. (st. dev.) (%)':>26}"]
    lines += [r.table_row() for r in reports]
    return "\n".join(lines) + "\n"


def cross_validate(dataset: list[Example], plan: FoldPlan, regime: Regime,
                   cfg: TrainConfig, strategy: str = "entropy") -> EvalReport:
    """Train and test once per fold; report per-fold accuracy, mean and
    sample stddev.

    Per fold f the model trains on every unit outside f and is scored on
    f. A training split containing a single class is refused. training_size
    reports the example count of fold 0's training split (folds are equal
    up to one unit, so this is representative).
    """
    units = {e.unit_id for e in dataset}
    missing = units - set(plan.assignment)
    if missing:
        raise ValueError(f"fold plan lacks units: {sorted(missing)[:5]} ...")

    fold_accuracies: list[float] = []
    training_size = 0
    for f in range(plan.k):
        train_set = [e for e in dataset if plan.assignment[e.unit_id] != f]
        test_set = [e for e in dataset if plan.assignment[e.unit_id] == f]
        if f == 0:
            training_size = len(train_set)
        if len({e.label for e in train_set}) < 2:
            raise DegenerateFold(
                f"fold {f}: training split holds a single class")
        fold_seed = cfg.seed * 1000 + f
        model, mask = regime.build(fold_seed)
        fold_cfg = dataclasses.replace(cfg, seed=fold_seed)
        model, _ = train(model, [(e.x, e.label) for e in train_set],
                         fold_cfg, mask)
        preds = predict_batch(model, np.stack([e.x for e in test_set]))
        fold_accuracies.append(accuracy(list(preds),
                                        [e.label for e in test_set]))

    return EvalReport(
        model=f"{regime.architecture}-{regime.input_size}-{regime.n_classes}",
        regime=regime.name,
        strategy=strategy,
        cv_k=plan.k,
        cv_level=plan.level.value,
        seed=cfg.seed,
        fold_accuracies=fold_accuracies,
        mean_accuracy=sum(fold_accuracies) / len(fold_accuracies),
        stddev=sample_stddev(fold_accuracies),
        training_size=training_size,
    )


# ---------------------------------------------------------------------------
# Synthetic cohort
# ---------------------------------------------------------------------------

def generate_synthetic_cohort(n_subjects: int, dims: tuple[int, int, int],
                              class_gap: float, seed: int,
                              noise_std: float = 1.0,
                              freq_low: float = 2.0,
                              freq_high: float = 8.0,
                              ) -> tuple[list[Volume], list[SubjectRecord]]:
    """Two-class texture cohort standing in for a real dataset.

    Half the subjects are healthy controls carrying a low-frequency
    oriented cosine texture, half are patients carrying a high-frequency
    one; both textures have amplitude class_gap on top of N(0, noise_std)
    voxel noise. A Gaussian envelope along z concentrates the texture in
    the central slices, so entropy ranking has real structure to find:
    border slices are noise-only and score low. Fully deterministic in
    seed; voxel values are float32-representable so materializing to disk
    is lossless.
    """
    if n_subjects < 2 or n_subjects % 2 != 0:
        raise BadParams("n_subjects must be even and >= 2")
    nx, ny, nz = dims
    if nx < 4 or ny < 4 or nz < 2:
        raise BadParams(f"dims {dims} too small for a textured cohort")
    if class_gap <= 0:
        raise BadParams("class_gap must be positive")
    if noise_std < 0:
        raise BadParams("noise_std must be nonnegative")
    if not 0 < freq_low < freq_high:
        raise BadParams("need 0 < freq_low < freq_high")

    rng = np.random.default_rng(seed)
    x = np.arange(nx, dtype=np.float64)[None, None, :]
    y = np.arange(ny, dtype=np.float64)[None, :, None]
    z = np.arange(nz, dtype=np.float64)
    sigma_z = max(nz / 8.0, 1.0)
    envelope = np.exp(-((z - (nz - 1) / 2.0) ** 2) / (2.0 * sigma_z ** 2))

    volumes: list[Volume] = []
    records: list[SubjectRecord] = []
    for i in range(n_subjects):
        is_ad = i >= n_subjects // 2
        freq = freq_high if is_ad else freq_low
        theta = rng.uniform(0.0, np.pi)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        wave = np.cos(
            2.0 * np.pi * freq * (x * np.cos(theta) + y * np.sin(theta)) / nx
            + phase
        )
        texture = class_gap * envelope[:, None, None] * wave
        noise = rng.normal(0.0, noise_std, size=(nz, ny, nx))
        voxels = (texture + noise).astype(np.float32).astype(np.float64)

        subject_id = f"syn{i:03d}"
        cdr = float(rng.choice([0.5, 1.0, 2.0])) if is_ad else 0.0
        volumes.append(Volume(dims=(nx, ny, nz), voxels=voxels.reshape(-1),
                              source_id=subject_id))
        records.append(SubjectRecord(subject_id=subject_id, cdr=cdr,
                                     label=Label.AD if is_ad else Label.HC,
                                     volume_path=f"{subject_id}.rvol"))
    return volumes, records


def write_cohort(volumes: list[Volume], records: list[SubjectRecord],
                 directory) -> str:
    """Materialize a cohort: one RAWVOL file per subject plus the manifest.
    Returns the manifest path."""
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for volume, record in zip(volumes, records):
        (directory / record.volume_path).write_bytes(write_raw_volume(volume))
    manifest_path = directory / "manifest.jsonl"
    manifest_path.write_text(write_manifest(records), encoding="utf-8")
    return str(manifest_path)


# ---------------------------------------------------------------------------
# Selection strategy comparison
# ---------------------------------------------------------------------------

@dataclass
class ComparisonRow:
    strategy: str
    seed: int
    mean_accuracy: float
    stddev: float


@dataclass
class ComparisonTable:
    rows: list[ComparisonRow] = field(default_factory=list)

    def strategy_mean(self, strategy: str) -> float:
        accs = [r.mean_accuracy for r in self.rows if r.strategy == strategy]
        if not accs:
            raise Empty(f"no rows for strategy {strategy!r}")
        return sum(accs) / len(accs)

    def mean_gap(self) -> float:
        """mean(entropy) - mean(random) over all rows."""
        return (self.strategy_mean(SelectionStrategy.ENTROPY.value)
                - self.strategy_mean(SelectionStrategy.RANDOM.value))

    def to_dict(self) -> dict:
        return {
            "rows": [dataclasses.asdict(r) for r in self.rows],
            "strategy_means": {
                s: self.strategy_mean(s)
                for s in sorted({r.strategy for r in self.rows})
            },
        }

    def render_text(self) -> str:
        lines = [f"{'strategy':<12}{'seed':>6}{'mean acc. (%)':>16}{'st. dev.':>10}"]
        for r in self.rows:
            lines.append(f"{r.strategy:<12}{r.seed:>6}"
                         f"{100 * r.mean_accuracy:>16.2f}{100 * r.stddev:>10.2f}")
        return "\n".join(lines) + "\n"


def compare_selection(records: list[SubjectRecord], volumes: list[Volume],
                      strategies: list[SelectionStrategy], seeds: list[int],
                      selection: SelectionConfig, input_size: int,
                      norm: NormalizationSpec, regime: Regime,
                      cfg: TrainConfig, cv_k: int,
                      cv_level: FoldLevel = FoldLevel.SUBJECT,
                      cv_seed: int = 0) -> ComparisonTable:
    """Run the full pipeline once per (strategy, seed) and tabulate means.

    The per-row seed drives only the selection strategy (random draws);
    fold assignment and training seeds come from cv_seed and cfg, so the
    deterministic entropy strategy produces identical rows across seeds.
    """
    if len(seeds) < 2:
        raise ValueError("comparison needs at least 2 seeds")
    table = ComparisonTable()
    for strategy in strategies:
        strategy = SelectionStrategy(strategy)
        for seed in seeds:
            dataset = build_examples(
                records, volumes, selection, input_size, norm,
                subject_level=(cv_level is FoldLevel.SUBJECT),
                strategy=strategy, strategy_seed=seed, dtype=regime.dtype)
            units = sorted({e.unit_id for e in dataset})
            plan = kfold_split(units, cv_k, cv_seed, cv_level)
            report = cross_validate(dataset, plan, regime, cfg,
                                    strategy=strategy.value)
            table.rows.append(ComparisonRow(
                strategy=strategy.value, seed=seed,
                mean_accuracy=report.mean_accuracy, stddev=report.stddev))
    return table
