"""Glue between ingestion, selection and training: turn labelled volumes
into model-ready example lists.

Slice selection is either entropy-ranked (deterministic) or uniform random
without replacement (seeded per subject); the latter exists as the baseline
the entropy strategy is compared against.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .image_ops import NormalizationSpec, to_model_input
from .slice_select import SelectionConfig, extract_slices, rank_slices
from .volume_io import SubjectRecord, Volume


class SelectionStrategy(str, Enum):
    ENTROPY = "entropy"
    RANDOM = "random"


@dataclass(frozen=True)
class Example:
    """One training/evaluation item: a preprocessed slice with its label
    and the id of the unit it belongs to for fold assignment."""

    unit_id: str
    subject_id: str
    x: np.ndarray
    label: int


def entropy_indices(volume: Volume, cfg: SelectionConfig) -> list[int]:
    """Slice indices of the top-k entropy ranking, in ranked order."""
    return [s.slice_index for s in rank_slices(volume, cfg)]


def random_indices(volume: Volume, cfg: SelectionConfig, seed) -> list[int]:
    """k slice indices drawn uniformly without replacement along cfg.axis."""
    n_slices = len(extract_slices(volume, cfg.axis))
    k = min(cfg.k, n_slices)
    rng = np.random.default_rng(seed)
    return [int(i) for i in rng.choice(n_slices, size=k, replace=False)]


def select_indices(volume: Volume, cfg: SelectionConfig,
                   strategy: SelectionStrategy, seed=None) -> list[int]:
    if strategy is SelectionStrategy.ENTROPY:
        return entropy_indices(volume, cfg)
    if seed is None:
        raise ValueError("random selection requires a seed")
    return random_indices(volume, cfg, seed)


def build_examples(records: list[SubjectRecord], volumes: list[Volume],
                   selection: SelectionConfig, input_size: int,
                   norm: NormalizationSpec, subject_level: bool = True,
                   strategy: SelectionStrategy = SelectionStrategy.ENTROPY,
                   strategy_seed: int | None = None,
                   dtype=np.float32) -> list[Example]:
    """Select, resize and normalize slices for every subject.

    records and volumes are parallel lists. Random selection derives an
    independent per-subject stream from (strategy_seed, subject position)
    so subjects get different draws but the whole dataset stays
    deterministic. Unit ids are subject ids at subject granularity, or
    "<subject>#<slice>" at slice granularity.
    """
    if len(records) != len(volumes):
        raise ValueError("records and volumes must be parallel lists")
    examples: list[Example] = []
    for pos, (record, volume) in enumerate(zip(records, volumes)):
        seed = None
        if strategy is SelectionStrategy.RANDOM:
            seed = np.random.SeedSequence([int(strategy_seed), pos])
        indices = select_indices(volume, selection, strategy, seed)
        slices = extract_slices(volume, selection.axis)
        for idx in indices:
            x = to_model_input(slices[idx], input_size, norm, dtype=dtype)
            unit = record.subject_id if subject_level \
                else f"{record.subject_id}#{idx}"
            examples.append(Example(unit_id=unit, subject_id=record.subject_id,
                                    x=x, label=int(record.label)))
    return examples
