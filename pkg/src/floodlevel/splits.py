"""Cross-validation folds and holdout splits.

The strong set is split into six level-stratified parts; each fold then
uses four parts for training, one for validation and one for testing. The
weak set gets a plain 80:20 train/validation holdout.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .manifest import DatasetManifest

log = logging.getLogger(__name__)

DEFAULT_FOLDS = 6
DEFAULT_HOLDOUT_RATIO = 0.8


@dataclass
class FoldSpec:
    fold_id: int
    train_ids: list[str]
    val_ids: list[str]
    test_ids: list[str]


def stratified_parts(manifest: DatasetManifest, k: int, seed: int) -> list[list[str]]:
    """Partition record ids into k parts, level counts differing by at most 1.

    Ids are shuffled per level under the seed, then dealt round-robin with a
    rotating starting part so remainder samples spread evenly.
    """
    if len(manifest) == 0:
        raise ValueError("cannot split an empty manifest")
    rng = np.random.default_rng(seed)
    by_level: dict[int, list[str]] = defaultdict(list)
    for rec in manifest.records:
        by_level[rec.effective_level()].append(rec.id)

    parts: list[list[str]] = [[] for _ in range(k)]
    for level in sorted(by_level):
        ids = sorted(by_level[level])
        if len(ids) < k:
            log.warning(
                "level %d has only %d samples for %d parts; stratification degraded",
                level, len(ids), k,
            )
        rng.shuffle(ids)
        start = int(rng.integers(k))
        for offset, sample_id in enumerate(ids):
            parts[(start + offset) % k].append(sample_id)
    return parts


def stratified_folds(
    manifest: DatasetManifest, k: int = DEFAULT_FOLDS, seed: int = 0
) -> list[FoldSpec]:
    """Build k folds over the strong set: k-2 parts train, 1 val, 1 test each."""
    if k < 3:
        raise ValueError(f"need at least 3 parts for train/val/test folds, got {k}")
    parts = stratified_parts(manifest, k, seed)
    folds = []
    for i in range(k):
        test = parts[i]
        val = parts[(i + 1) % k]
        train = [sid for j, part in enumerate(parts) if j != i and j != (i + 1) % k for sid in part]
        folds.append(FoldSpec(fold_id=i + 1, train_ids=train, val_ids=val, test_ids=test))
    return folds


def holdout_split(
    manifest: DatasetManifest,
    ratio: float = DEFAULT_HOLDOUT_RATIO,
    seed: int = 0,
) -> tuple[DatasetManifest, DatasetManifest]:
    """Split a manifest into (train, val) at the given ratio, seeded."""
    n = len(manifest)
    if n < 5:
        raise ValueError(f"need at least 5 records to hold out a split, got {n}")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    ids = sorted(rec.id for rec in manifest.records)
    rng.shuffle(ids)
    n_train = round(n * ratio)
    train = manifest.subset(ids[:n_train], name=f"{manifest.name}-train")
    val = manifest.subset(ids[n_train:], name=f"{manifest.name}-val")
    return train, val
