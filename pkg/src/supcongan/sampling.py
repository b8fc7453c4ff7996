"""Label-guided pair sampling: batches of N anchors, each joined by a
partner sharing at least one label, concatenated to 2N entries.

RNG sequence (relied on by reproducibility tests): with
``rng = numpy.random.default_rng(seed)``, the N anchor indices come from
one ``rng.choice(len(dataset), size=N, replace=False)`` call; then, in
batch order, each anchor with a non-empty candidate list consumes exactly
one ``rng.integers(len(candidates))`` draw, where ``candidates`` is the
sorted list of dataset indices sharing >= 1 label with the anchor, the
anchor itself excluded. Anchors with no candidate consume no draw and
fall back to a self-duplicated partner.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import DatasetValidationError, LabeledExample


class LabelModeError(ValueError):
    """Label mode is incompatible with the batch's label sets."""


@dataclass
class PairedBatch:
    """2N examples; entry i pairs with entry i + N. ``fallback_count``
    counts anchors that had to be self-duplicated (singleton classes)."""

    examples: list[LabeledExample]
    fallback_count: int

    @property
    def n_pairs(self) -> int:
        return len(self.examples) // 2

    def labels(self) -> list[tuple[int, ...]]:
        return [ex.labels for ex in self.examples]


def build_label_index(dataset: Sequence[LabeledExample]) -> dict[int, list[int]]:
    """Map each label id to the sorted list of example indices carrying it."""
    if not dataset:
        raise DatasetValidationError("dataset is empty")
    index: dict[int, list[int]] = {}
    for i, ex in enumerate(dataset):
        if not ex.labels:
            raise DatasetValidationError(f"example {i} has an empty label set")
        for label in ex.labels:
            index.setdefault(label, []).append(i)
    return {label: sorted(ids) for label, ids in index.items()}


def sample_paired_batch(
    dataset: Sequence[LabeledExample],
    label_index: dict[int, list[int]],
    batch_size: int,
    seed: int,
) -> PairedBatch:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if len(dataset) < batch_size:
        raise ValueError(
            f"dataset holds {len(dataset)} examples, need >= {batch_size}"
        )
    rng = np.random.default_rng(seed)
    anchor_ids = rng.choice(len(dataset), size=batch_size, replace=False)
    partners: list[LabeledExample] = []
    fallback = 0
    for a in anchor_ids:
        a = int(a)
        candidates = sorted(
            set().union(*(label_index[label] for label in dataset[a].labels)) - {a}
        )
        if candidates:
            partners.append(dataset[candidates[int(rng.integers(len(candidates)))]])
        else:
            partners.append(dataset[a])
            fallback += 1
    anchors = [dataset[int(a)] for a in anchor_ids]
    return PairedBatch(examples=anchors + partners, fallback_count=fallback)


def positive_mask(labels: Sequence[tuple[int, ...]], mode: str) -> np.ndarray:
    """2N x 2N boolean positives: same label set (``single``) or
    intersecting label sets (``multi``); the diagonal is always False.

    Works on integer bitmasks so the test-side set-arithmetic oracle stays
    independent.
    """
    if mode not in ("single", "multi"):
        raise ValueError(f"unknown label mode {mode!r}")
    n = len(labels)
    if mode == "single":
        oversized = [i for i, ls in enumerate(labels) if len(ls) > 1]
        if oversized:
            raise LabelModeError(
                "single mode requires singleton label sets; "
                f"entry {oversized[0]} has {len(labels[oversized[0]])} labels"
            )
    bits = [sum(1 << v for v in ls) for ls in labels]
    mask = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for p in range(i + 1, n):
            if mode == "single":
                hit = bits[i] == bits[p]
            else:
                hit = (bits[i] & bits[p]) != 0
            mask[i, p] = mask[p, i] = hit
    return mask


def batch_positive_mask(batch: PairedBatch, mode: str) -> np.ndarray:
    return positive_mask(batch.labels(), mode)
