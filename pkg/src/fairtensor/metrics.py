"""Completion-quality and group-gap metrics.

The gap metrics compare per-group means of an absolute statistic: the
absolute error for MADE, the absolute reconstruction for MADR.  With two
groups this is the plain |mean difference|; with more it is the largest
pairwise difference.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import MissingLabelError
from .sparse import SensitiveContext, SparseTensor


def mse(predictions, targets) -> float:
    """Mean squared error over observed entries."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ValueError(
            f"shape mismatch: {predictions.shape} vs {targets.shape}"
        )
    if predictions.size == 0:
        raise ValueError("cannot score an empty entry set")
    return float(((predictions - targets) ** 2).mean())


def _group_means(stats, entry_groups, num_groups):
    entry_groups = np.asarray(entry_groups)
    counts = np.bincount(entry_groups, minlength=num_groups)
    if len(counts) > num_groups:
        raise ValueError(
            f"group id {entry_groups.max()} out of range for "
            f"{num_groups} groups"
        )
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise MissingLabelError(
            f"group {missing[0]} has no entries; gap metrics need every "
            "group represented"
        )
    sums = np.bincount(entry_groups, weights=stats, minlength=num_groups)
    return sums / counts, counts


def _max_pairwise(means) -> float:
    return float(means.max() - means.min())


def made(predictions, targets, entry_groups, num_groups: int) -> float:
    """Largest pairwise gap in per-group mean absolute error."""
    stats = np.abs(
        np.asarray(predictions, dtype=np.float64)
        - np.asarray(targets, dtype=np.float64)
    )
    means, _ = _group_means(stats, entry_groups, num_groups)
    return _max_pairwise(means)


def madr(predictions, entry_groups, num_groups: int) -> float:
    """Largest pairwise gap in per-group mean absolute reconstruction."""
    stats = np.abs(np.asarray(predictions, dtype=np.float64))
    means, _ = _group_means(stats, entry_groups, num_groups)
    return _max_pairwise(means)


def group_counts(tensor: SparseTensor, ctx: SensitiveContext) -> np.ndarray:
    """Entries per group, zero-filled for groups absent from the tensor."""
    groups = ctx.groups_of_entries(tensor)
    return np.bincount(groups, minlength=ctx.num_groups)


@dataclass(frozen=True)
class GroupStats:
    group: int
    name: str
    count: int
    mean_abs_error: float
    mean_abs_reconstruction: float
    mse: float


@dataclass(frozen=True)
class EvalResult:
    mse: float
    made: float
    madr: float
    per_group: list[GroupStats]

    def to_json(self) -> str:
        payload = {
            "mse": self.mse,
            "made": self.made,
            "madr": self.madr,
            "per_group": [asdict(g) for g in self.per_group],
        }
        return json.dumps(payload, indent=2)


def evaluate(model, tensor: SparseTensor,
             ctx: SensitiveContext) -> EvalResult:
    """Score a model on held-out entries, overall and per group.

    Every group must have at least one entry; otherwise the gap metrics
    are undefined and this raises.
    """
    if tensor.nnz == 0:
        raise ValueError("cannot evaluate on an empty tensor")
    preds = model.predict_rows(model.gather_rows(tensor.indices))
    targets = tensor.values
    entry_groups = ctx.groups_of_entries(tensor)

    abs_err = np.abs(preds - targets)
    abs_rec = np.abs(preds)
    err_means, counts = _group_means(abs_err, entry_groups, ctx.num_groups)
    rec_means, _ = _group_means(abs_rec, entry_groups, ctx.num_groups)
    sq_sums = np.bincount(
        entry_groups, weights=(preds - targets) ** 2,
        minlength=ctx.num_groups,
    )

    per_group = [
        GroupStats(
            group=g,
            name=ctx.group_names[g],
            count=int(counts[g]),
            mean_abs_error=float(err_means[g]),
            mean_abs_reconstruction=float(rec_means[g]),
            mse=float(sq_sums[g] / counts[g]),
        )
        for g in range(ctx.num_groups)
    ]
    return EvalResult(
        mse=float(((preds - targets) ** 2).mean()),
        made=_max_pairwise(err_means),
        madr=_max_pairwise(rec_means),
        per_group=per_group,
    )
