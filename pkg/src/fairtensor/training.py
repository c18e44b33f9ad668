"""Minibatch Adam training with optional group-fairness penalties.

Objectives:

* ``plain``          squared error + L2 weight decay
* ``madr_penalty``   adds the batch gap in mean absolute reconstruction
* ``made_penalty``   adds the batch gap in mean absolute error
* ``staff``          adds the original/augmented row-coupling penalty

The trainer owns the model parameters for the duration of the call; the
model is left at the best-epoch parameters when it returns.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, TrainingDivergedError
from .sparse import SensitiveContext, SparseTensor

logger = logging.getLogger(__name__)

OBJECTIVES = ("plain", "madr_penalty", "made_penalty", "staff")


@dataclass
class TrainConfig:
    rank: int = 10
    batch_size: int = 1024
    learning_rate: float = 0.01
    weight_decay: float = 0.0
    fairness_coeff: float = 0.0
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    objective: str = "plain"

    def validate(self) -> None:
        if self.rank < 1:
            raise ConfigurationError(f"rank must be >= 1, got {self.rank}")
        if self.batch_size < 1:
            raise ConfigurationError(
                f"batch_size must be >= 1, got {self.batch_size}"
            )
        if self.learning_rate <= 0:
            raise ConfigurationError(
                f"learning_rate must be positive, got {self.learning_rate}"
            )
        if self.weight_decay < 0:
            raise ConfigurationError(
                f"weight_decay must be >= 0, got {self.weight_decay}"
            )
        if self.fairness_coeff < 0:
            raise ConfigurationError(
                f"fairness_coeff must be >= 0, got {self.fairness_coeff}"
            )
        if self.max_epochs < 1:
            raise ConfigurationError(
                f"max_epochs must be >= 1, got {self.max_epochs}"
            )
        if self.objective not in OBJECTIVES:
            raise ConfigurationError(
                f"objective must be one of {OBJECTIVES}, "
                f"got {self.objective!r}"
            )


@dataclass
class TrainReport:
    """Per-epoch history plus the best model found.

    ``model`` holds the parameters of ``best_epoch`` (minimum validation
    MSE); epochs are 0-based.
    """

    train_loss: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    val_made: list[float] = field(default_factory=list)
    best_epoch: int = -1
    model: object = None

    @property
    def n_epochs(self) -> int:
        return len(self.train_loss)

    def write_csv(self, path) -> None:
        """One row per epoch: epoch, train_loss, val_mse, val_made."""
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["epoch", "train_loss", "val_mse", "val_made"])
            for e, (tl, vm, vg) in enumerate(
                zip(self.train_loss, self.val_mse, self.val_made)
            ):
                writer.writerow([e, repr(tl), repr(vm), repr(vg)])


class Adam:
    """Adaptive-moment optimizer, standard constants (0.9, 0.999, 1e-8)."""

    def __init__(self, params, learning_rate, beta1=0.9, beta2=0.999,
                 eps=1e-8):
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m[...] = self.beta1 * m + (1.0 - self.beta1) * g
            v[...] = self.beta2 * v + (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _group_mean_gap(stats, entry_groups, num_groups):
    """Largest pairwise gap of per-group means, with d(gap)/d(stats).

    Groups absent from the batch are skipped; fewer than two present
    groups gives a zero gap with zero gradient.  For two groups this is
    exactly |mean_g1 - mean_g2|.
    """
    counts = np.bincount(entry_groups, minlength=num_groups)
    sums = np.bincount(
        entry_groups, weights=stats, minlength=num_groups
    )
    present = np.flatnonzero(counts)
    coeff = np.zeros_like(stats)
    if present.size < 2:
        return 0.0, coeff
    means = sums[present] / counts[present]
    best_gap = -1.0
    best = (present[0], present[1])
    for i in range(present.size):
        for j in range(i + 1, present.size):
            gap = abs(means[i] - means[j])
            if gap > best_gap:
                best_gap = gap
                best = (present[i], present[j])
    a, b = best
    sign = np.sign(sums[a] / counts[a] - sums[b] / counts[b])
    coeff[entry_groups == a] = sign / counts[a]
    coeff[entry_groups == b] = -sign / counts[b]
    return float(best_gap), coeff


def _madr_terms(preds, entry_groups, num_groups):
    gap, dstat = _group_mean_gap(np.abs(preds), entry_groups, num_groups)
    return gap, dstat * np.sign(preds)


def _made_terms(preds, targets, entry_groups, num_groups):
    err = preds - targets
    gap, dstat = _group_mean_gap(np.abs(err), entry_groups, num_groups)
    return gap, dstat * np.sign(err)


def squared_error_sum(model, indices, values) -> float:
    """Sum of squared residuals over the given entries."""
    preds = model.predict_rows(model.gather_rows(np.asarray(indices)))
    return float(((preds - np.asarray(values)) ** 2).sum())


def loss_plain(model, indices, values, weight_decay: float = 0.0,
               reg_fraction: float = 1.0) -> float:
    """Batch squared error plus the scaled L2 term over all parameters."""
    if len(values) == 0:
        raise ValueError("batch must be non-empty")
    loss = squared_error_sum(model, indices, values)
    if weight_decay > 0:
        loss += weight_decay * reg_fraction * sum(
            float((p ** 2).sum()) for p in model.parameters()
        )
    return loss


def penalty_madr(model, indices, ctx: SensitiveContext):
    """Batch gap in mean absolute reconstruction between groups.

    Returns (value, grads) with grads aligned to ``model.parameters()``.
    The |.| subgradient at zero is taken as zero.
    """
    idx = np.asarray(indices, dtype=np.int64)
    preds = model.predict_rows(model.gather_rows(idx))
    entry_groups = ctx.group_of[idx[:, ctx.sensitive_mode]]
    value, coeff = _madr_terms(preds, entry_groups, ctx.num_groups)
    grads = model.zero_grads()
    model.accumulate_entry_grads(idx, coeff, grads)
    return value, grads


def penalty_made(model, indices, values, ctx: SensitiveContext):
    """Batch gap in mean absolute error between groups, with gradients."""
    idx = np.asarray(indices, dtype=np.int64)
    preds = model.predict_rows(model.gather_rows(idx))
    entry_groups = ctx.group_of[idx[:, ctx.sensitive_mode]]
    value, coeff = _made_terms(
        preds, np.asarray(values), entry_groups, ctx.num_groups
    )
    grads = model.zero_grads()
    model.accumulate_entry_grads(idx, coeff, grads)
    return value, grads


def penalty_coupling(model, pairs, coeff: float, sensitive_mode: int = 0):
    """Coupling term coeff * sum over pairs of ||u_original - u_augmented||^2.

    Returns (value, gradient matrix on the sensitive factor); the gradient
    is +/- 2 * coeff * (u_original - u_augmented) on the paired rows.
    """
    factor = model.factors[sensitive_mode]
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= factor.shape[0]):
        raise ConfigurationError(
            "coupling pair index out of bounds for the sensitive factor "
            f"matrix of size {factor.shape[0]}"
        )
    diff = factor[pairs[:, 0]] - factor[pairs[:, 1]]
    value = coeff * float((diff ** 2).sum())
    grad = np.zeros_like(factor)
    np.add.at(grad, pairs[:, 0], 2.0 * coeff * diff)
    np.add.at(grad, pairs[:, 1], -2.0 * coeff * diff)
    return value, grad


def _validation_made(preds, values, entry_groups, num_groups):
    """Lenient per-epoch error gap; NaN when a group is absent."""
    counts = np.bincount(entry_groups, minlength=num_groups)
    if np.count_nonzero(counts) < 2:
        return float("nan")
    gap, _ = _group_mean_gap(
        np.abs(preds - values), entry_groups, num_groups
    )
    return gap


def train(
    model,
    train_tensor: SparseTensor,
    val_tensor: SparseTensor,
    ctx: SensitiveContext | None,
    cfg: TrainConfig,
    coupling=None,
) -> TrainReport:
    """Run minibatch Adam under the configured objective.

    ``coupling`` lists (original_row, augmented_row) pairs into the
    sensitive factor matrix and is required exactly when the objective is
    ``staff``.  Fixed seed and config give a bit-identical report.
    """
    cfg.validate()
    if train_tensor.nnz == 0:
        raise ValueError("training tensor has no entries")
    if val_tensor.nnz == 0:
        raise ValueError("validation tensor has no entries")
    if model.dims != train_tensor.dims:
        raise ConfigurationError(
            f"model dims {model.dims} do not match training tensor dims "
            f"{train_tensor.dims}"
        )
    if any(v > m for v, m in zip(val_tensor.dims, model.dims)):
        raise ConfigurationError(
            f"validation dims {val_tensor.dims} exceed model dims "
            f"{model.dims}"
        )
    if cfg.objective == "staff" and coupling is None:
        raise ConfigurationError(
            "the staff objective needs original/augmented coupling pairs"
        )
    if cfg.objective != "plain" and ctx is None:
        raise ConfigurationError(
            f"objective {cfg.objective!r} needs a sensitive context"
        )

    s_mode = ctx.sensitive_mode if ctx is not None else None
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    adam = Adam(params, cfg.learning_rate)
    n = train_tensor.nnz

    report = TrainReport()
    best_mse = np.inf
    best_params = None

    val_groups = None
    if ctx is not None:
        val_groups = ctx.groups_of_entries(val_tensor)

    for epoch in range(cfg.max_epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for batch_id, start in enumerate(range(0, n, cfg.batch_size)):
            batch = perm[start : start + cfg.batch_size]
            idx = train_tensor.indices[batch]
            target = train_tensor.values[batch]
            frac = batch.size / n

            preds = model.predict_rows(model.gather_rows(idx))
            residuals = preds - target
            batch_loss = float((residuals ** 2).sum())
            weights = 2.0 * residuals

            if cfg.fairness_coeff > 0 and cfg.objective == "madr_penalty":
                groups = ctx.group_of[idx[:, s_mode]]
                value, coeff = _madr_terms(preds, groups, ctx.num_groups)
                weights = weights + cfg.fairness_coeff * coeff
                batch_loss += cfg.fairness_coeff * value
            elif cfg.fairness_coeff > 0 and cfg.objective == "made_penalty":
                groups = ctx.group_of[idx[:, s_mode]]
                value, coeff = _made_terms(
                    preds, target, groups, ctx.num_groups
                )
                weights = weights + cfg.fairness_coeff * coeff
                batch_loss += cfg.fairness_coeff * value

            grads = model.zero_grads()
            model.accumulate_entry_grads(idx, weights, grads)

            if cfg.weight_decay > 0:
                decay = 2.0 * cfg.weight_decay * frac
                for p, g in zip(params, grads):
                    g += decay * p
                batch_loss += cfg.weight_decay * frac * sum(
                    float((p ** 2).sum()) for p in params
                )

            if (
                cfg.objective == "staff"
                and cfg.fairness_coeff > 0
                and len(coupling) > 0
            ):
                value, cgrad = penalty_coupling(
                    model, coupling, cfg.fairness_coeff, s_mode
                )
                grads[s_mode] += frac * cgrad
                batch_loss += frac * value

            if not np.isfinite(batch_loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {batch_id}"
                )
            adam.step(params, grads)
            epoch_loss += batch_loss

        val_preds = model.predict_rows(model.gather_rows(val_tensor.indices))
        val_mse = float(((val_preds - val_tensor.values) ** 2).mean())
        if not np.isfinite(val_mse):
            raise TrainingDivergedError(
                f"non-finite validation MSE after epoch {epoch}"
            )
        made = float("nan")
        if val_groups is not None:
            made = _validation_made(
                val_preds, val_tensor.values, val_groups, ctx.num_groups
            )
        report.train_loss.append(epoch_loss)
        report.val_mse.append(val_mse)
        report.val_made.append(made)

        if val_mse < best_mse:
            best_mse = val_mse
            report.best_epoch = epoch
            best_params = [p.copy() for p in params]
        elif epoch - report.best_epoch >= cfg.patience:
            logger.debug(
                "early stop at epoch %d (best %d)", epoch, report.best_epoch
            )
            break

    for p, best in zip(params, best_params):
        p[...] = best
    report.model = model
    return report
