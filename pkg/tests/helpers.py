"""Shared test utilities: finite-difference oracles and random instances.

The finite-difference gradcheck perturbs every parameter coordinate of a
model and compares the central difference against the analytic gradient.
Random instances are filtered so no |.| kink or relu corner sits within
the perturbation radius, keeping the oracle honest.
"""

import numpy as np

from fairtensor.models import init_model
from fairtensor.sparse import SensitiveContext
from fairtensor.training import (
    penalty_coupling,
    penalty_made,
    penalty_madr,
)


def fd_gradients(value_fn, params, h=1e-5):
    """Central finite differences of value_fn over every coordinate."""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        while not it.finished:
            i = it.multi_index
            orig = p[i]
            p[i] = orig + h
            f_plus = value_fn()
            p[i] = orig - h
            f_minus = value_fn()
            p[i] = orig
            g[i] = (f_plus - f_minus) / (2.0 * h)
            it.iternext()
        grads.append(g)
    return grads


def max_rel_err(analytic, numeric, floor=1e-3):
    """Worst relative disagreement; near-zero pairs compare absolutely."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(floor, np.maximum(np.abs(a), np.abs(n)))
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def data_value(model, idx, targets):
    preds = model.predict_rows(model.gather_rows(idx))
    return float(((preds - targets) ** 2).sum())


def data_grads(model, idx, targets):
    preds = model.predict_rows(model.gather_rows(idx))
    grads = model.zero_grads()
    model.accumulate_entry_grads(idx, 2.0 * (preds - targets), grads)
    return grads


def coupling_grads(model, pairs, coeff, mode):
    _, grad = penalty_coupling(model, pairs, coeff, mode)
    grads = model.zero_grads()
    grads[mode] += grad
    return grads


def _margins_ok(model, idx, targets, ctx, margin=1e-3):
    """No |.| kink or relu corner within finite-difference reach."""
    rows = model.gather_rows(idx)
    preds = model.predict_rows(rows)
    if np.abs(preds).min() < margin:
        return False
    if np.abs(preds - targets).min() < margin:
        return False
    groups = ctx.group_of[idx[:, ctx.sensitive_mode]]
    for stats in (np.abs(preds), np.abs(preds - targets)):
        means = [stats[groups == g].mean() for g in (0, 1)]
        if abs(means[0] - means[1]) < margin:
            return False
    if model.kind == "costco" and model.theta.activation == "relu":
        _, (a1, _, a2, _, a3, _) = model._forward(rows)
        for a in (a1, a2, a3):
            if np.abs(a).min() < margin:
                return False
    return True


def random_instance(rng, kind, activation="tanh", batch=5):
    """A small random model plus a batch covering both groups.

    Resamples until every nondifferentiable point is at least 1e-3 away
    from the evaluation point, so h=1e-5 central differences are valid.
    """
    while True:
        n_modes = int(rng.integers(2, 5))
        dims = tuple(int(rng.integers(2, 7)) for _ in range(n_modes))
        rank = int(rng.integers(1, 5))
        seed = int(rng.integers(0, 2**31))
        model = init_model(
            kind, dims, rank, scale=0.8, seed=seed,
            channels=3, hidden_units=5, activation=activation,
        )
        idx = np.stack(
            [rng.integers(0, d, size=batch) for d in dims], axis=1
        ).astype(np.int64)
        idx[0, 0] = 0
        idx[1, 0] = 1
        targets = rng.standard_normal(batch)
        labels = ["even" if e % 2 == 0 else "odd" for e in range(dims[0])]
        ctx = SensitiveContext.from_labels(0, labels)
        if _margins_ok(model, idx, targets, ctx):
            return model, idx, targets, ctx


def random_pairs(rng, model, mode=0):
    n = model.dims[mode]
    size = min(3, n // 2)
    perm = rng.permutation(n)
    return np.stack([perm[:size], perm[size:2 * size]], axis=1)


def naive_mse(preds, targets):
    """Two-pass loop recomputation, no numpy reductions."""
    total = 0.0
    for p, t in zip(preds, targets):
        total += (float(p) - float(t)) ** 2
    return total / len(list(preds))


def _naive_group_means(stats, groups, num_groups):
    means = []
    for g in range(num_groups):
        picked = [float(s) for s, gg in zip(stats, groups) if gg == g]
        means.append(sum(picked) / len(picked))
    return means


def _naive_max_gap(means):
    best = 0.0
    for i in range(len(means)):
        for j in range(len(means)):
            gap = abs(means[i] - means[j])
            if gap > best:
                best = gap
    return best


def naive_made(preds, targets, groups, num_groups):
    stats = [abs(float(p) - float(t)) for p, t in zip(preds, targets)]
    return _naive_max_gap(_naive_group_means(stats, groups, num_groups))


def naive_madr(preds, groups, num_groups):
    stats = [abs(float(p)) for p in preds]
    return _naive_max_gap(_naive_group_means(stats, groups, num_groups))


def check_instance(model, idx, targets, ctx, pairs, h=1e-5):
    """Max relative FD error over the loss and all three penalties."""
    params = model.parameters()
    worst = 0.0

    analytic = data_grads(model, idx, targets)
    numeric = fd_gradients(lambda: data_value(model, idx, targets),
                           params, h)
    worst = max(worst, max_rel_err(analytic, numeric))

    _, analytic = penalty_madr(model, idx, ctx)
    numeric = fd_gradients(
        lambda: penalty_madr(model, idx, ctx)[0], params, h
    )
    worst = max(worst, max_rel_err(analytic, numeric))

    _, analytic = penalty_made(model, idx, targets, ctx)
    numeric = fd_gradients(
        lambda: penalty_made(model, idx, targets, ctx)[0], params, h
    )
    worst = max(worst, max_rel_err(analytic, numeric))

    coeff = 0.7
    mode = ctx.sensitive_mode
    analytic = coupling_grads(model, pairs, coeff, mode)
    numeric = fd_gradients(
        lambda: penalty_coupling(model, pairs, coeff, mode)[0], params, h
    )
    worst = max(worst, max_rel_err(analytic, numeric))
    return worst


def brute_force_neighbors(factors, groups, k, gamma):
    """Exhaustive all-pairs neighbor scoring, plain Python."""
    n = len(factors)
    out = []
    for i in range(n):
        scored = []
        for j in range(n):
            if j == i:
                continue
            ui, uj = factors[i], factors[j]
            cos = float(
                np.dot(ui, uj)
                / (np.linalg.norm(ui) * np.linalg.norm(uj))
            )
            group_term = 0.0 if groups[i] == groups[j] else 1.0
            scored.append((gamma * cos + (1 - gamma) * group_term, j))
        scored.sort(key=lambda t: (-t[0], t[1]))
        out.append([j for _, j in scored[:k]])
    return out
