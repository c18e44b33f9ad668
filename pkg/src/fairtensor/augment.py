"""Fairness-aware neighbor graph and sensitive-entity augmentation.

The graph scores entity pairs by a blend of factor-space closeness and
group difference, s(i, j) = gamma * cos(u_i, u_j) + (1 - gamma) *
(1 - cos(f_i, f_j)); with one-hot group features the second term is 1
across groups and 0 within.  Each targeted entity then receives a fresh
row index and a set of augmented entries: some of its own observations
re-indexed (true values kept) and some borrowed from neighbors with
values filled in by a pretrained model whose sensitive row is replaced
by the neighborhood average.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateFactorError
from .sparse import SensitiveContext, SparseTensor

__all__ = [
    "FairGraph",
    "AugmentedTensor",
    "build_graph",
    "generate_entries",
    "assemble",
    "save_augmented",
    "load_pairs",
]


@dataclass(frozen=True)
class FairGraph:
    """Top-K neighbor lists per sensitive entity, scores descending.

    Ties are broken toward the lower entity id; an entity never lists
    itself.
    """

    k: int
    gamma: float
    neighbor_ids: np.ndarray
    neighbor_scores: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.neighbor_ids, dtype=np.int64)
        scores = np.asarray(self.neighbor_scores, dtype=np.float64)
        if ids.shape != scores.shape or ids.ndim != 2:
            raise ConfigurationError(
                f"neighbor arrays must share a 2-d shape, got {ids.shape} "
                f"and {scores.shape}"
            )
        if ids.shape[1] != self.k:
            raise ConfigurationError(
                f"neighbor lists have width {ids.shape[1]}, expected "
                f"k={self.k}"
            )
        ids.setflags(write=False)
        scores.setflags(write=False)
        object.__setattr__(self, "neighbor_ids", ids)
        object.__setattr__(self, "neighbor_scores", scores)

    @property
    def num_entities(self) -> int:
        return self.neighbor_ids.shape[0]

    def neighbors(self, entity: int):
        """(ids, scores) of the K nearest entities, best first."""
        return self.neighbor_ids[entity], self.neighbor_scores[entity]


def build_graph(
    context_factors,
    ctx: SensitiveContext,
    k: int,
    gamma: float,
) -> FairGraph:
    """Rank every entity's K most similar peers under the blended score.

    ``context_factors`` is the sensitive-mode factor matrix of a
    pretrained model, one row per entity.
    """
    factors = np.asarray(context_factors, dtype=np.float64)
    if factors.ndim != 2:
        raise ConfigurationError(
            f"context factors must be 2-d, got shape {factors.shape}"
        )
    n = factors.shape[0]
    if len(ctx.group_of) != n:
        raise ConfigurationError(
            f"{n} factor rows but {len(ctx.group_of)} group labels"
        )
    if not 1 <= k < n:
        raise ConfigurationError(
            f"neighbor count must satisfy 1 <= k < {n}, got {k}"
        )
    if not 0.0 <= gamma <= 1.0:
        raise ConfigurationError(f"gamma must lie in [0, 1], got {gamma}")

    norms = np.linalg.norm(factors, axis=1)
    dead = np.flatnonzero(norms == 0)
    if dead.size:
        raise DegenerateFactorError(
            f"entity {dead[0]} has a zero-norm factor row; cosine "
            "similarity is undefined"
        )

    cosine = (factors @ factors.T) / np.outer(norms, norms)
    cross_group = (ctx.group_of[:, None] != ctx.group_of[None, :])
    scores = gamma * cosine + (1.0 - gamma) * cross_group
    np.fill_diagonal(scores, -np.inf)

    ids = np.arange(n)
    neighbor_ids = np.empty((n, k), dtype=np.int64)
    neighbor_scores = np.empty((n, k), dtype=np.float64)
    for i in range(n):
        order = np.lexsort((ids, -scores[i]))[:k]
        neighbor_ids[i] = order
        neighbor_scores[i] = scores[i, order]
    return FairGraph(k=k, gamma=gamma, neighbor_ids=neighbor_ids,
                     neighbor_scores=neighbor_scores)


@dataclass(frozen=True)
class AugmentedTensor:
    """Augmented entries plus the original/augmented row pairing.

    Sensitive coordinates of ``indices`` live in the fresh range
    [base_dim, base_dim + len(pairs)); ``counts_own`` and
    ``counts_neighbor`` record how many entries each pair drew from the
    entity itself versus its neighbors.
    """

    sensitive_mode: int
    base_dim: int
    indices: np.ndarray
    values: np.ndarray
    pairs: np.ndarray
    counts_own: np.ndarray
    counts_neighbor: np.ndarray

    def __post_init__(self):
        idx = np.ascontiguousarray(self.indices, dtype=np.int64)
        vals = np.asarray(self.values, dtype=np.float64)
        pairs = np.ascontiguousarray(self.pairs, dtype=np.int64)
        own = np.asarray(self.counts_own, dtype=np.int64)
        nbr = np.asarray(self.counts_neighbor, dtype=np.int64)
        if idx.ndim != 2 or len(vals) != len(idx):
            raise ConfigurationError("indices and values lengths differ")
        if pairs.ndim != 2 or pairs.shape[1] != 2:
            raise ConfigurationError("pairs must have shape (n, 2)")
        if len(own) != len(pairs) or len(nbr) != len(pairs):
            raise ConfigurationError("per-pair counts must match pairs")
        for a in (idx, vals, pairs, own, nbr):
            a.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "counts_own", own)
        object.__setattr__(self, "counts_neighbor", nbr)

    @property
    def num_entries(self) -> int:
        return len(self.values)

    @property
    def num_pairs(self) -> int:
        return len(self.pairs)


def _entries_by_entity(train: SparseTensor, mode: int):
    """Entry-id lists per sensitive entity, in original entry order."""
    coords = train.indices[:, mode]
    order = np.argsort(coords, kind="stable")
    bounds = np.searchsorted(coords[order], np.arange(train.dims[mode] + 1))
    return [order[bounds[e]:bounds[e + 1]] for e in range(train.dims[mode])]


def resolve_targets(rule, counts) -> np.ndarray:
    """Entity ids selected for augmentation, ascending.

    ``rule`` is "all", "below_median" (strictly fewer observed entries
    than the median entity), or an explicit id sequence.
    """
    n = len(counts)
    if isinstance(rule, str):
        if rule == "all":
            return np.arange(n, dtype=np.int64)
        if rule == "below_median":
            return np.flatnonzero(counts < np.median(counts)).astype(
                np.int64
            )
        raise ConfigurationError(
            f"unknown target rule {rule!r}; use 'all', 'below_median', "
            "or a list of entity ids"
        )
    ids = np.asarray(rule, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise ConfigurationError(
            f"target entity ids must lie in [0, {n}), got "
            f"[{ids.min()}, {ids.max()}]"
        )
    ids = np.unique(ids)
    return ids


def generate_entries(
    train: SparseTensor,
    graph: FairGraph,
    pretrained,
    ctx: SensitiveContext,
    n_original: int,
    n_neighbors: int,
    seed: int,
    targets="all",
) -> AugmentedTensor:
    """Create augmented entries for each targeted sensitive entity.

    Per entity: min(n_original, observed) of its own entries are copied
    with true values; up to n_neighbors distinct index tuples from the
    union of its K neighbors' entries get model-filled values, with any
    tuple already taken from the entity itself dropped in favor of the
    true value.  A (original, augmented) pair is recorded even when no
    entries could be generated.
    """
    if n_original < 0 or n_neighbors < 0:
        raise ConfigurationError(
            "entry budgets must be non-negative, got "
            f"{n_original} and {n_neighbors}"
        )
    if pretrained.dims != train.dims:
        raise ConfigurationError(
            f"pretrained model dims {pretrained.dims} do not match the "
            f"training tensor dims {train.dims}"
        )
    s = ctx.sensitive_mode
    base = train.dims[s]
    if graph.num_entities != base:
        raise ConfigurationError(
            f"graph covers {graph.num_entities} entities but the "
            f"sensitive mode has {base}"
        )

    by_entity = _entries_by_entity(train, s)
    counts = np.array([len(e) for e in by_entity])
    target_ids = resolve_targets(targets, counts)

    rng = np.random.default_rng(seed)
    sensitive_factor = pretrained.factors[s]
    idx_parts = []
    val_parts = []
    n_own = np.zeros(len(target_ids), dtype=np.int64)
    n_nbr = np.zeros(len(target_ids), dtype=np.int64)
    pairs = np.empty((len(target_ids), 2), dtype=np.int64)

    for pos, entity in enumerate(target_ids):
        new_id = base + pos
        pairs[pos] = (entity, new_id)
        nbr_ids = graph.neighbor_ids[entity]

        own_entries = by_entity[entity]
        take_own = min(n_original, len(own_entries))
        own_sel = rng.permutation(own_entries)[:take_own]
        own_idx = train.indices[own_sel].copy()
        own_idx[:, s] = new_id

        pool_src = np.concatenate([by_entity[j] for j in nbr_ids])
        pool_idx = train.indices[pool_src].copy()
        pool_idx[:, s] = new_id
        pool_idx = np.unique(pool_idx, axis=0)
        if len(pool_idx) == 0 and take_own == 0:
            warnings.warn(
                f"entity {entity} has no observed entries and no neighbor "
                "entries; nothing to sample",
                stacklevel=2,
            )
        if len(pool_idx) > n_neighbors:
            keep = rng.permutation(len(pool_idx))[:n_neighbors]
            pool_idx = pool_idx[keep]
        if len(pool_idx) and take_own:
            taken = set(map(tuple, own_idx))
            fresh = np.array(
                [tuple(row) not in taken for row in pool_idx], dtype=bool
            )
            pool_idx = pool_idx[fresh]

        if len(pool_idx):
            avg_row = (
                sensitive_factor[entity] + sensitive_factor[nbr_ids].sum(0)
            ) / (graph.k + 1.0)
            rows = np.empty(
                (len(pool_idx), train.order, pretrained.rank)
            )
            for mode in range(train.order):
                if mode == s:
                    rows[:, mode, :] = avg_row
                else:
                    rows[:, mode, :] = pretrained.factors[mode][
                        pool_idx[:, mode]
                    ]
            nbr_values = pretrained.predict_rows(rows)
        else:
            nbr_values = np.empty(0)

        n_own[pos] = take_own
        n_nbr[pos] = len(pool_idx)
        idx_parts.append(own_idx)
        idx_parts.append(pool_idx)
        val_parts.append(train.values[own_sel])
        val_parts.append(nbr_values)

    if idx_parts:
        indices = np.vstack(idx_parts).astype(np.int64)
        values = np.concatenate(val_parts)
    else:
        indices = np.empty((0, train.order), dtype=np.int64)
        values = np.empty(0)
    return AugmentedTensor(
        sensitive_mode=s,
        base_dim=base,
        indices=indices,
        values=values,
        pairs=pairs,
        counts_own=n_own,
        counts_neighbor=n_nbr,
    )


def assemble(train: SparseTensor, aug: AugmentedTensor):
    """Concatenate original and augmented entries into one tensor.

    Returns (tensor, pairs); the sensitive mode grows by the number of
    pairs, all other dims are unchanged, and original entries appear
    first and unmodified.
    """
    s = aug.sensitive_mode
    base = aug.base_dim
    if train.dims[s] != base:
        raise ConfigurationError(
            f"augmentation was built for sensitive dim {base}, tensor "
            f"has {train.dims[s]}"
        )
    new_dims = list(train.dims)
    new_dims[s] = base + aug.num_pairs
    if aug.num_entries:
        lo = int(aug.indices[:, s].min())
        hi = int(aug.indices[:, s].max())
        assert base <= lo and hi < new_dims[s], (
            "augmented sensitive coordinates escaped the reserved range"
        )
        indices = np.vstack([train.indices, aug.indices])
        values = np.concatenate([train.values, aug.values])
    else:
        indices = train.indices
        values = train.values
    tensor = SparseTensor(
        dims=tuple(new_dims), indices=indices, values=values
    )
    return tensor, aug.pairs.copy()


def save_augmented(aug: AugmentedTensor, entries_path, pairs_path) -> None:
    """Write entries in COO text form plus the pair sidecar file."""
    with open(entries_path, "w", encoding="utf-8") as handle:
        for row, value in zip(aug.indices, aug.values):
            coords = " ".join(str(c) for c in row)
            handle.write(f"{coords} {value:.17g}\n")
    with open(pairs_path, "w", encoding="utf-8") as handle:
        for orig, new in aug.pairs:
            handle.write(f"{orig} {new}\n")


def load_pairs(path) -> np.ndarray:
    """Read an (original_id, augmented_id) sidecar file."""
    pairs = []
    with open(path, encoding="utf-8") as handle:
        for ln, line in enumerate(handle, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise ConfigurationError(
                    f"{path}: line {ln}: expected two ids, got "
                    f"{len(parts)} fields"
                )
            pairs.append((int(parts[0]), int(parts[1])))
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
