"""COO sparse tensors, sensitive-group context, and dataset preparation.

All containers are immutable after construction (arrays are marked
read-only), so instances can be shared freely across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DuplicateEntryError,
    EntryBoundsError,
    MissingLabelError,
    TensorFormatError,
)


def _frozen_array(values, dtype):
    out = np.ascontiguousarray(values, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SparseTensor:
    """N-mode tensor stored as a list of observed (index, value) pairs.

    Parameters
    ----------
    dims:
        Mode sizes (I_1, ..., I_N), all positive.
    indices:
        Integer array of shape (nnz, N), zero-based coordinates.
    values:
        Float array of shape (nnz,).
    """

    dims: tuple[int, ...]
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(d <= 0 for d in dims):
            raise ValueError(f"mode sizes must be positive, got {dims}")
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 2:
            idx = idx.reshape(-1, len(dims))
        if idx.shape[1] != len(dims):
            raise ValueError(
                f"index array has {idx.shape[1]} coordinates per entry, "
                f"expected {len(dims)}"
            )
        vals = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if vals.shape[0] != idx.shape[0]:
            raise ValueError("indices and values disagree on entry count")
        if idx.shape[0]:
            low = idx.min(axis=0)
            high = idx.max(axis=0)
            for mode, size in enumerate(dims):
                if low[mode] < 0 or high[mode] >= size:
                    raise EntryBoundsError(
                        f"coordinate out of range on mode {mode}: "
                        f"found values in [{low[mode]}, {high[mode]}], "
                        f"mode size is {size}"
                    )
            unique, counts = np.unique(idx, axis=0, return_counts=True)
            if unique.shape[0] != idx.shape[0]:
                first = unique[counts > 1][0]
                raise DuplicateEntryError(
                    f"duplicate index {tuple(int(c) for c in first)}"
                )
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "indices", _frozen_array(idx, np.int64))
        object.__setattr__(self, "values", _frozen_array(vals, np.float64))

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def nnz(self) -> int:
        return self.values.shape[0]

    def entries(self) -> list[tuple[tuple[int, ...], float]]:
        """Entries as plain Python (index tuple, value) pairs."""
        return [
            (tuple(int(c) for c in row), float(v))
            for row, v in zip(self.indices, self.values)
        ]

    def mode_coords(self, mode: int) -> np.ndarray:
        """Coordinates along one mode, aligned with ``values``."""
        return self.indices[:, mode]

    def select(self, mask) -> "SparseTensor":
        """Sub-tensor with the same dims keeping entries where mask is true."""
        mask = np.asarray(mask, dtype=bool)
        return SparseTensor(self.dims, self.indices[mask], self.values[mask])

    def with_dims(self, dims) -> "SparseTensor":
        """Same entries re-declared under (larger) mode sizes."""
        return SparseTensor(tuple(dims), self.indices, self.values)

    @classmethod
    def from_entries(cls, entries, dims=None) -> "SparseTensor":
        """Build from (index tuple, value) pairs; dims inferred when omitted."""
        if not entries:
            if dims is None:
                raise ValueError("cannot infer dims from an empty entry list")
            return cls(tuple(dims), np.empty((0, len(dims)), np.int64), [])
        idx = np.asarray([e[0] for e in entries], dtype=np.int64)
        vals = np.asarray([e[1] for e in entries], dtype=np.float64)
        if dims is None:
            dims = tuple(int(m) + 1 for m in idx.max(axis=0))
        return cls(tuple(dims), idx, vals)


@dataclass(frozen=True)
class SensitiveContext:
    """Group membership of the entities along one tensor mode.

    ``group_of[i]`` is the dense group id of entity ``i`` on the sensitive
    mode; ``one_hot`` is the matching indicator matrix with one 1 per row.
    """

    sensitive_mode: int
    group_of: np.ndarray
    num_groups: int
    one_hot: np.ndarray
    group_names: tuple[str, ...] | None = None

    def __post_init__(self):
        groups = np.asarray(self.group_of, dtype=np.int64).reshape(-1)
        m = int(self.num_groups)
        if m < 2:
            raise ValueError(f"need at least 2 groups, got {m}")
        if groups.size == 0:
            raise ValueError("no entities on the sensitive mode")
        if groups.min() < 0 or groups.max() >= m:
            raise ValueError("group ids must lie in [0, num_groups)")
        hot = np.asarray(self.one_hot, dtype=np.float64)
        if hot.shape != (groups.size, m):
            raise ValueError(
                f"one-hot matrix has shape {hot.shape}, "
                f"expected {(groups.size, m)}"
            )
        expected = np.zeros_like(hot)
        expected[np.arange(groups.size), groups] = 1.0
        if not np.array_equal(hot, expected):
            raise ValueError("one-hot rows disagree with the group labels")
        object.__setattr__(self, "group_of", _frozen_array(groups, np.int64))
        object.__setattr__(self, "one_hot", _frozen_array(hot, np.float64))
        object.__setattr__(self, "num_groups", m)
        object.__setattr__(self, "sensitive_mode", int(self.sensitive_mode))

    @property
    def num_entities(self) -> int:
        return self.group_of.shape[0]

    @classmethod
    def from_labels(cls, mode: int, labels) -> "SensitiveContext":
        """Densify arbitrary labels to ids [0, M) in first-appearance order."""
        seen: dict = {}
        ids = np.empty(len(labels), dtype=np.int64)
        for i, label in enumerate(labels):
            if label not in seen:
                seen[label] = len(seen)
            ids[i] = seen[label]
        m = len(seen)
        if m < 2:
            raise ValueError(f"need at least 2 distinct groups, got {m}")
        hot = np.zeros((len(labels), m))
        hot[np.arange(len(labels)), ids] = 1.0
        names = tuple(str(k) for k in seen)
        return cls(mode, ids, m, hot, names)

    def groups_of_entries(self, tensor: SparseTensor) -> np.ndarray:
        """Group id of each entry, by its sensitive-mode coordinate."""
        return self.group_of[tensor.mode_coords(self.sensitive_mode)]


@dataclass(frozen=True)
class DataSplit:
    """Disjoint train/validation/test partition of one tensor's entries."""

    train: SparseTensor
    validation: SparseTensor
    test: SparseTensor


def _split_line(raw: str):
    text = raw.strip()
    if not text or text.startswith("#"):
        return None
    return text.split()


def load_tensor(path, dims=None) -> SparseTensor:
    """Read a plain-text COO tensor file.

    Each non-comment line holds N integer coordinates and one value,
    whitespace-separated; lines starting with '#' are skipped.  When
    ``dims`` is omitted the mode sizes become per-mode max coordinate + 1.
    """
    dims = None if dims is None else tuple(int(d) for d in dims)
    coords: list[list[int]] = []
    vals: list[float] = []
    order = None if dims is None else len(dims)
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            tokens = _split_line(raw)
            if tokens is None:
                continue
            if order is None:
                order = len(tokens) - 1
                if order < 1:
                    raise TensorFormatError(
                        f"{path}: line {lineno}: need at least one "
                        "coordinate and a value"
                    )
            if len(tokens) != order + 1:
                raise TensorFormatError(
                    f"{path}: line {lineno}: expected {order} coordinates "
                    f"and a value, got {len(tokens)} fields"
                )
            try:
                row = [int(t) for t in tokens[:-1]]
                value = float(tokens[-1])
            except ValueError as exc:
                raise TensorFormatError(
                    f"{path}: line {lineno}: {exc}"
                ) from None
            for mode, c in enumerate(row):
                if c < 0 or (dims is not None and c >= dims[mode]):
                    bound = dims[mode] if dims is not None else "inferred"
                    raise EntryBoundsError(
                        f"{path}: line {lineno}: coordinate {c} out of "
                        f"range on mode {mode} (size {bound})"
                    )
            coords.append(row)
            vals.append(value)
    if order is None:
        raise TensorFormatError(f"{path}: no entries found")
    idx = np.asarray(coords, dtype=np.int64).reshape(len(coords), order)
    if dims is None:
        dims = tuple(int(m) + 1 for m in idx.max(axis=0))
    return SparseTensor(dims, idx, np.asarray(vals))


def save_tensor(tensor: SparseTensor, path) -> None:
    """Write the COO text format; values keep 17 significant digits."""
    with open(path, "w", encoding="utf-8") as handle:
        for row, value in zip(tensor.indices, tensor.values):
            coords = " ".join(str(int(c)) for c in row)
            handle.write(f"{coords} {value:.17g}\n")


def load_sensitive(path, num_entities: int, mode: int = 0) -> SensitiveContext:
    """Read per-entity group labels (`entity_index <ws> group_label`).

    Labels are densified to ids [0, M) in first-appearance order.  Every
    entity in [0, num_entities) must be labeled exactly once.
    """
    labels: dict[int, str] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            tokens = _split_line(raw)
            if tokens is None:
                continue
            if len(tokens) != 2:
                raise TensorFormatError(
                    f"{path}: line {lineno}: expected "
                    "'entity_index group_label'"
                )
            try:
                entity = int(tokens[0])
            except ValueError:
                raise TensorFormatError(
                    f"{path}: line {lineno}: bad entity index "
                    f"{tokens[0]!r}"
                ) from None
            if entity < 0 or entity >= num_entities:
                raise EntryBoundsError(
                    f"{path}: line {lineno}: entity {entity} out of range "
                    f"[0, {num_entities})"
                )
            if entity in labels:
                raise DuplicateEntryError(
                    f"{path}: line {lineno}: entity {entity} labeled twice"
                )
            labels[entity] = tokens[1]
    missing = [i for i in range(num_entities) if i not in labels]
    if missing:
        raise MissingLabelError(
            f"{path}: no group label for entities {missing[:10]}"
            + ("..." if len(missing) > 10 else "")
        )
    return SensitiveContext.from_labels(
        mode, [labels[i] for i in range(num_entities)]
    )


def save_sensitive(ctx: SensitiveContext, path) -> None:
    """Write the per-entity label file read back by :func:`load_sensitive`."""
    names = ctx.group_names or tuple(str(g) for g in range(ctx.num_groups))
    with open(path, "w", encoding="utf-8") as handle:
        for entity, gid in enumerate(ctx.group_of):
            handle.write(f"{entity} {names[int(gid)]}\n")


def split(tensor: SparseTensor, ratios, seed: int) -> DataSplit:
    """Shuffle entries with a seeded RNG and partition by ratios.

    Rounding rule: floor for train and validation counts, remainder to
    test, so the three parts always sum to the total.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"need three positive ratios, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    if tensor.nnz == 0:
        raise ValueError("cannot split an empty tensor")
    n = tensor.nnz
    # 1e-9 guard keeps exact products like 10 * 0.8 from flooring down.
    n_train = int(math.floor(n * ratios[0] + 1e-9))
    n_val = int(math.floor(n * ratios[1] + 1e-9))
    perm = np.random.default_rng(seed).permutation(n)
    parts = (
        perm[:n_train],
        perm[n_train : n_train + n_val],
        perm[n_train + n_val :],
    )
    tensors = [
        SparseTensor(tensor.dims, tensor.indices[p], tensor.values[p])
        for p in parts
    ]
    return DataSplit(*tensors)


def downsample_minority(
    tensor: SparseTensor,
    ctx: SensitiveContext,
    keep_rate: float,
    seed: int,
) -> SparseTensor:
    """Thin the minority group's observed entries to a target rate.

    The minority is the group with the fewest observed entries in
    ``tensor`` (ties broken by the lowest group id).  Exactly
    ceil(keep_rate * count) of its entries survive, chosen by a seeded
    shuffle; all other groups are untouched.
    """
    if not 0.0 < keep_rate <= 1.0:
        raise ValueError(f"keep_rate must lie in (0, 1], got {keep_rate}")
    entry_groups = ctx.groups_of_entries(tensor)
    counts = np.bincount(entry_groups, minlength=ctx.num_groups)
    minority = int(np.argmin(counts))
    minority_pos = np.flatnonzero(entry_groups == minority)
    n_min = minority_pos.size
    n_keep = int(math.ceil(keep_rate * n_min - 1e-9))
    perm = np.random.default_rng(seed).permutation(n_min)
    kept = np.sort(minority_pos[perm[:n_keep]])
    keep_mask = np.ones(tensor.nnz, dtype=bool)
    keep_mask[minority_pos] = False
    keep_mask[kept] = True
    return tensor.select(keep_mask)
