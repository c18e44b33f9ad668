"""Seeded synthetic tensors with controlled group imbalance.

Ground truth is always a low-rank CP model so that any reconstruction
method has a recoverable target.  Observed entries are drawn per group
over that group's slice of the full index grid, which lets one group be
made much sparser than the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .models import CPModel, init_model
from .sparse import SensitiveContext, SparseTensor

__all__ = ["SynthSpec", "generate"]


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for an imbalanced sparse tensor.

    The sensitive mode is split into a majority block (entities
    0..majority_entities-1) and a minority block (the rest); each group's
    observed count is the ceiling of density times its slice size.
    """

    dims: tuple
    rank: int
    sensitive_mode: int = 0
    majority_entities: int = 0
    minority_entities: int = 0
    majority_density: float = 0.5
    minority_density: float = 0.05
    noise_std: float = 0.0
    factor_scale: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        dims = tuple(int(d) for d in self.dims)
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ConfigurationError(f"bad dims {self.dims}")
        if self.rank < 1:
            raise ConfigurationError(f"rank must be >= 1, got {self.rank}")
        if not 0 <= self.sensitive_mode < len(dims):
            raise ConfigurationError(
                f"sensitive mode {self.sensitive_mode} out of range for "
                f"{len(dims)} modes"
            )
        if self.majority_entities < 1 or self.minority_entities < 1:
            raise ConfigurationError("both groups need at least one entity")
        total = self.majority_entities + self.minority_entities
        if total != dims[self.sensitive_mode]:
            raise ConfigurationError(
                f"group sizes {self.majority_entities}+"
                f"{self.minority_entities} != sensitive dim "
                f"{dims[self.sensitive_mode]}"
            )
        for name, d in (
            ("majority", self.majority_density),
            ("minority", self.minority_density),
        ):
            if not 0.0 < d <= 1.0:
                raise ConfigurationError(
                    f"{name} density must lie in (0, 1], got {d}"
                )
        if self.noise_std < 0:
            raise ConfigurationError(
                f"noise_std must be >= 0, got {self.noise_std}"
            )


def _sample_group(rng, entity_ids, other_dims, s_mode, density):
    """Uniform index tuples without replacement over one group's slice."""
    other_size = int(np.prod(other_dims, dtype=np.int64)) if other_dims \
        else 1
    total = len(entity_ids) * other_size
    count = math.ceil(density * total - 1e-9)
    if count == 0:
        raise ConfigurationError(
            f"density {density} yields zero entries over a slice of "
            f"{total} cells"
        )
    flat = rng.choice(total, size=count, replace=False)
    entity_pos, rest = np.divmod(flat, other_size)
    coords = np.unravel_index(rest, other_dims) if other_dims else ()
    n_modes = len(other_dims) + 1
    idx = np.empty((count, n_modes), dtype=np.int64)
    idx[:, s_mode] = np.asarray(entity_ids)[entity_pos]
    other_modes = [m for m in range(n_modes) if m != s_mode]
    for pos, mode in enumerate(other_modes):
        idx[:, mode] = coords[pos]
    return idx


def generate(spec: SynthSpec):
    """Build (tensor, context, ground-truth model) from a spec.

    Deterministic in the seed.  The generator enumerates each group's
    slice of the index grid, so it is meant for desk-scale shapes.
    """
    spec.validate()
    dims = tuple(int(d) for d in spec.dims)
    s = spec.sensitive_mode

    truth = init_model(
        "cp", dims, spec.rank, scale=spec.factor_scale, seed=spec.seed
    )
    assert isinstance(truth, CPModel)

    sample_rng = np.random.default_rng([spec.seed, 0x5A11])
    noise_rng = np.random.default_rng([spec.seed, 0x901E])

    other_dims = tuple(d for m, d in enumerate(dims) if m != s)
    majority_ids = np.arange(spec.majority_entities)
    minority_ids = np.arange(
        spec.majority_entities, spec.majority_entities + spec.minority_entities
    )
    idx_major = _sample_group(
        sample_rng, majority_ids, other_dims, s, spec.majority_density
    )
    idx_minor = _sample_group(
        sample_rng, minority_ids, other_dims, s, spec.minority_density
    )
    indices = np.vstack([idx_major, idx_minor])

    values = truth.predict_rows(truth.gather_rows(indices))
    if spec.noise_std > 0:
        values = values + spec.noise_std * noise_rng.standard_normal(
            len(values)
        )

    tensor = SparseTensor(dims=dims, indices=indices, values=values)
    labels = ["majority"] * spec.majority_entities + (
        ["minority"] * spec.minority_entities
    )
    ctx = SensitiveContext.from_labels(s, labels)
    return tensor, ctx, truth
