"""Reconstruction models over factor matrices.

Two model kinds share one interface: a multilinear model ('cp', entry =
sum over ranks of the per-mode row products) and a compact convolutional
model ('costco', the stacked rows pass through a conv over the mode axis,
a conv over the rank axis, and a small MLP).  Forward evaluation and the
exact gradients used by the trainer are implemented here; both are pure
with respect to the model, so they can run concurrently across entries.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, EntryBoundsError

CHECKPOINT_VERSION = 1


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_grad(x):
    return (x > 0.0).astype(np.float64)


def _tanh_grad(x):
    return 1.0 - np.tanh(x) ** 2


def _identity(x):
    return x


def _one(x):
    return np.ones_like(x)


ACTIVATIONS = {
    "relu": (_relu, _relu_grad),
    "tanh": (np.tanh, _tanh_grad),
    "linear": (_identity, _one),
}


def _activation(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}"
        ) from None


@dataclass
class ConvParams:
    """Weights of the convolutional reconstruction head.

    conv1 combines the N stacked rows per latent column (kernel over the
    mode axis, C output channels); conv2 collapses the R latent columns of
    the C-channel feature map to a C-vector; the MLP maps that vector
    through one hidden layer to a scalar.
    """

    conv1_w: np.ndarray  # (C, N)
    conv1_b: np.ndarray  # (C,)
    conv2_w: np.ndarray  # (C, C, R)
    conv2_b: np.ndarray  # (C,)
    hidden_w: np.ndarray  # (H, C)
    hidden_b: np.ndarray  # (H,)
    out_w: np.ndarray  # (H,)
    out_b: np.ndarray  # scalar, shape ()
    activation: str = "relu"

    def arrays(self) -> list[np.ndarray]:
        return [
            self.conv1_w,
            self.conv1_b,
            self.conv2_w,
            self.conv2_b,
            self.hidden_w,
            self.hidden_b,
            self.out_w,
            self.out_b,
        ]

    @property
    def channels(self) -> int:
        return self.conv1_w.shape[0]

    @property
    def hidden_units(self) -> int:
        return self.hidden_w.shape[0]

    def validate(self, n_modes: int, rank: int) -> None:
        c = self.channels
        h = self.hidden_units
        shapes = {
            "conv1_w": (self.conv1_w.shape, (c, n_modes)),
            "conv1_b": (self.conv1_b.shape, (c,)),
            "conv2_w": (self.conv2_w.shape, (c, c, rank)),
            "conv2_b": (self.conv2_b.shape, (c,)),
            "hidden_w": (self.hidden_w.shape, (h, c)),
            "hidden_b": (self.hidden_b.shape, (h,)),
            "out_w": (self.out_w.shape, (h,)),
            "out_b": (self.out_b.shape, ()),
        }
        for name, (got, want) in shapes.items():
            if got != want:
                raise ConfigurationError(
                    f"{name} has shape {got}, expected {want}"
                )
        _activation(self.activation)

    def copy(self) -> "ConvParams":
        return replace(self, **{
            name: getattr(self, name).copy()
            for name in (
                "conv1_w", "conv1_b", "conv2_w", "conv2_b",
                "hidden_w", "hidden_b", "out_w", "out_b",
            )
        })


class _FactorModelBase:
    """Shared plumbing: factor storage, row gathering, parameter access."""

    kind = ""

    def __init__(self, factors):
        factors = [np.ascontiguousarray(f, dtype=np.float64) for f in factors]
        if not factors:
            raise ConfigurationError("need at least one factor matrix")
        rank = factors[0].shape[1]
        for n, f in enumerate(factors):
            if f.ndim != 2 or f.shape[1] != rank:
                raise ConfigurationError(
                    f"factor {n} has shape {f.shape}; all factors must share "
                    f"rank {rank}"
                )
            if not np.all(np.isfinite(f)):
                raise ConfigurationError(f"factor {n} has non-finite entries")
        self.factors = factors

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    @property
    def order(self) -> int:
        return len(self.factors)

    @property
    def theta(self):
        return None

    def parameters(self) -> list[np.ndarray]:
        """All trainable arrays, factors first; order is stable."""
        return list(self.factors)

    def zero_grads(self) -> list[np.ndarray]:
        return [np.zeros_like(p) for p in self.parameters()]

    def _check_indices(self, indices) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.int64)
        squeeze = idx.ndim == 1
        idx = np.atleast_2d(idx)
        if idx.shape[1] != self.order:
            raise ValueError(
                f"index tuples have {idx.shape[1]} coordinates, "
                f"model has {self.order} modes"
            )
        for mode, size in enumerate(self.dims):
            col = idx[:, mode]
            if col.size and (col.min() < 0 or col.max() >= size):
                raise EntryBoundsError(
                    f"coordinate out of range on mode {mode} (size {size})"
                )
        return idx, squeeze

    def gather_rows(self, idx: np.ndarray) -> np.ndarray:
        """Stack the selected factor rows into a (B, N, R) block."""
        return np.stack(
            [f[idx[:, n]] for n, f in enumerate(self.factors)], axis=1
        )

    def predict(self, indices) -> np.ndarray | float:
        """Reconstructed value(s) at integer index tuple(s)."""
        idx, squeeze = self._check_indices(indices)
        out = self.predict_rows(self.gather_rows(idx))
        return float(out[0]) if squeeze else out

    def accumulate_entry_grads(self, idx, weights, grads) -> None:
        """Add sum_b weights[b] * d(prediction_b)/d(param) into ``grads``.

        ``grads`` must align with :meth:`parameters`.  The squared-error
        trainer passes weights = 2 * residuals; penalty terms pass their
        own per-entry coefficients.
        """
        rows = self.gather_rows(idx)
        d_rows, d_theta = self.grad_rows(rows, weights)
        for n in range(self.order):
            np.add.at(grads[n], idx[:, n], d_rows[:, n, :])
        if d_theta is not None:
            for g, d in zip(grads[self.order:], d_theta):
                g += d

    # implemented by subclasses: predict_rows, grad_rows, copy


class CPModel(_FactorModelBase):
    """Multilinear reconstruction: entry = sum_r prod_n row_n[r]."""

    kind = "cp"

    def predict_rows(self, rows: np.ndarray) -> np.ndarray:
        return rows.prod(axis=1).sum(axis=1)

    def grad_rows(self, rows, weights):
        b, n, r = rows.shape
        # Leave-one-out products via prefix/suffix scans; exact with zeros.
        prefix = np.ones((b, n, r))
        for m in range(1, n):
            prefix[:, m] = prefix[:, m - 1] * rows[:, m - 1]
        suffix = np.ones((b, n, r))
        for m in range(n - 2, -1, -1):
            suffix[:, m] = suffix[:, m + 1] * rows[:, m + 1]
        d_rows = np.asarray(weights)[:, None, None] * prefix * suffix
        return d_rows, None

    def copy(self) -> "CPModel":
        return CPModel([f.copy() for f in self.factors])


class CostcoModel(_FactorModelBase):
    """Convolutional reconstruction over the stacked factor rows."""

    kind = "costco"

    def __init__(self, factors, theta: ConvParams):
        super().__init__(factors)
        theta.validate(self.order, self.rank)
        self._theta = theta

    @property
    def theta(self) -> ConvParams:
        return self._theta

    def parameters(self) -> list[np.ndarray]:
        return list(self.factors) + self._theta.arrays()

    def _forward(self, rows):
        t = self._theta
        act, _ = _activation(t.activation)
        a1 = np.einsum("cn,bnr->bcr", t.conv1_w, rows) + t.conv1_b[None, :, None]
        h1 = act(a1)
        a2 = np.einsum("cdr,bdr->bc", t.conv2_w, h1) + t.conv2_b[None, :]
        h2 = act(a2)
        a3 = h2 @ t.hidden_w.T + t.hidden_b[None, :]
        h3 = act(a3)
        y = h3 @ t.out_w + t.out_b
        return y, (a1, h1, a2, h2, a3, h3)

    def predict_rows(self, rows: np.ndarray) -> np.ndarray:
        y, _ = self._forward(rows)
        return y

    def grad_rows(self, rows, weights):
        t = self._theta
        _, actp = _activation(t.activation)
        w = np.asarray(weights, dtype=np.float64)
        _, (a1, h1, a2, h2, a3, h3) = self._forward(rows)

        d_a3 = (w[:, None] * t.out_w[None, :]) * actp(a3)
        d_h2 = d_a3 @ t.hidden_w
        d_a2 = d_h2 * actp(a2)
        d_h1 = np.einsum("bc,cdr->bdr", d_a2, t.conv2_w)
        d_a1 = d_h1 * actp(a1)
        d_rows = np.einsum("bcr,cn->bnr", d_a1, t.conv1_w)

        d_theta = [
            np.einsum("bcr,bnr->cn", d_a1, rows),      # conv1_w
            d_a1.sum(axis=(0, 2)),                     # conv1_b
            np.einsum("bc,bdr->cdr", d_a2, h1),        # conv2_w
            d_a2.sum(axis=0),                          # conv2_b
            d_a3.T @ h2,                               # hidden_w
            d_a3.sum(axis=0),                          # hidden_b
            h3.T @ w,                                  # out_w
            np.asarray(w.sum()),                       # out_b
        ]
        return d_rows, d_theta

    def copy(self) -> "CostcoModel":
        return CostcoModel([f.copy() for f in self.factors], self._theta.copy())


def predict_cp(model: CPModel, index) -> float:
    """Multilinear reconstruction at one index tuple."""
    if model.kind != "cp":
        raise ConfigurationError(f"expected a cp model, got {model.kind!r}")
    return model.predict(index)


def predict_costco(model: CostcoModel, index) -> float:
    """Convolutional reconstruction at one index tuple."""
    if model.kind != "costco":
        raise ConfigurationError(
            f"expected a costco model, got {model.kind!r}"
        )
    return model.predict(index)


def predict_generic(model, rows) -> float:
    """Evaluate the model on explicitly supplied rows (one per mode).

    The rows need not come from the model's own factor matrices; the
    augmentation step passes a neighbor-averaged row in the sensitive slot.
    """
    rows = [np.asarray(r, dtype=np.float64).reshape(-1) for r in rows]
    if len(rows) != model.order:
        raise ValueError(
            f"got {len(rows)} rows for a model with {model.order} modes"
        )
    for n, r in enumerate(rows):
        if r.shape[0] != model.rank:
            raise ValueError(
                f"row {n} has length {r.shape[0]}, expected rank {model.rank}"
            )
    block = np.stack(rows)[None, :, :]
    return float(model.predict_rows(block)[0])


@dataclass(frozen=True)
class EntryGradients:
    """Gradient of 2 * residual * prediction at one entry.

    Only the parameters the entry touches appear: one row per mode, plus
    the shared head weights when the model has them.
    """

    index: tuple[int, ...]
    row_grads: list[np.ndarray]
    theta_grads: list[np.ndarray] | None


def entry_gradients(model, index, residual: float) -> EntryGradients:
    """Per-entry parameter gradients of the squared-error term.

    ``residual`` is (prediction - target); the returned blocks are
    d(residual^2)/d(param) = 2 * residual * d(prediction)/d(param).
    """
    idx, _ = model._check_indices(index)
    rows = model.gather_rows(idx)
    d_rows, d_theta = model.grad_rows(rows, np.asarray([2.0 * residual]))
    return EntryGradients(
        index=tuple(int(c) for c in idx[0]),
        row_grads=[d_rows[0, n, :] for n in range(model.order)],
        theta_grads=d_theta,
    )


def init_model(
    kind: str,
    dims,
    rank: int,
    scale: float = 0.1,
    seed: int = 0,
    channels: int = 8,
    hidden_units: int = 32,
    activation: str = "relu",
):
    """Seeded random model.

    Factor entries are i.i.d. uniform(-scale, +scale).  Each factor matrix
    draws from its own child stream of ``seed``, so enlarging one mode
    leaves every other factor and the existing rows of the enlarged one
    bit-identical.  Convolutional weights use per-layer scale 1/sqrt(fan_in).
    """
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    dims = tuple(int(d) for d in dims)
    streams = np.random.SeedSequence(seed).spawn(len(dims) + 1)
    factors = [
        np.random.default_rng(s).uniform(-scale, scale, size=(d, rank))
        for s, d in zip(streams, dims)
    ]
    if kind == "cp":
        return CPModel(factors)
    if kind == "costco":
        rng = np.random.default_rng(streams[-1])
        n, c, h = len(dims), channels, hidden_units

        def layer(fan_in, *shape):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        theta = ConvParams(
            conv1_w=layer(n, c, n),
            conv1_b=layer(n, c),
            conv2_w=layer(c * rank, c, c, rank),
            conv2_b=layer(c * rank, c),
            hidden_w=layer(c, h, c),
            hidden_b=layer(c, h),
            out_w=layer(h, h),
            out_b=layer(h),
            activation=activation,
        )
        return CostcoModel(factors, theta)
    raise ConfigurationError(f"unknown model kind {kind!r}")


def save_model(model, path) -> None:
    """Checkpoint all parameter arrays; load(save(m)) is bit-identical."""
    payload = {
        "format_version": np.asarray(CHECKPOINT_VERSION),
        "kind": np.asarray(model.kind),
        "dims": np.asarray(model.dims, dtype=np.int64),
        "rank": np.asarray(model.rank),
    }
    for n, f in enumerate(model.factors):
        payload[f"factor_{n}"] = f
    if model.kind == "costco":
        t = model.theta
        payload["activation"] = np.asarray(t.activation)
        for name, arr in zip(
            ("conv1_w", "conv1_b", "conv2_w", "conv2_b",
             "hidden_w", "hidden_b", "out_w", "out_b"),
            t.arrays(),
        ):
            payload[name] = arr
    np.savez(path, **payload)


def load_model(path):
    """Rebuild a model from :func:`save_model` output."""
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ConfigurationError(
                f"checkpoint version {version} not supported "
                f"(expected {CHECKPOINT_VERSION})"
            )
        kind = str(data["kind"])
        dims = tuple(int(d) for d in data["dims"])
        factors = [data[f"factor_{n}"] for n in range(len(dims))]
        if kind == "cp":
            return CPModel(factors)
        theta = ConvParams(
            conv1_w=data["conv1_w"],
            conv1_b=data["conv1_b"],
            conv2_w=data["conv2_w"],
            conv2_b=data["conv2_b"],
            hidden_w=data["hidden_w"],
            hidden_b=data["hidden_b"],
            out_w=data["out_w"],
            out_b=data["out_b"],
            activation=str(data["activation"]),
        )
        return CostcoModel(factors, theta)
