"""Noise models, batch sums and their normal couplings.

All supported noise families are zero-mean with identity covariance and a
finite fourth moment.  A batch sum collects S independent draws conditioned
on one state; ``couple_gaussian`` maps the batch sum onto a standard normal
vector, pairing the two as closely as the 1-D quantile (comonotone)
transport allows, which is the W2-optimal pairing coordinate-by-coordinate
for independent-coordinate laws.  For the Gaussian family the coupling is
the exact identity raw_sum / sqrt(S).

State dependence is modelled by an orthogonal mixing matrix applied to the
raw draw, which preserves the identity covariance.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import ndtri

from .errors import ConfigError, PreconditionError, UntrainedTableError
from .rng import RngStream

KINDS = ("gaussian", "rademacher", "centered-uniform", "centered-laplace", "student-t")

_UNIFORM_HALF_WIDTH = np.sqrt(3.0)  # Var(U[-a, a]) = a^2 / 3
_LAPLACE_SCALE = 1.0 / np.sqrt(2.0)  # Var(Laplace(0, b)) = 2 b^2
_STUDENT_T_DOF = 5  # smallest integer dof with a finite fourth moment
_STUDENT_T_SCALE = np.sqrt((_STUDENT_T_DOF - 2.0) / _STUDENT_T_DOF)


@dataclass(frozen=True)
class NoiseModel:
    """A unit-covariance noise family.

    declared_beta is user metadata: the decay exponent claimed for the
    batched normal-approximation gap.  It is consumed by batch-size
    policies, never asserted; estimate_clt_gap measures the gap instead.

    state_mixing, when set, must map a batch of states (n, d) to a batch of
    orthogonal matrices (n, d, d).
    """

    kind: str
    declared_beta: float = 1.0
    state_mixing: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unsupported noise kind {self.kind!r}; known kinds: {KINDS}")
        if not 0.0 <= self.declared_beta <= 1.0:
            raise ConfigError(f"declared_beta must lie in [0, 1], got {self.declared_beta}")

    @property
    def chi0(self) -> int:
        """1 iff the noise is exactly Gaussian."""
        return 1 if self.kind == "gaussian" else 0

    @property
    def independent_coordinates(self) -> bool:
        return self.state_mixing is None

    def coupling_method(self) -> str:
        if self.kind == "gaussian":
            return "identity"
        return "quantile" if self.independent_coordinates else "independent"


def sample_raw(kind: str, g: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Unit-covariance draws of the given kind, before any state mixing."""
    if kind == "gaussian":
        return g.standard_normal(shape)
    if kind == "rademacher":
        return 2.0 * g.integers(0, 2, size=shape).astype(np.float64) - 1.0
    if kind == "centered-uniform":
        return g.uniform(-_UNIFORM_HALF_WIDTH, _UNIFORM_HALF_WIDTH, size=shape)
    if kind == "centered-laplace":
        return g.laplace(0.0, _LAPLACE_SCALE, size=shape)
    if kind == "student-t":
        return _STUDENT_T_SCALE * g.standard_t(_STUDENT_T_DOF, size=shape)
    raise ConfigError(f"unsupported noise kind {kind!r}")


def _apply_mixing(model: NoiseModel, states: np.ndarray, raws: np.ndarray) -> np.ndarray:
    if model.state_mixing is None:
        return raws
    q = model.state_mixing(states)
    return np.einsum("nij,nj->ni", q, raws)


def sample_noise(model: NoiseModel, states: np.ndarray, g: np.random.Generator) -> np.ndarray:
    """One draw per row of states, shape (n, d).  Engine-facing, advances g."""
    raws = sample_raw(model.kind, g, states.shape)
    return _apply_mixing(model, states, raws)


def draw_noise(model: NoiseModel, state: np.ndarray, stream: RngStream) -> np.ndarray:
    """A single d-dimensional draw conditioned on state.

    Pure in the stream: the same (model, state, stream) always returns the
    identical vector.
    """
    state = np.atleast_1d(np.asarray(state, dtype=float))
    return sample_noise(model, state[None, :], stream.generator())[0]


def batch_sum(model: NoiseModel, state: np.ndarray, s_batch: int, stream: RngStream) -> np.ndarray:
    """Sum of s_batch independent draws, all conditioned on the same state."""
    if s_batch < 1:
        raise PreconditionError(f"s_batch must be >= 1, got {s_batch}")
    state = np.atleast_1d(np.asarray(state, dtype=float))
    g = stream.generator()
    raws = sample_raw(model.kind, g, (s_batch, state.size)).sum(axis=0)
    return _apply_mixing(model, state[None, :], raws[None, :])[0]


@dataclass(frozen=True)
class BatchedNoise:
    """A batch sum together with its coupled standard-normal counterpart.

    For the Gaussian kind sqrt(s_batch) * coupled_gaussian reproduces
    raw_sum exactly; otherwise the two are comonotone per coordinate.
    """

    s_batch: int
    raw_sum: np.ndarray
    coupled_gaussian: np.ndarray
    coupling: str


@dataclass(frozen=True)
class QuantileTable:
    """Empirical quantile model of the per-coordinate batch-sum law.

    values are sorted sample points, levels the corresponding cumulative
    mass midpoints.  For laws with few distinct values the table stores the
    atoms themselves, so an atom maps to the midpoint of its own mass
    interval; fine-grained laws are summarized by 4096 interpolated
    quantiles.
    """

    kind: str
    s_batch: int
    n_trained: int
    values: np.ndarray
    levels: np.ndarray
    discrete: bool

    N_BINS = 4096
    MAX_ATOMS = 1024

    def to_uniform(self, v: np.ndarray) -> np.ndarray:
        return np.interp(v, self.values, self.levels)


def train_quantile_table(
    model: NoiseModel, s_batch: int, n_train: int, stream: RngStream
) -> QuantileTable:
    """Fit the per-coordinate batch-sum quantile model on n_train draws."""
    if n_train < 10_000:
        raise PreconditionError(f"quantile table needs >= 10^4 training draws, got {n_train}")
    g = stream.generator()
    sums = np.zeros(n_train)
    for _ in range(s_batch):
        sums += sample_raw(model.kind, g, (n_train,))
    vals, counts = np.unique(sums, return_counts=True)
    if vals.size <= QuantileTable.MAX_ATOMS:
        cum = np.cumsum(counts)
        levels = (cum - 0.5 * counts) / n_train
        return QuantileTable(model.kind, s_batch, n_train, vals, levels, discrete=True)
    levels = (np.arange(QuantileTable.N_BINS) + 0.5) / QuantileTable.N_BINS
    values = np.maximum.accumulate(np.quantile(sums, levels))
    return QuantileTable(model.kind, s_batch, n_train, values, levels, discrete=False)


def save_table(table: QuantileTable, path: str | Path) -> None:
    np.savez(
        path,
        kind=np.array(table.kind),
        s_batch=np.array(table.s_batch),
        n_trained=np.array(table.n_trained),
        values=table.values,
        levels=table.levels,
        discrete=np.array(table.discrete),
    )


def load_table(path: str | Path) -> QuantileTable:
    with np.load(path, allow_pickle=False) as data:
        return QuantileTable(
            kind=str(data["kind"]),
            s_batch=int(data["s_batch"]),
            n_trained=int(data["n_trained"]),
            values=data["values"],
            levels=data["levels"],
            discrete=bool(data["discrete"]),
        )


def couple_gaussian(
    model: NoiseModel,
    raw_sum: np.ndarray,
    s_batch: int,
    quantile_table: QuantileTable | None = None,
    stream: RngStream | None = None,
) -> np.ndarray:
    """Map a batch sum (or a batch of them, shape (n, d)) onto N(0, I) draws.

    gaussian          raw_sum / sqrt(S), the exact optimal coupling
    independent coords per-coordinate comonotone quantile transport through
                      the trained table (W2-optimal in one dimension)
    mixed coords      independent N(0, I) fallback, drawn from ``stream``
    """
    raw_sum = np.asarray(raw_sum, dtype=float)
    if model.kind == "gaussian":
        return raw_sum / np.sqrt(s_batch)
    if not model.independent_coordinates:
        if stream is None:
            raise PreconditionError(
                "independent-coupling fallback for mixed coordinates needs a stream"
            )
        return stream.generator().standard_normal(raw_sum.shape)
    if quantile_table is None:
        raise UntrainedTableError(
            f"quantile coupling for kind {model.kind!r} requires a trained table"
        )
    if quantile_table.kind != model.kind or quantile_table.s_batch != s_batch:
        raise UntrainedTableError(
            f"table trained for ({quantile_table.kind!r}, S={quantile_table.s_batch}) "
            f"cannot couple ({model.kind!r}, S={s_batch})"
        )
    u = quantile_table.to_uniform(raw_sum)
    return ndtri(u)


def batched_noise(
    model: NoiseModel,
    state: np.ndarray,
    s_batch: int,
    stream: RngStream,
    quantile_table: QuantileTable | None = None,
) -> BatchedNoise:
    """Draw a batch sum and couple it in one step."""
    raw = batch_sum(model, state, s_batch, stream)
    zeta = couple_gaussian(model, raw, s_batch, quantile_table, stream.child("fallback"))
    return BatchedNoise(s_batch, raw, zeta, model.coupling_method())


def estimate_clt_gap(
    model: NoiseModel,
    s_batch: int,
    n: int,
    stream: RngStream,
    dim: int = 1,
) -> float:
    """Empirical squared W2 between n batch sums and n draws of N(0, S I_d)."""
    from . import transport

    if n < 1_000:
        raise PreconditionError(f"clt gap estimation needs n >= 10^3 samples, got {n}")
    g = stream.child("sums").generator()
    sums = np.zeros((n, dim))
    for _ in range(s_batch):
        sums += sample_raw(model.kind, g, (n, dim))
    ref = np.sqrt(s_batch) * stream.child("normal-ref").generator().standard_normal((n, dim))
    a = transport.EmpiricalMeasure(sums)
    b = transport.EmpiricalMeasure(ref)
    if dim == 1:
        est = transport.w2_exact_1d(a, b)
    elif n <= transport.MAX_ASSIGNMENT:
        est = transport.w2_exact_assignment(a, b)
    else:
        est = transport.w2_sliced(a, b, 128, stream.child("projections"))
    return float(est.value**2)


def rotation_mixing_2d(angle_fn: Callable[[np.ndarray], np.ndarray]):
    """State-dependent planar rotation, an orthogonal mixing for d = 2."""

    def mix(states: np.ndarray) -> np.ndarray:
        theta = np.asarray(angle_fn(states), dtype=float)
        c, s = np.cos(theta), np.sin(theta)
        q = np.empty((states.shape[0], 2, 2))
        q[:, 0, 0] = c
        q[:, 0, 1] = -s
        q[:, 1, 0] = s
        q[:, 1, 1] = c
        return q

    return mix
