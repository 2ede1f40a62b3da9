"""Momentum-cutoff sums, tadpole counterterms and dense operator grids.

Numerical engine for a rank-4 tensor field whose free covariance is
``C(m) = 1/(1 + |m|^2)`` on the integer lattice ``Z^4``, truncated to boxes
``[-N, N]^4`` and to multiplicative momentum slices.  Provides

* exact (rational) and floating evaluations of the one- and two-loop tadpole
  sums and their subtracted variants (``a1``, ``a2``, ``a2_cross``,
  ``delta_m1``, ``delta_m2``, ``r2``);
* dense operator grids: the colourwise embedding of a Gaussian matrix field,
  the mass-correction diagonals, the resolvent with its cardioid norm audit,
  the order->=3 interaction remainder, and the convergent loop vertices
  entering the quartic bound;
* the quadratic-form kernel ``Q`` with exact rational blocks, plus per-slice
  trace / norm / trace-square statistics.

Exact results are :class:`fractions.Fraction`; dense linear algebra is
``numpy``.  Histogram tricks (counting lattice points per squared norm) keep
every sum polynomial in the cutoff rather than in the box volume.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np

from .core import (
    DEFAULT_DIM_CAP,
    InvariantViolation,
    ModelConfig,
    Momentum4,
    _norm_sq,
    in_cardioid,
)

__all__ = [
    "square_counts",
    "propagator",
    "tadpole_sum",
    "delta_m1",
    "a1",
    "repeated_propagator_sum",
    "a2",
    "insertion_sum",
    "a2_cross",
    "delta_m2",
    "second_order_tadpole",
    "r2",
    "tadpole_sum_float",
    "a1_float",
    "a1_float_table",
    "repeated_propagator_sum_float",
    "a1_growth_profile",
    "a2_growth_profile",
    "slice_weighted_sum",
    "momentum_components",
    "norm_sq_vector",
    "propagator_vector",
    "slice_interp_vector",
    "beta_vector",
    "gamma_vector",
    "mass_correction_diagonals",
    "OperatorGrid",
    "operator_norm",
    "embed_colour",
    "build_sigma_operator",
    "ResolventResult",
    "resolvent",
    "resolvent_norm_bound",
    "tr_log3",
    "tr_log3_series",
    "eval_v_ge3",
    "UVertexReport",
    "eval_u_vertices",
    "QOperator",
    "build_q",
    "q_slice_stats",
]


# ---------------------------------------------------------------------------
# Lattice point histograms
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def square_counts(cut: int, dims: int) -> np.ndarray:
    """``out[s] = #{p in [-cut, cut]^dims : p.p == s}`` as a read-only array.

    Built by iterated shift-and-add over one dimension at a time, so the cost
    is ``O(dims * cut * dims * cut**2)`` rather than the box volume.
    """
    if cut < 0:
        raise ValueError("cut must be >= 0")
    if dims < 0:
        raise ValueError("dims must be >= 0")
    counts = np.ones(1, dtype=np.int64)
    for _ in range(dims):
        new = np.zeros(counts.size + cut * cut, dtype=np.int64)
        new[: counts.size] += counts
        for m in range(1, cut + 1):
            new[m * m : m * m + counts.size] += 2 * counts
        counts = new
    counts.setflags(write=False)
    return counts


def _square_items(cut: int, dims: int) -> list[tuple[int, int]]:
    """Nonzero ``(norm_sq, multiplicity)`` pairs of :func:`square_counts`."""
    counts = square_counts(cut, dims)
    return [(s, int(c)) for s, c in enumerate(counts) if c]


# ---------------------------------------------------------------------------
# Exact scalar sums (everything Fraction)
# ---------------------------------------------------------------------------


def propagator(n: "Momentum4 | Sequence[int] | int") -> Fraction:
    """Free covariance ``1/(1 + |n|^2)``, exact.

    ``n`` may be a four-momentum, a component sequence, or directly a
    squared norm (a bare non-negative integer).
    """
    return Fraction(1, 1 + _norm_sq(n))


@lru_cache(maxsize=None)
def tadpole_sum(n: int, cut: int) -> Fraction:
    """One-loop tadpole ``sum_{p in [-cut, cut]^3} 1/(1 + n^2 + p.p)``, exact."""
    nsq = n * n
    return sum(
        (Fraction(c, 1 + nsq + s) for s, c in _square_items(cut, 3)),
        Fraction(0),
    )


def delta_m1(n_cut: int) -> Fraction:
    """First-order mass shift: the tadpole sum at zero external momentum."""
    return tadpole_sum(0, n_cut)


@lru_cache(maxsize=None)
def a1(n: int, aux_cut: int) -> Fraction:
    """Subtracted one-loop tadpole, exact and non-negative.

    ``a1(n) = sum_{p in [-aux_cut, aux_cut]^3} n^2 / ((n^2+p.p+1)(p.p+1))``,
    which equals ``delta_m1(aux_cut) - tadpole_sum(n, aux_cut)`` identically.
    ``a1(0) == 0`` and ``a1`` is nondecreasing in ``aux_cut``.
    """
    if n == 0:
        return Fraction(0)
    nsq = n * n
    return sum(
        (
            Fraction(c * nsq, (nsq + s + 1) * (s + 1))
            for s, c in _square_items(aux_cut, 3)
        ),
        Fraction(0),
    )


@lru_cache(maxsize=None)
def repeated_propagator_sum(n: int, cut: int) -> Fraction:
    """Two-fold line power ``sum_{p in box^3} 1/(1 + n^2 + p.p)^2``, exact."""
    nsq = n * n
    return sum(
        (Fraction(c, (1 + nsq + s) ** 2) for s, c in _square_items(cut, 3)),
        Fraction(0),
    )


def a2(n: int, aux_cut: int) -> Fraction:
    """Second-order same-colour subtracted tadpole, exact.

    The subtraction couples the inner insertion to the outer loop:
    ``a2(n) = -a1(n, aux_cut) * repeated_propagator_sum(n, aux_cut)``.
    ``a2(0) == 0``; the magnitude grows at most logarithmically in ``n``.
    """
    return -a1(n, aux_cut) * repeated_propagator_sum(n, aux_cut)


@lru_cache(maxsize=None)
def insertion_sum(n: int, p_box: int, aux_cut: int) -> Fraction:
    """``sum_{p in [-p_box, p_box]^3} a1(p_1, aux_cut) / (1 + n^2 + p.p)^2``.

    Exact.  This is the elementary block for cross-colour second-order sums:
    one subtracted tadpole riding on a doubled internal line.
    """
    nsq = n * n
    total = Fraction(0)
    for m in range(0, p_box + 1):
        weight = 1 if m == 0 else 2
        inner = a1(m, aux_cut)
        if inner == 0:
            continue
        msq = m * m
        block = sum(
            (
                Fraction(c, (1 + nsq + msq + s) ** 2)
                for s, c in _square_items(p_box, 2)
            ),
            Fraction(0),
        )
        total += weight * inner * block
    return total


def a2_cross(n: int, aux_cut: int) -> Fraction:
    """Second-order cross-colour subtracted tadpole, exact.

    Difference of insertion sums at zero and at ``n``; vanishes at ``n = 0``
    and grows at most logarithmically in ``n``.
    """
    return insertion_sum(0, aux_cut, aux_cut) - insertion_sum(n, aux_cut, aux_cut)


def delta_m2(n_cut: int, aux_cut: int) -> Fraction:
    """Second-order mass shift, exact.

    Three cross-colour channels of the insertion sum at zero external
    momentum, with the loop box at ``n_cut`` and the inner subtracted tadpole
    at ``aux_cut``.  ``delta_m2(0, aux) == 0`` since ``a1(0) == 0``.
    """
    return 3 * insertion_sum(0, n_cut, aux_cut)


def second_order_tadpole(n: int, n_cut: int, aux_cut: int) -> Fraction:
    """Unsubtracted-at-second-step combination ``s2``, exact.

    ``s2(n) = a1(n) * repeated_propagator_sum(n, n_cut)
    + 3 * insertion_sum(n, n_cut, aux_cut)``: the same-colour channel plus the
    three cross-colour channels, each already carrying the first-order
    subtraction.
    """
    return a1(n, aux_cut) * repeated_propagator_sum(n, n_cut) + 3 * insertion_sum(
        n, n_cut, aux_cut
    )


def r2(n: int, n_cut: int, aux_cut: int) -> Fraction:
    """Fully subtracted second-order two-point function, exact.

    ``r2(n) = delta_m2(n_cut, aux_cut) - s2(n)``; vanishes at ``n = 0``.  At a
    fully shared cutoff it coincides with ``a2(n) + 3 * a2_cross(n)``.
    """
    return delta_m2(n_cut, aux_cut) - second_order_tadpole(n, n_cut, aux_cut)


# ---------------------------------------------------------------------------
# Floating mirrors (for large cutoffs where exact arithmetic is wasteful)
# ---------------------------------------------------------------------------


def _inv_weights(nsq: int, cut: int, power: int = 1) -> np.ndarray:
    counts = square_counts(cut, 3)
    s = np.arange(counts.size, dtype=np.float64)
    return counts * (1.0 / (1.0 + nsq + s)) ** power


def tadpole_sum_float(n: int, cut: int) -> float:
    """Floating version of :func:`tadpole_sum`."""
    return float(_inv_weights(n * n, cut, 1).sum())


def a1_float(n: int, aux_cut: int) -> float:
    """Floating version of :func:`a1`."""
    if n == 0:
        return 0.0
    counts = square_counts(aux_cut, 3)
    s = np.arange(counts.size, dtype=np.float64)
    nsq = float(n * n)
    terms = counts * (nsq / ((nsq + s + 1.0) * (s + 1.0)))
    return float(terms.sum())


@lru_cache(maxsize=None)
def _a1_float_table_cached(n_max: int, aux_cut: int) -> tuple[float, ...]:
    counts = square_counts(aux_cut, 3)
    s = np.arange(counts.size, dtype=np.float64)
    out = [0.0]
    for n in range(1, n_max + 1):
        nsq = float(n * n)
        out.append(float((counts * (nsq / ((nsq + s + 1.0) * (s + 1.0)))).sum()))
    return tuple(out)


def a1_float_table(n_max: int, aux_cut: int) -> np.ndarray:
    """``a1(k, aux_cut)`` as floats for ``k = 0 .. n_max``."""
    return np.array(_a1_float_table_cached(n_max, aux_cut), dtype=np.float64)


def repeated_propagator_sum_float(n: int, cut: int) -> float:
    """Floating version of :func:`repeated_propagator_sum`."""
    return float(_inv_weights(n * n, cut, 2).sum())


def a1_growth_profile(ns: Sequence[int], aux_cut: int) -> np.ndarray:
    """``a1(n)/(1+n)`` for each ``n``: the linear-growth normalization."""
    return np.array(
        [a1_float(int(n), aux_cut) / (1.0 + int(n)) for n in ns], dtype=np.float64
    )


def a2_growth_profile(ns: Sequence[int], aux_cut: int) -> np.ndarray:
    """``|a2(n)| / log(1+n)`` for each ``n >= 1``: the log-growth normalization."""
    out = []
    for n in ns:
        n = int(n)
        if n < 1:
            raise ValueError("growth profile needs n >= 1")
        val = a1_float(n, aux_cut) * repeated_propagator_sum_float(n, aux_cut)
        out.append(abs(val) / math.log(1.0 + n))
    return np.array(out, dtype=np.float64)


def slice_weighted_sum(
    prop_power: int,
    tadpole_power: int,
    j: int,
    *,
    slice_ratio: int = 2,
    aux_cut: int = 128,
) -> float:
    """Sum of ``C(m)^a * beta(m)^b`` over the exact momentum slice ``j``.

    Here ``C(m) = 1/(1+|m|^2)`` over ``m in Z^4``, ``beta(m)`` is the sum of
    the four per-component subtracted tadpoles ``a1(m_c, aux_cut)``, ``a`` is
    ``prop_power`` and ``b`` is ``tadpole_power`` (0 or 1).  Slice ``j``
    collects ``M^(2(j-1)) < 1+|m|^2 <= M^(2j)`` (slice 1 takes everything
    below ``M^2``).  Shell decomposition in ``s = |m|^2`` keeps this linear in
    the slice width.
    """
    if tadpole_power not in (0, 1):
        raise ValueError("tadpole_power must be 0 or 1")
    if j < 1:
        raise ValueError("slice index must be >= 1")
    top = slice_ratio ** (2 * j) - 1
    lo = slice_ratio ** (2 * (j - 1)) - 1 if j > 1 else -1
    cut = math.isqrt(top)
    if tadpole_power == 0:
        shells = square_counts(cut, 4).astype(np.float64)
    else:
        r3 = square_counts(cut, 3).astype(np.float64)
        table = a1_float_table(cut, aux_cut)
        shells = np.zeros(top + 1 + r3.size, dtype=np.float64)
        for k in range(0, cut + 1):
            weight = (1.0 if k == 0 else 2.0) * table[k]
            if weight == 0.0:
                continue
            shells[k * k : k * k + r3.size] += weight * r3
        shells *= 4.0
    size = min(shells.size, top + 1)
    s = np.arange(size, dtype=np.float64)
    sel = s > lo
    vals = shells[:size][sel] * (1.0 / (1.0 + s[sel])) ** prop_power
    return float(vals.sum())


# ---------------------------------------------------------------------------
# Momentum grids and diagonal vectors
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def momentum_components(n_cut: int) -> np.ndarray:
    """Integer components of all box points, shape ``(dim, 4)``, row-major.

    The flattening convention is row-major in the four index factors, so the
    colour-1 component varies slowest.  Read-only.
    """
    side = 2 * n_cut + 1
    grid = np.indices((side,) * 4).reshape(4, -1).T - n_cut
    grid = np.ascontiguousarray(grid)
    grid.setflags(write=False)
    return grid


@lru_cache(maxsize=None)
def norm_sq_vector(n_cut: int) -> np.ndarray:
    """``|m|^2`` per grid point, aligned with :func:`momentum_components`."""
    comps = momentum_components(n_cut)
    out = (comps * comps).sum(axis=1)
    out.setflags(write=False)
    return out


def propagator_vector(n_cut: int) -> np.ndarray:
    """``C(m) = 1/(1+|m|^2)`` per grid point as floats."""
    return 1.0 / (1.0 + norm_sq_vector(n_cut).astype(np.float64))


def slice_interp_vector(
    n_cut: int, j: int | None, t: float, *, slice_ratio: int
) -> np.ndarray:
    """Per-point square-root-covariance interpolation factor.

    ``1`` on slices strictly below ``j``, ``t`` on slice ``j`` exactly, ``0``
    above; all ones when ``j is None`` (no slicing).  The factor multiplies
    ``C^(1/2)``, so the covariance itself interpolates quadratically in ``t``.
    """
    weight = 1 + norm_sq_vector(n_cut)
    if j is None:
        return np.ones(weight.size, dtype=np.float64)
    if j < 1:
        raise ValueError("slice index must be >= 1")
    upper = slice_ratio ** (2 * j)
    lower = slice_ratio ** (2 * (j - 1)) if j > 1 else 0
    out = np.zeros(weight.size, dtype=np.float64)
    out[weight <= lower] = 1.0
    out[(weight > lower) & (weight <= upper)] = float(t)
    return out


def beta_vector(config: ModelConfig, aux_cut: int | None = None) -> np.ndarray:
    """Componentwise sum of first-order subtracted tadpoles per grid point.

    ``beta(m) = sum_c a1(|m_c|, aux)``, evaluated from the exact table when
    the auxiliary cutoff is moderate and from floats beyond.
    """
    aux = config.effective_aux_cut if aux_cut is None else aux_cut
    if aux <= 64:
        table = np.array(
            [float(a1(k, aux)) for k in range(config.n_cut + 1)], dtype=np.float64
        )
    else:
        table = a1_float_table(config.n_cut, aux)
    comps = np.abs(momentum_components(config.n_cut))
    return table[comps].sum(axis=1)


def gamma_vector(config: ModelConfig, aux_cut: int | None = None) -> np.ndarray:
    """Componentwise sum of second-order subtracted two-point values.

    ``gamma(m) = sum_c r2(|m_c|, n_cut, aux)`` with the loop box at the model
    cutoff and the inner insertion at the auxiliary cutoff.
    """
    aux = config.effective_aux_cut if aux_cut is None else aux_cut
    table = np.array(
        [float(r2(k, config.n_cut, aux)) for k in range(config.n_cut + 1)],
        dtype=np.float64,
    )
    comps = np.abs(momentum_components(config.n_cut))
    return table[comps].sum(axis=1)


def mass_correction_diagonals(
    config: ModelConfig,
    j: int | None = None,
    t: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Diagonals of the first- and second-order mass-correction operators.

    First order: ``g * C_sliced(m) * beta(m)``; second order:
    ``g^2 * C_sliced(m) * gamma(m)``, where the slicing factor interpolates
    the square-root covariances (so the covariance carries the squared
    factor).  Returned as complex vectors aligned with the grid.
    """
    g = complex(config.coupling)
    fac = slice_interp_vector(config.n_cut, j, t, slice_ratio=config.slice_ratio)
    c_eff = propagator_vector(config.n_cut) * fac * fac
    d1 = g * c_eff * beta_vector(config)
    d2 = (g * g) * c_eff * gamma_vector(config)
    return d1.astype(np.complex128), d2.astype(np.complex128)


# ---------------------------------------------------------------------------
# Dense operator grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OperatorGrid:
    """A dense operator on the box Hilbert space ``(C^(2N+1))^(x4)``.

    ``matrix`` is complex, shape ``(dim, dim)`` with ``dim = (2N+1)^4`` in the
    row-major four-index basis of :func:`momentum_components`.
    """

    matrix: np.ndarray
    n_cut: int

    def __post_init__(self) -> None:
        dim = (2 * self.n_cut + 1) ** 4
        if self.matrix.shape != (dim, dim):
            raise ValueError(
                f"matrix shape {self.matrix.shape} does not match dim {dim}"
            )

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def dagger(self) -> "OperatorGrid":
        return OperatorGrid(self.matrix.conj().T, self.n_cut)

    def norm(self, tol: float = 1e-10) -> float:
        return operator_norm(self.matrix, tol=tol)

    def is_anti_hermitian(self, tol: float = 1e-10) -> bool:
        scale = max(1.0, float(np.abs(self.matrix).max()))
        return bool(np.abs(self.matrix + self.matrix.conj().T).max() <= tol * scale)


def operator_norm(matrix: np.ndarray, tol: float = 1e-10, max_iter: int = 20_000) -> float:
    """Largest singular value via power iteration on ``A* A``.

    Deterministic start vector; converges to relative tolerance ``tol`` on
    the squared norm.  Exact zero matrices return 0.
    """
    mat = np.asarray(matrix)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError("operator_norm expects a square matrix")
    n = mat.shape[0]
    if n == 0 or not np.any(mat):
        return 0.0
    rng = np.random.default_rng(20240811)
    vec = rng.normal(size=n) + 1j * rng.normal(size=n)
    vec /= np.linalg.norm(vec)
    prev = 0.0
    val = 0.0
    for _ in range(max_iter):
        image = mat @ vec
        val = float(np.real(np.vdot(image, image)))
        back = mat.conj().T @ image
        back_norm = np.linalg.norm(back)
        if back_norm == 0.0:
            return math.sqrt(val)
        vec = back / back_norm
        if abs(val - prev) <= tol * max(val, 1e-300):
            break
        prev = val
    return math.sqrt(val)


@lru_cache(maxsize=None)
def _embed_cache_key(n_cut: int, colour: int) -> tuple[int, int]:
    return (n_cut, colour)


def embed_colour(matrix: np.ndarray, colour: int, n_cut: int) -> np.ndarray:
    """Embed a one-index matrix as an operator acting on tensor factor ``colour``.

    ``colour`` runs over 1..4 and addresses the corresponding index of the
    row-major four-index basis.
    """
    if colour not in (1, 2, 3, 4):
        raise ValueError("colour must be in 1..4")
    side = 2 * n_cut + 1
    mat = np.asarray(matrix)
    if mat.shape != (side, side):
        raise ValueError(f"matrix must be {side}x{side} for n_cut={n_cut}")
    left = np.eye(side ** (colour - 1))
    right = np.eye(side ** (4 - colour))
    return np.kron(np.kron(left, mat), right)


def _check_hermitian(matrices: Sequence[np.ndarray], side: int) -> list[np.ndarray]:
    if len(matrices) != 4:
        raise ValueError("exactly four colourwise matrices are required")
    out = []
    for c, raw in enumerate(matrices, start=1):
        mat = np.asarray(raw, dtype=np.complex128)
        if mat.shape != (side, side):
            raise ValueError(
                f"colour {c}: shape {mat.shape} does not match side {side}"
            )
        scale = max(1.0, float(np.abs(mat).max()))
        if np.abs(mat - mat.conj().T).max() > 1e-10 * scale:
            raise ValueError(f"colour {c}: matrix is not Hermitian")
        out.append(mat)
    return out


def build_sigma_operator(
    sigmas: Sequence[np.ndarray],
    config: ModelConfig,
    *,
    j: int | None = None,
    t: float = 1.0,
    dim_cap: int = DEFAULT_DIM_CAP,
) -> OperatorGrid:
    """Embed four Hermitian one-index matrices as the interaction field.

    Returns ``i * lam * C_half sigma_hat C_half`` where ``sigma_hat`` is the
    sum of the colourwise embeddings and ``C_half`` is the (optionally sliced
    and ``t``-interpolated) square-root covariance.  The result is
    anti-Hermitian whenever the coupling is real and non-negative.
    """
    config.check_dim(dim_cap)
    side = 2 * config.n_cut + 1
    mats = _check_hermitian(sigmas, side)
    total = np.zeros((config.dim, config.dim), dtype=np.complex128)
    for colour, mat in enumerate(mats, start=1):
        total += embed_colour(mat, colour, config.n_cut)
    fac = slice_interp_vector(config.n_cut, j, t, slice_ratio=config.slice_ratio)
    half = np.sqrt(propagator_vector(config.n_cut)) * fac
    lam = config.lam
    matrix = (1j * lam) * (half[:, None] * total * half[None, :])
    return OperatorGrid(matrix, config.n_cut)


def resolvent_norm_bound(g: complex) -> float:
    """Cardioid norm guarantee ``2 / cos(arg(g) / 2)`` for the resolvent."""
    g = complex(g)
    if g == 0:
        return 2.0
    return 2.0 / math.cos(cmath.phase(g) / 2.0)


@dataclass(frozen=True)
class ResolventResult:
    """Resolvent grid together with its audited operator norm."""

    grid: OperatorGrid
    norm: float
    bound: float


def _interaction_matrix(
    sigma_grid: OperatorGrid,
    config: ModelConfig,
    j: int | None,
    t: float,
) -> np.ndarray:
    d1, d2 = mass_correction_diagonals(config, j, t)
    mat = sigma_grid.matrix.copy()
    idx = np.arange(mat.shape[0])
    mat[idx, idx] += d1 + d2
    return mat


def resolvent(
    sigma: "OperatorGrid | Sequence[np.ndarray]",
    config: ModelConfig,
    *,
    j: int | None = None,
    t: float = 1.0,
) -> ResolventResult:
    """Invert ``1 - (Sigma + D1 + D2)`` and audit the cardioid norm bound.

    Raises :class:`InvariantViolation` if the inversion is singular or the
    resulting norm exceeds ``2 / cos(arg(g)/2)`` beyond rounding slack, and
    :class:`ValueError` if the coupling is outside the cardioid domain.
    """
    g = complex(config.coupling)
    if not in_cardioid(g, config.rho):
        raise ValueError("coupling is outside the cardioid domain")
    if isinstance(sigma, OperatorGrid):
        sigma_grid = sigma
    else:
        sigma_grid = build_sigma_operator(sigma, config, j=j, t=t)
    u_mat = _interaction_matrix(sigma_grid, config, j, t)
    eye = np.eye(u_mat.shape[0], dtype=np.complex128)
    try:
        res = np.linalg.solve(eye - u_mat, eye)
    except np.linalg.LinAlgError as exc:
        raise InvariantViolation(
            "resolvent is singular: 1 - U is not invertible"
        ) from exc
    norm = operator_norm(res)
    bound = resolvent_norm_bound(g)
    if norm > bound + 1e-8:
        raise InvariantViolation(
            f"resolvent norm {norm:.12g} exceeds the cardioid bound {bound:.12g}"
        )
    return ResolventResult(OperatorGrid(res, config.n_cut), norm, bound)


# ---------------------------------------------------------------------------
# Logarithm remainder and the order->=3 interaction
# ---------------------------------------------------------------------------


def tr_log3(matrix: np.ndarray) -> complex:
    """``Tr[log(1-U) + U + U^2/2]`` via eigenvalues, with domain audit.

    Raises :class:`InvariantViolation` when the spectral radius reaches 1, in
    which case the principal logarithm is no longer guaranteed.
    """
    mat = np.asarray(matrix, dtype=np.complex128)
    evals = np.linalg.eigvals(mat)
    radius = float(np.abs(evals).max()) if evals.size else 0.0
    if radius >= 1.0 - 1e-14:
        raise InvariantViolation(
            f"spectral radius {radius:.12g} reaches 1: log remainder undefined"
        )
    return complex(np.sum(np.log1p(-evals) + evals + evals * evals / 2.0))


def tr_log3_series(matrix: np.ndarray, *, norm_limit: float = 0.9) -> complex:
    """Power-series evaluation ``-sum_{k>=3} Tr[U^k]/k``.

    Requires the operator norm below ``norm_limit`` (explicit failure
    otherwise; no silent fallback).  Used to cross-check :func:`tr_log3`.
    """
    mat = np.asarray(matrix, dtype=np.complex128)
    norm = operator_norm(mat)
    if norm >= norm_limit:
        raise ValueError(
            f"series evaluation needs operator norm < {norm_limit}, got {norm:.6g}"
        )
    power = mat @ mat @ mat
    total = 0.0 + 0.0j
    k = 3
    while True:
        term = complex(np.trace(power)) / k
        total -= term
        tail_scale = norm ** (k + 1) / max(1e-300, (k + 1) * (1.0 - norm))
        if tail_scale * mat.shape[0] < 1e-16 * max(1.0, abs(total)):
            break
        power = power @ mat
        k += 1
        if k > 10_000:
            raise RuntimeError("series for the log remainder failed to converge")
    return total


def eval_v_ge3(
    sigmas: "OperatorGrid | Sequence[np.ndarray]",
    j: int,
    t_j: float,
    config: ModelConfig,
) -> complex:
    """Order->=3 interaction remainder at scale ``j`` and interpolation ``t_j``.

    ``Tr log3(1 - U) + Tr[D1 Sigma^2] + Tr[D2^3/3 .. ]``-type corrections:
    explicitly, the remainder is the log tail plus ``Tr[D1 Sigma^2]`` plus
    ``Tr[D1^3/3 + D1^2 D2 + D1^4/4]``, everything evaluated with the sliced,
    ``t``-interpolated covariance.
    """
    if isinstance(sigmas, OperatorGrid):
        sigma_grid = sigmas
    else:
        sigma_grid = build_sigma_operator(sigmas, config, j=j, t=t_j)
    d1, d2 = mass_correction_diagonals(config, j, t_j)
    u_mat = _interaction_matrix(sigma_grid, config, j, t_j)
    log_tail = tr_log3(u_mat)
    smat = sigma_grid.matrix
    sigma_sq_diag = np.einsum("ij,ji->i", smat, smat)
    quad = complex(np.sum(d1 * sigma_sq_diag))
    vac = complex(np.sum(d1**3) / 3.0 + np.sum(d1 * d1 * d2) + np.sum(d1**4) / 4.0)
    return log_tail + quad + vac


# ---------------------------------------------------------------------------
# Convergent loop vertices and quartic bound data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UVertexReport:
    """The twelve convergent loop-vertex values plus audit diagnostics.

    ``vertices`` maps labels ``"0a","0b","0c","1a","1b","2a".."2e","3a","4a"``
    to complex values.  ``quartic_ratio`` reports the remainder magnitude
    divided by the rho-weighted vertex combination (informational, not
    asserted).
    """

    vertices: Mapping[str, complex]
    quartic_ratio: float | None
    v_ge3: complex


def _slice_exact_indicator(n_cut: int, j: int, slice_ratio: int) -> np.ndarray:
    weight = 1 + norm_sq_vector(n_cut)
    upper = slice_ratio ** (2 * j)
    lower = slice_ratio ** (2 * (j - 1)) if j > 1 else 0
    return ((weight > lower) & (weight <= upper)).astype(np.float64)


def _d_conv_leq(config: ModelConfig, j: int | None) -> complex:
    d1, d2 = mass_correction_diagonals(config, j, 1.0)
    d_sum = d1 + d2
    total = (
        np.sum(d2**3) / 3.0
        + np.sum(d1 * d2 * d2)
        + (np.sum(d_sum**4) - np.sum(d1**4)) / 4.0
    )
    return complex(total)


def eval_u_vertices(
    sigmas: "OperatorGrid | Sequence[np.ndarray]",
    j: int,
    config: ModelConfig,
    *,
    t: float = 1.0,
) -> UVertexReport:
    """Evaluate the twelve convergent loop vertices at scale ``j``.

    Each vertex is a trace of mass-correction diagonals, slice-``j``
    projectors and embedded field factors, normalized by the power of ``|g|``
    that renders it order-one.  The two manifestly positive vertices (the
    quartic one, and the doubled-mass one when the coupling is real and
    non-negative) are audited for nonnegative real values.
    """
    g = complex(config.coupling)
    abs_g = abs(g)
    if abs_g == 0:
        raise ValueError("loop-vertex normalizations require a nonzero coupling")
    if isinstance(sigmas, OperatorGrid):
        sigma_grid = sigmas
    else:
        sigma_grid = build_sigma_operator(sigmas, config, j=j, t=t)
    d1, d2 = mass_correction_diagonals(config, j, t)
    d_sum = d1 + d2
    ind = _slice_exact_indicator(config.n_cut, j, config.slice_ratio)
    smat = sigma_grid.matrix
    sstar = smat.conj().T

    abs_sq = sstar @ smat  # |Sigma|^2
    diag_abs_sq = np.real_if_close(np.einsum("ii->i", abs_sq), tol=0)
    diag_sigma = np.einsum("ii->i", smat)
    sigma_sq_diag = np.einsum("ij,ji->i", smat, smat)
    sigma_cube_diag = np.einsum("ij,jk,ki->i", smat, smat, smat)

    def diag_trace(vector: np.ndarray) -> complex:
        return complex(np.sum(vector))

    vertices: dict[str, complex] = {}
    vertices["0a"] = diag_trace(d_sum**6 * ind) / abs_g**6
    vertices["0b"] = diag_trace(d_sum**5 * ind) / abs_g**5
    vertices["0c"] = (
        _d_conv_leq(config, j) - _d_conv_leq(config, j - 1 if j > 1 else None)
    ) / abs_g**5
    if j == 1:
        # below slice 1 there is no residual scale: the telescoped value is
        # the full expression at slice 1 minus zero
        vertices["0c"] = _d_conv_leq(config, 1) / abs_g**5
    vertices["1a"] = complex(np.sum(d_sum**2 * ind * diag_sigma)) / abs_g**2.5
    vertices["1b"] = complex(np.sum(d_sum**3 * ind * diag_sigma)) / abs_g**3.5
    vertices["2a"] = complex(np.sum(d_sum**2 * ind * diag_abs_sq)) / abs_g**3
    vertices["2b"] = (
        complex(np.einsum("i,ki,k,ki->", d_sum**2, sstar, ind, smat.T))
    ) / abs_g**3
    vertices["2c"] = complex(np.sum(d_sum**4 * ind * diag_abs_sq)) / abs_g**5
    vertices["2d"] = complex(np.sum(d2 * ind * diag_abs_sq)) / abs_g**3
    vertices["2e"] = (
        complex(np.einsum("i,ki,k,ki->", d2, sstar, ind, smat.T))
    ) / abs_g**3
    vertices["3a"] = complex(np.sum(ind * sigma_cube_diag)) / abs_g**1.5
    quartic = abs_sq @ abs_sq
    vertices["4a"] = complex(np.sum(np.einsum("ii->i", quartic) * ind)) / abs_g**2

    tol = 1e-9 * max(1.0, abs(vertices["4a"]))
    if vertices["4a"].real < -tol or abs(vertices["4a"].imag) > tol:
        raise InvariantViolation(
            f"quartic loop vertex must be real nonnegative, got {vertices['4a']}"
        )
    if g.imag == 0 and g.real >= 0:
        tol2 = 1e-9 * max(1.0, abs(vertices["2a"]))
        if vertices["2a"].real < -tol2 or abs(vertices["2a"].imag) > tol2:
            raise InvariantViolation(
                f"doubled-mass loop vertex must be real nonnegative for real "
                f"coupling, got {vertices['2a']}"
            )

    v_value = eval_v_ge3(sigma_grid, j, t, config)
    rho = config.rho
    combo = (
        rho**2 * abs(vertices["4a"])
        + rho**1.5 * abs(vertices["3a"])
        + rho**3 * sum(abs(vertices[k]) for k in ("2a", "2b", "2c", "2d", "2e"))
        + rho**2.5 * (abs(vertices["1a"]) + abs(vertices["1b"]))
        + rho**5 * sum(abs(vertices[k]) for k in ("0a", "0b", "0c"))
    )
    ratio = abs(v_value) / combo if combo > 0 else None
    return UVertexReport(vertices=vertices, quartic_ratio=ratio, v_ge3=v_value)


# ---------------------------------------------------------------------------
# The quadratic-form kernel Q
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QOperator:
    """Blocks of the quadratic-form kernel on colourwise matrix space.

    The kernel acts on quadruples of ``side x side`` matrices.  Its colour
    diagonal block is diagonal in the matrix indices with entries
    ``q0(m, n) + g * q12_diag(m, n)``; its colour off-diagonal block is
    supported on matrix-diagonal pairs with entries
    ``q11(m, p) + g * q12_cross(m, p)``.  Entries are exact rationals when
    built in box mode and floats in slice mode (recorded by ``exact``).
    """

    n_cut: int
    aux_cut: int
    j: int | None
    slice_ratio: int
    exact: bool
    q0: Mapping[tuple[int, int], "Fraction | float"]
    q12_diag: Mapping[tuple[int, int], "Fraction | float"]
    q11_cross: Mapping[tuple[int, int], "Fraction | float"]
    q12_cross: Mapping[tuple[int, int], "Fraction | float"]

    @property
    def side(self) -> int:
        return 2 * self.n_cut + 1

    @property
    def dim(self) -> int:
        """Dimension of the flattened quadratic-form space: 4 * side^2."""
        return 4 * self.side * self.side

    def index(self, colour: int, m: int, n: int) -> int:
        side = self.side
        return ((colour - 1) * side + (m + self.n_cut)) * side + (n + self.n_cut)

    def entry(
        self, colour: int, colour2: int, m: int, n: int, p: int, q: int, g: complex = 0
    ) -> complex:
        """Kernel entry ``(colour, mn; colour2, pq)`` at coupling ``g``."""
        if colour == colour2:
            if m == p and n == q:
                return complex(self.q0[(m, n)]) + complex(g) * complex(
                    self.q12_diag[(m, n)]
                )
            return 0j
        if m == n and p == q:
            return complex(self.q11_cross[(m, p)]) + complex(g) * complex(
                self.q12_cross[(m, p)]
            )
        return 0j

    def dense_block(self, name: str, g: complex = 0) -> np.ndarray:
        """Dense matrix of a named block over the ``4 side^2`` space.

        Names: ``q0`` (colour-diagonal bare), ``q11`` (cross bare),
        ``q12_diag``/``q12_cross`` (first-correction parts), ``tilde1``
        (``Re(g) q11 + Re(g^2) (q12_diag + q12_cross)``), ``q01``
        (``q0 + q11``), ``full`` (everything at coupling ``g``).
        """
        side = self.side
        dim = self.dim
        out = np.zeros((dim, dim), dtype=np.complex128)
        rng = range(-self.n_cut, self.n_cut + 1)
        g = complex(g)

        def add_diag(table, factor):
            for c in range(1, 5):
                for m in rng:
                    for n in rng:
                        i = self.index(c, m, n)
                        out[i, i] += factor * complex(table[(m, n)])

        def add_cross(table, factor):
            for c in range(1, 5):
                for c2 in range(1, 5):
                    if c == c2:
                        continue
                    for m in rng:
                        for p in rng:
                            i = self.index(c, m, m)
                            k = self.index(c2, p, p)
                            out[i, k] += factor * complex(table[(m, p)])

        if name == "q0":
            add_diag(self.q0, 1.0)
        elif name == "q11":
            add_cross(self.q11_cross, 1.0)
        elif name == "q12_diag":
            add_diag(self.q12_diag, 1.0)
        elif name == "q12_cross":
            add_cross(self.q12_cross, 1.0)
        elif name == "tilde1":
            add_cross(self.q11_cross, g.real)
            gg = g * g
            add_diag(self.q12_diag, gg.real)
            add_cross(self.q12_cross, gg.real)
        elif name == "q01":
            add_diag(self.q0, 1.0)
            add_cross(self.q11_cross, 1.0)
        elif name == "full":
            add_diag(self.q0, 1.0)
            add_diag(self.q12_diag, g)
            add_cross(self.q11_cross, 1.0)
            add_cross(self.q12_cross, g)
        else:
            raise ValueError(f"unknown block name {name!r}")
        return out

    def trace(self, g: complex = 0) -> complex:
        """Trace of the full kernel at coupling ``g`` (cross blocks are traceless)."""
        rng = range(-self.n_cut, self.n_cut + 1)
        tot = 0j
        for m in rng:
            for n in rng:
                tot += complex(self.q0[(m, n)]) + complex(g) * complex(
                    self.q12_diag[(m, n)]
                )
        return 4 * tot

    def trace_exact_q0(self) -> Fraction:
        """Exact trace of the bare colour-diagonal block (box mode only)."""
        if not self.exact:
            raise ValueError("exact trace is only available for box-mode kernels")
        rng = range(-self.n_cut, self.n_cut + 1)
        tot = Fraction(0)
        for m in rng:
            for n in rng:
                tot += self.q0[(m, n)]
        return 4 * tot


def _exact_a1_table(n_max: int, aux: int) -> list[Fraction]:
    return [a1(k, aux) for k in range(n_max + 1)]


def _build_q_exact(config: ModelConfig) -> dict:
    """Box-mode kernel blocks, everything an exact rational."""
    cut = config.n_cut
    aux = config.effective_aux_cut
    n_rng = range(-cut, cut + 1)
    items3 = _square_items(cut, 3)
    items2 = _square_items(cut, 2)
    items1 = _square_items(cut, 1)
    table = _exact_a1_table(cut, aux)

    q0: dict[tuple[int, int], Fraction] = {}
    q12_diag: dict[tuple[int, int], Fraction] = {}
    for m in n_rng:
        for n in n_rng:
            msq, nsq = m * m, n * n
            am = table[abs(m)]
            bare = Fraction(0)
            corr = Fraction(0)
            for s3, cnt in items3:
                wm = 1 + msq + s3
                wn = 1 + nsq + s3
                bare += Fraction(cnt, wm * wn)
                corr += am * Fraction(cnt, wm * wm * wn)
            for k in range(0, cut + 1):
                ak = table[k]
                if ak == 0:
                    continue
                wk = 1 if k == 0 else 2
                ksq = k * k
                for s2, cnt in items2:
                    wm = 1 + msq + ksq + s2
                    wn = 1 + nsq + ksq + s2
                    corr += 3 * ak * Fraction(wk * cnt, wm * wm * wn)
            q0[(m, n)] = bare
            q12_diag[(m, n)] = 2 * corr

    q11: dict[tuple[int, int], Fraction] = {}
    q12_cross: dict[tuple[int, int], Fraction] = {}
    for m in n_rng:
        for p in n_rng:
            base = m * m + p * p
            a_ext = table[abs(m)] + table[abs(p)]
            bare = Fraction(0)
            corr = Fraction(0)
            for s2, cnt in items2:
                w = 1 + base + s2
                bare += Fraction(cnt, w * w)
                corr += a_ext * Fraction(cnt, w * w * w)
            for k in range(0, cut + 1):
                ak = table[k]
                if ak == 0:
                    continue
                wk = 1 if k == 0 else 2
                ksq = k * k
                for s1, cnt in items1:
                    w = 1 + base + ksq + s1
                    corr += 2 * ak * Fraction(wk * cnt, w * w * w)
            q11[(m, p)] = bare
            q12_cross[(m, p)] = 2 * corr
    return {
        "q0": q0,
        "q12_diag": q12_diag,
        "q11_cross": q11,
        "q12_cross": q12_cross,
    }


def _build_q_float(config: ModelConfig, j: int) -> dict:
    """Slice-mode kernel blocks: per-line weights capped, float entries."""
    top = config.slice_ratio ** (2 * j)
    cut = math.isqrt(top - 1) if top > 1 else 0
    aux = config.effective_aux_cut
    n_rng = range(-config.n_cut, config.n_cut + 1)
    table = a1_float_table(cut, aux)

    r3 = square_counts(cut, 3).astype(np.float64)
    s3 = np.arange(r3.size, dtype=np.float64)
    r2_arr = square_counts(cut, 2).astype(np.float64)
    s2 = np.arange(r2_arr.size, dtype=np.float64)
    r1 = square_counts(cut, 1).astype(np.float64)
    s1 = np.arange(r1.size, dtype=np.float64)

    q0: dict[tuple[int, int], float] = {}
    q12_diag: dict[tuple[int, int], float] = {}
    for m in n_rng:
        for n in n_rng:
            msq, nsq = float(m * m), float(n * n)
            wm = 1.0 + msq + s3
            wn = 1.0 + nsq + s3
            mask = (wm <= top) & (wn <= top)
            q0[(m, n)] = float((r3[mask] / (wm[mask] * wn[mask])).sum())
            corr = float(
                table[abs(m)]
                * (r3[mask] / (wm[mask] ** 2 * wn[mask])).sum()
            )
            for k in range(0, cut + 1):
                ak = table[k]
                if ak == 0.0:
                    continue
                wk = 1.0 if k == 0 else 2.0
                base = 1.0 + k * k
                wm2 = base + msq + s2
                wn2 = base + nsq + s2
                mask2 = (wm2 <= top) & (wn2 <= top)
                corr += (
                    3.0
                    * ak
                    * wk
                    * (r2_arr[mask2] / (wm2[mask2] ** 2 * wn2[mask2])).sum()
                )
            q12_diag[(m, n)] = 2.0 * corr

    q11: dict[tuple[int, int], float] = {}
    q12_cross: dict[tuple[int, int], float] = {}
    for m in n_rng:
        for p in n_rng:
            base = float(m * m + p * p)
            w = 1.0 + base + s2
            mask = w <= top
            q11[(m, p)] = float((r2_arr[mask] / w[mask] ** 2).sum())
            corr = float(
                (table[abs(m)] + table[abs(p)])
                * (r2_arr[mask] / w[mask] ** 3).sum()
            )
            for k in range(0, cut + 1):
                ak = table[k]
                if ak == 0.0:
                    continue
                wk = 1.0 if k == 0 else 2.0
                w1 = 1.0 + base + k * k + s1
                mask1 = w1 <= top
                corr += 2.0 * ak * wk * (r1[mask1] / w1[mask1] ** 3).sum()
            q12_cross[(m, p)] = 2.0 * corr
    return {
        "q0": q0,
        "q12_diag": q12_diag,
        "q11_cross": q11,
        "q12_cross": q12_cross,
    }


def build_q(
    config: ModelConfig,
    j: int | None = None,
    *,
    dim_cap: int = DEFAULT_DIM_CAP,
    mem_cap_bytes: int = 1 << 28,
) -> QOperator:
    """Assemble the quadratic-form kernel blocks.

    Box mode (``j is None``): internal momenta run over the model box and all
    entries are exact rationals.  Slice mode: every internal line weight is
    capped at ``slice_ratio^(2 j)`` with the loop range widened accordingly,
    and entries are floats.

    Dense assembly of the kernel needs ``(4 side^2)^2`` complex entries; the
    build is rejected with a size report when that exceeds ``mem_cap_bytes``.
    """
    config.check_dim(dim_cap)
    side = 2 * config.n_cut + 1
    dense_bytes = (4 * side * side) ** 2 * 16
    if dense_bytes > mem_cap_bytes:
        raise MemoryError(
            f"dense kernel would need {dense_bytes} bytes "
            f"({4 * side * side}^2 complex entries) exceeding the cap "
            f"{mem_cap_bytes}; lower n_cut or raise mem_cap_bytes"
        )
    if j is None:
        blocks = _build_q_exact(config)
        exact = True
    else:
        if j < 1:
            raise ValueError("slice index must be >= 1")
        blocks = _build_q_float(config, j)
        exact = False
    return QOperator(
        n_cut=config.n_cut,
        aux_cut=config.effective_aux_cut,
        j=j,
        slice_ratio=config.slice_ratio,
        exact=exact,
        **blocks,
    )


def q_slice_stats(j: int, config: ModelConfig) -> dict:
    """Trace, operator norm and trace-square of the bare kernel slice ``j``.

    The slice kernel is the telescoped difference of the bare colour-diagonal
    kernel with both internal lines capped at ``slice_ratio^(2 j)`` versus
    ``2 (j-1)``; external indices run over the full sliced lattice (no model
    box), which is what makes the trace grow with the slice.  Returns floats
    always, plus an exact rational trace when the slice is small enough for
    that to be cheap.
    """
    if j < 1:
        raise ValueError("slice index must be >= 1")
    ratio = config.slice_ratio
    top = ratio ** (2 * j) - 1  # max allowed |line weight| - 1
    prev_top = ratio ** (2 * (j - 1)) - 1 if j > 1 else -1
    cut_ext = math.isqrt(top)
    cut_int = math.isqrt(top)

    r3 = square_counts(cut_int, 3).astype(np.float64)
    size = min(r3.size, top + 1)
    s_vals = np.arange(size, dtype=np.float64)
    u_vals = np.array([u * u for u in range(cut_ext + 1)], dtype=np.float64)

    def p_matrix(limit: int) -> np.ndarray:
        """P[u_idx, s] = theta(1 + u + s <= limit + 1) / (1 + u + s)."""
        if limit < 0:
            return np.zeros((u_vals.size, size))
        weight = 1.0 + u_vals[:, None] + s_vals[None, :]
        mat = np.where(weight <= limit + 1, 1.0 / weight, 0.0)
        return mat

    p_hi = p_matrix(top)
    p_lo = p_matrix(prev_top)
    w_r3 = r3[:size]
    # kernel over distinct squared external values
    k_hi = (p_hi * w_r3[None, :]) @ p_hi.T
    k_lo = (p_lo * w_r3[None, :]) @ p_lo.T
    k_slice = k_hi - k_lo

    mult = np.array([1.0 if u == 0 else 2.0 for u in range(cut_ext + 1)])
    trace = 4.0 * float(mult @ k_slice @ mult)
    trace_sq = 4.0 * float(mult @ (k_slice * k_slice) @ mult)
    op_norm = float(np.abs(k_slice).max())

    trace_exact: Fraction | None = None
    if top <= 1100:
        items3 = _square_items(cut_int, 3)

        def t_profile(limit: int, s: int) -> Fraction:
            if limit < 0:
                return Fraction(0)
            total = Fraction(0)
            m = 0
            while m * m + s <= limit:
                weight = 1 if m == 0 else 2
                total += Fraction(weight, 1 + m * m + s)
                m += 1
            return total

        acc = Fraction(0)
        for s, cnt in items3:
            if s > top:
                break
            hi = t_profile(top, s)
            lo = t_profile(prev_top, s)
            acc += cnt * (hi * hi - lo * lo)
        trace_exact = 4 * acc

    return {
        "j": j,
        "slice_ratio": ratio,
        "trace": trace,
        "trace_exact": trace_exact,
        "op_norm": op_norm,
        "trace_sq": trace_sq,
    }
