"""Forest and jungle combinatorics with exact interpolation formulas.

Implements the Taylor forest machinery used to rewrite partition functions as
sums over forests of interpolated, positivity-preserving covariances:

* labelled tree / two-level tree enumeration (Pruefer coding);
* weakening matrices ``X(w)_ab = min of w along the forest path`` (positive
  semidefinite for all ``w in [0,1]^E``) and their entrywise squares;
* the exact forest interpolation identity for polynomial functionals, with
  rational sector-decomposed simplex integrals;
* set-partition (chain-rule) enumeration and the determinant minors bounded
  by one that weight the anticommuting sector.

Everything combinatorial is exact; only the weakening matrices offer a float
path for property testing.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .core import InvariantViolation

__all__ = [
    "Forest",
    "TwoLevelTree",
    "Jungle",
    "enumerate_trees",
    "enumerate_two_level_trees",
    "enumerate_forests",
    "weakening_matrix",
    "hadamard_square",
    "forest_formula",
    "set_partitions",
    "bell_number",
    "faa_di_bruno",
    "grassmann_factor",
]

#: Enumeration guard: labelled tree counts grow like n^(n-2).
DEFAULT_TREE_CAP = 8


def _validate_edges(n_vertices: int, edges: Sequence[tuple[int, int]]) -> tuple:
    seen = set()
    norm = []
    parent = list(range(n_vertices))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in edges:
        if not (0 <= a < n_vertices and 0 <= b < n_vertices):
            raise ValueError(f"edge ({a},{b}) out of range for {n_vertices} vertices")
        if a == b:
            raise ValueError("self-loops are not allowed in a forest")
        key = (min(a, b), max(a, b))
        if key in seen:
            raise ValueError(f"duplicate edge {key}")
        seen.add(key)
        ra, rb = find(a), find(b)
        if ra == rb:
            raise ValueError("edges contain a cycle; not a forest")
        parent[ra] = rb
        norm.append(key)
    return tuple(norm)


@dataclass(frozen=True)
class Forest:
    """An acyclic simple graph on vertices ``0..n_vertices-1``."""

    n_vertices: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "edges", _validate_edges(self.n_vertices, self.edges)
        )

    @property
    def is_spanning_tree(self) -> bool:
        return len(self.edges) == self.n_vertices - 1

    def adjacency(self) -> dict[int, list[tuple[int, int]]]:
        """vertex -> list of (neighbour, edge index)."""
        adj: dict[int, list[tuple[int, int]]] = {v: [] for v in range(self.n_vertices)}
        for idx, (a, b) in enumerate(self.edges):
            adj[a].append((b, idx))
            adj[b].append((a, idx))
        return adj

    def path_edges(self, a: int, b: int) -> tuple[int, ...] | None:
        """Edge indices along the unique path, or None if disconnected."""
        if a == b:
            return ()
        adj = self.adjacency()
        prev: dict[int, tuple[int, int]] = {a: (-1, -1)}
        stack = [a]
        while stack:
            v = stack.pop()
            if v == b:
                break
            for w, idx in adj[v]:
                if w not in prev:
                    prev[w] = (v, idx)
                    stack.append(w)
        if b not in prev:
            return None
        out = []
        v = b
        while v != a:
            v, idx = prev[v]
            out.append(idx)
        return tuple(reversed(out))


@dataclass(frozen=True)
class TwoLevelTree:
    """A spanning tree whose edges carry a level marker 1 or 2.

    Level-1 edges interpolate the plain weakening matrix; level-2 edges
    interpolate its entrywise square.  The union of the two levels is the
    spanning tree itself.
    """

    n_vertices: int
    edges: tuple[tuple[int, int], ...]
    levels: tuple[int, ...]

    def __post_init__(self) -> None:
        edges = _validate_edges(self.n_vertices, self.edges)
        object.__setattr__(self, "edges", edges)
        if len(self.levels) != len(edges):
            raise ValueError("one level marker per edge is required")
        if any(level not in (1, 2) for level in self.levels):
            raise ValueError("levels must be 1 or 2")
        if len(edges) != self.n_vertices - 1:
            raise ValueError("a two-level tree must span all vertices")

    @property
    def union_tree(self) -> Forest:
        return Forest(self.n_vertices, self.edges)

    def level_forest(self, level: int) -> Forest:
        picked = tuple(
            e for e, marker in zip(self.edges, self.levels) if marker == level
        )
        return Forest(self.n_vertices, picked)

    def weight_selector(self, edge_index: int) -> str:
        """``"linear"`` for level-1 edges, ``"squared"`` for level-2 edges."""
        return "linear" if self.levels[edge_index] == 1 else "squared"


@dataclass(frozen=True)
class Jungle:
    """A two-level tree whose vertices carry integer scale attributions.

    The level-1 forest partitions the vertices into field blocks; a block in
    which two vertices share the same scale has zero weight (the hardcore
    constraint), which forces the sum of scales within a block of size ``b``
    to be at least ``b (b+1) / 2`` when scales are positive integers.
    """

    tree: TwoLevelTree
    scales: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.scales) != self.tree.n_vertices:
            raise ValueError("one scale per vertex is required")
        if any(s < 1 for s in self.scales):
            raise ValueError("scales are positive integers")

    def field_blocks(self) -> list[tuple[int, ...]]:
        forest = self.tree.level_forest(1)
        parent = list(range(forest.n_vertices))

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for a, b in forest.edges:
            parent[find(a)] = find(b)
        groups: dict[int, list[int]] = {}
        for v in range(forest.n_vertices):
            groups.setdefault(find(v), []).append(v)
        return [tuple(g) for g in groups.values()]

    def hardcore_allowed(self) -> bool:
        """False when a field block repeats a scale (zero-weight jungle)."""
        for block in self.field_blocks():
            seen = [self.scales[v] for v in block]
            if len(set(seen)) != len(seen):
                return False
        return True

    def min_scale_sum(self) -> int:
        """Lower bound on the block scale sums forced by the hardcore rule."""
        total = 0
        for block in self.field_blocks():
            b = len(block)
            total += b * (b + 1) // 2
        return total


def _pruefer_to_edges(seq: Sequence[int], n: int) -> tuple[tuple[int, int], ...]:
    degree = [1] * n
    for v in seq:
        degree[v] += 1
    edges = []
    import heapq

    leaves = [v for v in range(n) if degree[v] == 1]
    heapq.heapify(leaves)
    for v in seq:
        leaf = heapq.heappop(leaves)
        edges.append((min(leaf, v), max(leaf, v)))
        degree[v] -= 1
        if degree[v] == 1:
            heapq.heappush(leaves, v)
    a = heapq.heappop(leaves)
    b = heapq.heappop(leaves)
    edges.append((min(a, b), max(a, b)))
    return tuple(edges)


def enumerate_trees(n: int, cap: int = DEFAULT_TREE_CAP) -> list[Forest]:
    """All labelled trees on ``n`` vertices (``n^(n-2)`` of them).

    ``n = 1`` yields the single empty tree.  Refuses ``n > cap`` since the
    count grows superexponentially.
    """
    if n < 1:
        raise ValueError("need at least one vertex")
    if n > cap:
        raise ValueError(f"tree enumeration capped at {cap} vertices, got {n}")
    if n == 1:
        return [Forest(1, ())]
    if n == 2:
        return [Forest(2, ((0, 1),))]
    out = []
    for seq in itertools.product(range(n), repeat=n - 2):
        out.append(Forest(n, _pruefer_to_edges(seq, n)))
    return out


def enumerate_two_level_trees(n: int, cap: int = DEFAULT_TREE_CAP) -> list[TwoLevelTree]:
    """All two-level trees on ``n`` vertices: ``2^(n-1) n^(n-2)`` of them."""
    out = []
    for tree in enumerate_trees(n, cap):
        k = len(tree.edges)
        if k == 0:
            continue
        for marking in itertools.product((1, 2), repeat=k):
            out.append(TwoLevelTree(n, tree.edges, marking))
    if n == 1:
        return []
    return out


def enumerate_forests(n: int) -> list[Forest]:
    """All forests (acyclic edge subsets of the complete graph) on ``n`` vertices."""
    if n < 1:
        raise ValueError("need at least one vertex")
    if n > 7:
        raise ValueError("forest enumeration capped at 7 vertices")
    all_edges = [(a, b) for a in range(n) for b in range(a + 1, n)]
    out = []
    for k in range(0, n):
        for subset in itertools.combinations(all_edges, k):
            try:
                out.append(Forest(n, subset))
            except ValueError:
                continue
    return out


def weakening_matrix(
    forest: Forest, w: "Mapping[int, float] | Sequence[float]"
) -> np.ndarray:
    """``X_ab = min w over the forest path``; 0 when disconnected; 1 on the diagonal.

    ``w`` assigns a weight in ``[0, 1]`` to each forest edge, by index.
    The result is positive semidefinite for every such ``w``.
    """
    if isinstance(w, Mapping):
        weights = [float(w[i]) for i in range(len(forest.edges))]
    else:
        weights = [float(x) for x in w]
    if len(weights) != len(forest.edges):
        raise ValueError("one weight per forest edge is required")
    if any(x < 0.0 or x > 1.0 for x in weights):
        raise ValueError("weights must lie in [0, 1]")
    n = forest.n_vertices
    out = np.zeros((n, n), dtype=np.float64)
    np.fill_diagonal(out, 1.0)
    for a in range(n):
        for b in range(a + 1, n):
            path = forest.path_edges(a, b)
            if path is None:
                continue
            val = min(weights[i] for i in path) if path else 1.0
            out[a, b] = out[b, a] = val
    return out


def hadamard_square(matrix: np.ndarray) -> np.ndarray:
    """Entrywise square (preserves positive semidefiniteness)."""
    mat = np.asarray(matrix)
    return mat * mat


# ---------------------------------------------------------------------------
# Exact forest interpolation for polynomials
# ---------------------------------------------------------------------------
#
# A polynomial in the off-diagonal symmetric variables x_ab (a < b) is a
# mapping {monomial: coefficient} where a monomial is a sorted tuple of (a, b)
# pairs with repetition recording powers, e.g. ((0,1), (0,1), (2,3)) for
# x_01^2 x_23.  Coefficients are rationals (or ints).

Monomial = tuple[tuple[int, int], ...]
Polynomial = Mapping[Monomial, "Fraction | int"]


def _normalize_poly(poly: Polynomial, n: int) -> dict[Monomial, Fraction]:
    if not isinstance(poly, Mapping):
        raise ValueError(
            "the interpolation identity is evaluated exactly and only accepts "
            "polynomial data (a mapping monomial -> coefficient)"
        )
    out: dict[Monomial, Fraction] = {}
    for mono, coeff in poly.items():
        pairs = []
        for pair in mono:
            a, b = pair
            if a == b or not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"bad variable pair {pair!r}")
            pairs.append((min(a, b), max(a, b)))
        key = tuple(sorted(pairs))
        out[key] = out.get(key, Fraction(0)) + Fraction(coeff)
    return out


def _derivative(poly: dict[Monomial, Fraction], pair: tuple[int, int]) -> dict:
    out: dict[Monomial, Fraction] = {}
    for mono, coeff in poly.items():
        k = mono.count(pair)
        if k == 0:
            continue
        reduced = list(mono)
        reduced.remove(pair)
        key = tuple(reduced)
        out[key] = out.get(key, Fraction(0)) + coeff * k
    return out


def _sector_integral(
    mono: Monomial, forest: Forest, order: Sequence[int]
) -> Fraction | None:
    """Integral of the monomial at the weakened matrix over one sector.

    ``order`` lists forest-edge indices with ``w`` increasing; the value is
    ``prod_i 1/(d_1 + ... + d_i + i)`` with ``d_i`` the power routed to the
    ``i``-th smallest edge.  Returns None when the monomial vanishes (a
    disconnected pair).
    """
    position = {edge: i for i, edge in enumerate(order)}
    tallies = [0] * len(order)
    for pair in mono:
        a, b = pair
        path = forest.path_edges(a, b)
        if path is None:
            return None
        if not path:
            continue
        smallest = min(path, key=position.__getitem__)
        tallies[position[smallest]] += 1
    value = Fraction(1)
    running = 0
    for i, d in enumerate(tallies, start=1):
        running += d
        value *= Fraction(1, running + i)
    return value


def forest_formula(poly: Polynomial, n: int) -> dict:
    """Exact forest-interpolation identity for a polynomial functional.

    Returns ``{"total": Fraction, "reference": Fraction, "per_forest": {...}}``
    where ``total`` sums, over all forests on ``n`` vertices, the iterated
    ``w``-integral of the forest derivative evaluated on the weakened matrix,
    and ``reference`` is the direct evaluation at the all-ones matrix.  The
    identity asserts ``total == reference``; both are returned so callers can
    check it exactly.
    """
    normal = _normalize_poly(poly, n)
    reference = sum(normal.values(), Fraction(0))
    per_forest: dict[tuple, Fraction] = {}
    total = Fraction(0)
    for forest in enumerate_forests(n):
        deriv = dict(normal)
        for pair in forest.edges:
            deriv = _derivative(deriv, pair)
            if not deriv:
                break
        if not deriv:
            continue
        k = len(forest.edges)
        contribution = Fraction(0)
        if k == 0:
            # empty forest: evaluate at the identity matrix (off-diag zero)
            contribution = deriv.get((), Fraction(0))
        else:
            for order in itertools.permutations(range(k)):
                for mono, coeff in deriv.items():
                    sector = _sector_integral(mono, forest, order)
                    if sector is not None:
                        contribution += coeff * sector
        if contribution:
            per_forest[forest.edges] = contribution
            total += contribution
    return {"total": total, "reference": reference, "per_forest": per_forest}


# ---------------------------------------------------------------------------
# Set partitions and determinant minors
# ---------------------------------------------------------------------------


def set_partitions(items: Sequence) -> Iterator[list[tuple]]:
    """All partitions of ``items`` into nonempty blocks (Bell-many)."""
    items = list(items)
    if not items:
        yield []
        return
    head, rest = items[0], items[1:]
    for partial in set_partitions(rest):
        for i in range(len(partial)):
            yield partial[:i] + [tuple([head, *partial[i]])] + partial[i + 1 :]
        yield [(head,)] + partial


def bell_number(k: int) -> int:
    """Number of set partitions of a ``k``-element set."""
    if k < 0:
        raise ValueError("k must be >= 0")
    row = [1]
    for _ in range(k):
        new = [row[-1]]
        for value in row:
            new.append(new[-1] + value)
        row = new
    return row[0]


def faa_di_bruno(items: Sequence) -> list[list[tuple]]:
    """Chain-rule partition list for iterated derivatives of a composition.

    Returns every partition of the derivative labels ``items``; the caller
    attaches one inner-derivative factor per block.  The length of the list
    is the Bell number of ``len(items)``.
    """
    return list(set_partitions(items))


def grassmann_factor(
    matrix: np.ndarray,
    deleted_rows: Sequence[int] = (),
    deleted_cols: Sequence[int] = (),
    *,
    tol: float = 1e-9,
) -> float:
    """Minor of a PSD, unit-diagonal matrix with rows/cols deleted.

    This is the anticommuting-integral weight attached to a jungle: a
    determinant of the (possibly non-principal) submatrix obtained by
    deleting ``deleted_rows`` from the rows and ``deleted_cols`` from the
    columns.  Rejects non-PSD or non-unit-diagonal input; audits the
    guaranteed bound ``|minor| <= 1``.
    """
    mat = np.asarray(matrix, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError("a square matrix is required")
    if np.abs(np.diag(mat) - 1.0).max() > tol:
        raise ValueError("the matrix must have unit diagonal")
    if np.abs(mat - mat.T).max() > tol:
        raise ValueError("the matrix must be symmetric")
    eigs = np.linalg.eigvalsh((mat + mat.T) / 2.0)
    if eigs.min() < -tol:
        raise ValueError(
            f"the matrix must be positive semidefinite (min eigenvalue {eigs.min():.3g})"
        )
    if len(deleted_rows) != len(deleted_cols):
        raise ValueError("must delete equally many rows and columns")
    n = mat.shape[0]
    keep_r = [i for i in range(n) if i not in set(deleted_rows)]
    keep_c = [i for i in range(n) if i not in set(deleted_cols)]
    sub = mat[np.ix_(keep_r, keep_c)]
    value = float(np.linalg.det(sub)) if sub.size else 1.0
    if abs(value) > 1.0 + 1e-9:
        raise InvariantViolation(
            f"minor {value:.12g} exceeds the unit bound for PSD unit-diagonal input"
        )
    return value
