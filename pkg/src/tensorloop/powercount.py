"""Multiscale power counting for loop-vertex maps and stranded graphs.

This module covers four related tools:

* scale attributions over the corners of a loop-vertex map, with one marked
  top-scale corner per vertex;
* the sharp amplitude bound (per-corner decay times per-face cost) and its
  weakening that factorizes over vertices, splitting non-local face costs
  half-and-half;
* an exhaustive single-vertex face tracer that regenerates, per vertex class
  and tadpole count, the worst-case face-cost catalogue, encoded here as
  machine-readable tables;
* a per-line spare-decay criterion for stranded vacuum graphs (the reciprocal
  face lengths through any line must not exceed 23/12) together with an
  exhaustive vacuum-graph enumerator, and slice-scaling probes that fit the
  decay exponents of concrete loop-vertex families.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import Counter
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .core import COLOURS, InvariantViolation
from .lattice import square_counts
from .maps import ColouredMap, TensorGraph, faces, tensor_faces

__all__ = [
    "ScaleAttribution",
    "uniform_attribution",
    "random_attribution",
    "FaceCost",
    "FaceCostReport",
    "amplitude_bound",
    "VertexClass",
    "VERTEX_CLASSES",
    "FaceRow",
    "TadpoleCase",
    "VertexCostTable",
    "vertex_weight_tables",
    "leg_pairings",
    "trace_vertex_faces",
    "pattern_report",
    "worst_face_cost",
    "worst_reports",
    "achievable_case",
    "vertex_weight",
    "quartic_worst_by_tadpoles",
    "scale_dominates",
    "scale_max",
    "SPARE_LIMIT",
    "SpareReport",
    "melonic_insertion_lines",
    "spare_check",
    "vacuum_graphs",
    "tensor_graph_to_json",
    "tensor_graph_from_json",
    "ProbeFamily",
    "ProbeResult",
    "scaling_probe",
    "u1_pair_family",
    "u3_pair_family",
    "flat_family",
    "slice_window",
]


# ---------------------------------------------------------------------------
# Scale attributions on loop-vertex maps
# ---------------------------------------------------------------------------
#
# A corner of a map is named by the dart it follows, so corner ids coincide
# with dart ids; a vertex of degree r carries r corners.  An attribution gives
# every corner a slice index, with one marked corner per vertex holding that
# vertex's top scale; no other corner of the vertex may exceed it.


@dataclass(frozen=True)
class ScaleAttribution:
    """Per-corner slice indices with one immutable top corner per vertex."""

    chart: ColouredMap
    scales: tuple[tuple[int, int], ...]
    marked: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        scales = tuple(sorted((int(d), int(j)) for d, j in dict(self.scales).items()))
        marked = tuple(sorted((int(v), int(d)) for v, d in dict(self.marked).items()))
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "marked", marked)
        darts = set(self.chart.darts)
        got = {d for d, _ in scales}
        if got != darts:
            raise ValueError("exactly one scale per corner is required")
        if any(j < 0 for _, j in scales):
            raise ValueError("slice indices must be non-negative")
        if {v for v, _ in marked} != set(range(self.chart.n_vertices)):
            raise ValueError("exactly one marked corner per vertex is required")
        table = dict(scales)
        for v, d in marked:
            if d not in self.chart.vertex_rotations[v]:
                raise ValueError(f"marked corner {d} does not belong to vertex {v}")
            top = table[d]
            for other in self.chart.vertex_rotations[v]:
                if table[other] > top:
                    raise ValueError(
                        f"corner {other} exceeds the top scale {top} of vertex {v}"
                    )

    def scale(self, dart: int) -> int:
        return dict(self.scales)[dart]

    def vertex_scale(self, vertex: int) -> int:
        return self.scale(dict(self.marked)[vertex])

    def as_dict(self) -> dict[int, int]:
        return dict(self.scales)

    def with_scale(self, dart: int, j: int) -> "ScaleAttribution":
        """A copy with one unmarked corner rescaled (the marked one is fixed)."""
        table = dict(self.scales)
        if dart not in table:
            raise KeyError(dart)
        if dart in {d for _, d in self.marked} and j != table[dart]:
            raise ValueError("the marked corner scale is immutable")
        table[dart] = j
        return replace(self, scales=tuple(sorted(table.items())))


def uniform_attribution(chart: ColouredMap, j: int) -> ScaleAttribution:
    """Every corner at slice ``j``; the first corner of each vertex is marked."""
    scales = {d: j for d in chart.darts}
    marked = {v: rot[0] for v, rot in enumerate(chart.vertex_rotations)}
    return ScaleAttribution(chart, tuple(scales.items()), tuple(marked.items()))


def random_attribution(chart: ColouredMap, rng, j_max: int) -> ScaleAttribution:
    """A random valid attribution with top scales drawn up to ``j_max``."""
    scales: dict[int, int] = {}
    marked: dict[int, int] = {}
    for v, rot in enumerate(chart.vertex_rotations):
        top = int(rng.integers(0, j_max + 1))
        pick = int(rng.integers(0, len(rot)))
        marked[v] = rot[pick]
        for d in rot:
            scales[d] = top if d == rot[pick] else int(rng.integers(0, top + 1))
    return ScaleAttribution(chart, tuple(scales.items()), tuple(marked.items()))


# ---------------------------------------------------------------------------
# Sharp and factorized amplitude bounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FaceCost:
    """One closed face: its corners, incident vertices, and minimum scales."""

    corners: tuple[int, ...]
    vertices: tuple[int, ...]
    local: bool
    min_scale: int
    vertex_min: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class FaceCostReport:
    """Both amplitude bounds for one map and attribution.

    ``sharp_exponent`` is the exponent of the per-face-minimum bound;
    ``factorized_exponent`` replaces each non-local face cost by half the
    per-vertex minimum on every incident vertex, which factorizes the bound
    over vertices (``vertex_weights`` holds the per-vertex exponents).
    """

    faces: tuple[FaceCost, ...]
    sharp_exponent: Fraction
    factorized_exponent: Fraction
    vertex_weights: tuple[Fraction, ...]
    ratio: int

    @property
    def sharp(self) -> float:
        return float(self.ratio) ** float(self.sharp_exponent)

    @property
    def factorized(self) -> float:
        return float(self.ratio) ** float(self.factorized_exponent)


def amplitude_bound(
    chart: ColouredMap, attribution: ScaleAttribution, ratio: int = 2
) -> FaceCostReport:
    """Sharp and vertex-factorized scaling bounds for a closed map.

    The sharp exponent sums ``-2 j(corner)`` over corners plus the minimum
    scale along each face; the factorized exponent keeps local faces intact
    and charges every vertex incident to a non-local face half its own
    minimum.  The former never exceeds the latter.
    """
    if attribution.chart != chart:
        raise ValueError("the attribution was built for a different map")
    if chart.external_darts:
        raise ValueError("amplitude bounds require a closed map")
    if any(not rot for rot in chart.vertex_rotations):
        raise ValueError("every vertex needs at least one corner")
    if ratio < 2:
        raise ValueError("the slice ratio must be at least 2")
    scales = attribution.as_dict()
    alpha = chart._alpha()
    dart_vertex = {d: v for v, rot in enumerate(chart.vertex_rotations) for d in rot}

    face_costs: list[FaceCost] = []
    for cycle in faces(chart).closed:
        corners = tuple(alpha[d] for d in cycle)
        verts = tuple(sorted({dart_vertex[c] for c in corners}))
        per_vertex = tuple(
            (v, min(scales[c] for c in corners if dart_vertex[c] == v)) for v in verts
        )
        face_costs.append(
            FaceCost(
                corners=corners,
                vertices=verts,
                local=len(verts) == 1,
                min_scale=min(scales[c] for c in corners),
                vertex_min=per_vertex,
            )
        )

    corner_term = -2 * sum(scales.values())
    sharp = Fraction(corner_term + sum(f.min_scale for f in face_costs))
    weights = [Fraction(-2) * sum(scales[d] for d in rot) for rot in chart.vertex_rotations]
    for f in face_costs:
        if f.local:
            weights[f.vertices[0]] += f.min_scale
        else:
            for v, m in f.vertex_min:
                weights[v] += Fraction(m, 2)
    factorized = sum(weights, Fraction(0))
    if sharp > factorized:
        raise InvariantViolation(
            f"sharp exponent {sharp} exceeds the factorized exponent {factorized}"
        )
    return FaceCostReport(
        faces=tuple(face_costs),
        sharp_exponent=sharp,
        factorized_exponent=factorized,
        vertex_weights=tuple(weights),
        ratio=ratio,
    )


# ---------------------------------------------------------------------------
# Single-vertex face tracing per vertex class
# ---------------------------------------------------------------------------
#
# A vertex class is a cyclic layout of corner positions ("corner"), pinned
# insertion positions ("pinned", index-conserving, carrying the lowest scale)
# and field legs ("leg:<k>" with an abstract colour id).  A Wick pattern pairs
# some same-colour legs into tadpoles and leaves the rest open.  Strands of a
# leg colour are cut at each of its legs and glued through tadpole pairs;
# strands of the remaining colours close around the whole vertex.
#
# Costs are symbolic vectors over ordered scales (index 0 is the top scale):
# a closed face contributes 1 at the lowest rank it traverses, an open chain
# contributes 1/2 there.  Vectors are compared in the cone of non-increasing
# non-negative scale sequences, where u dominates v iff every prefix sum of
# u - v is non-negative.


ScaleVector = tuple[Fraction, ...]


@dataclass(frozen=True)
class VertexClass:
    """Cyclic layout of corners, pinned insertions, and coloured legs."""

    name: str
    layout: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "layout", tuple(self.layout))
        for entry in self.layout:
            if entry not in ("corner", "pinned") and not entry.startswith("leg:"):
                raise ValueError(f"unknown layout entry {entry!r}")
        if self.corner_count < 1:
            raise ValueError("a vertex class needs at least one corner")
        ids = self.colour_ids
        if ids != tuple(range(len(ids))):
            raise ValueError("leg colour ids must be 0, 1, ... in first-use order")
        if len(ids) > len(COLOURS):
            raise ValueError("at most four distinct leg colours")

    @property
    def corner_count(self) -> int:
        return sum(1 for e in self.layout if e == "corner")

    @property
    def token_positions(self) -> tuple[int, ...]:
        return tuple(i for i, e in enumerate(self.layout) if e in ("corner", "pinned"))

    @property
    def leg_positions(self) -> tuple[tuple[int, int], ...]:
        out = []
        for i, e in enumerate(self.layout):
            if e.startswith("leg:"):
                out.append((i, int(e.split(":")[1])))
        return tuple(out)

    @property
    def colour_ids(self) -> tuple[int, ...]:
        seen: list[int] = []
        for _, c in self.leg_positions:
            if c not in seen:
                seen.append(c)
        return tuple(seen)

    @property
    def spectator_count(self) -> int:
        return len(COLOURS) - len(self.colour_ids)


def _quartic(name: str, colours: Sequence[int]) -> VertexClass:
    layout: list[str] = []
    for c in colours:
        layout += ["corner", f"leg:{c}"]
    return VertexClass(name, tuple(layout))


VERTEX_CLASSES: Mapping[str, VertexClass] = {
    cls.name: cls
    for cls in (
        _quartic("quartic_same", (0, 0, 0, 0)),
        _quartic("quartic_three_one", (0, 0, 0, 1)),
        _quartic("quartic_pairs_adjacent", (0, 0, 1, 1)),
        _quartic("quartic_pairs_alternating", (0, 1, 0, 1)),
        _quartic("quartic_pair_singles_adjacent", (0, 0, 1, 2)),
        _quartic("quartic_pair_singles_alternating", (0, 1, 0, 2)),
        _quartic("quartic_distinct", (0, 1, 2, 3)),
        _quartic("cubic_same", (0, 0, 0)),
        _quartic("cubic_pair", (0, 0, 1)),
        _quartic("cubic_distinct", (0, 1, 2)),
        VertexClass("quadratic_same", ("corner", "leg:0", "corner", "pinned", "leg:0")),
        VertexClass(
            "quadratic_distinct", ("corner", "leg:0", "corner", "pinned", "leg:1")
        ),
        VertexClass("linear", ("corner", "pinned", "leg:0")),
    )
}


def leg_pairings(cls: VertexClass, tadpoles: int) -> list[tuple[tuple[int, int], ...]]:
    """All ways to pair ``tadpoles`` disjoint same-colour leg pairs."""
    if tadpoles < 0:
        raise ValueError("tadpole count must be non-negative")
    legs = cls.leg_positions
    colour_of = dict(legs)
    positions = [p for p, _ in legs]

    out: set[tuple[tuple[int, int], ...]] = set()

    def extend(chosen: list[tuple[int, int]], free: list[int]) -> None:
        if len(chosen) == tadpoles:
            out.add(tuple(sorted(chosen)))
            return
        for a, b in itertools.combinations(free, 2):
            if colour_of[a] != colour_of[b]:
                continue
            rest = [p for p in free if p not in (a, b)]
            extend(chosen + [(min(a, b), max(a, b))], rest)

    extend([], positions)
    return sorted(out)


@dataclass(frozen=True)
class VertexFace:
    """One strand piece at the vertex: its colour and token positions."""

    colour: int | None
    closed: bool
    tokens: tuple[int, ...]


def trace_vertex_faces(
    cls: VertexClass, pairing: Iterable[tuple[int, int]]
) -> tuple[VertexFace, ...]:
    """Strand pieces of every colour for one Wick pattern.

    Tadpole pairs glue the segment ending at one leg to the segment starting
    at the other (the enclosed side of an adjacent pair closes on itself);
    open legs terminate their chains.  Colours absent from the legs close one
    face through every corner and pinned position.
    """
    pairs = [tuple(p) for p in pairing]
    colour_of = dict(cls.leg_positions)
    for a, b in pairs:
        if colour_of.get(a) is None or colour_of.get(b) is None:
            raise ValueError("pairings must reference leg positions")
        if colour_of[a] != colour_of[b]:
            raise ValueError("only same-colour legs can pair")
    flat = [p for pair in pairs for p in pair]
    if len(set(flat)) != len(flat):
        raise ValueError("a leg can belong to at most one pair")
    partner = {a: b for a, b in pairs} | {b: a for a, b in pairs}
    n = len(cls.layout)
    tokens_all = cls.token_positions

    out: list[VertexFace] = []
    for colour in cls.colour_ids:
        legs = [p for p, c in cls.leg_positions if c == colour]
        # segments of this colour: tokens strictly between consecutive legs
        segments: list[tuple[int, int, tuple[int, ...]]] = []
        for i, start in enumerate(legs):
            end = legs[(i + 1) % len(legs)]
            toks = []
            pos = (start + 1) % n
            while pos != end:
                if cls.layout[pos] in ("corner", "pinned"):
                    toks.append(pos)
                pos = (pos + 1) % n
            segments.append((start, end, tuple(toks)))
        by_start = {s: i for i, (s, _, _) in enumerate(segments)}
        succ: dict[int, int | None] = {}
        for i, (_, end, _) in enumerate(segments):
            mate = partner.get(end)
            succ[i] = by_start[mate] if mate is not None else None
        visited: set[int] = set()
        # open chains start at segments whose start leg is unpaired
        for i, (start, _, _) in enumerate(segments):
            if start in partner or i in visited:
                continue
            chain: list[int] = []
            cur: int | None = i
            while cur is not None and cur not in visited:
                visited.add(cur)
                chain.extend(segments[cur][2])
                cur = succ[cur]
            out.append(VertexFace(colour, False, tuple(chain)))
        # the rest closes into cycles
        for i in range(len(segments)):
            if i in visited:
                continue
            cycle: list[int] = []
            cur = i
            while cur not in visited:
                visited.add(cur)
                cycle.extend(segments[cur][2])
                nxt = succ[cur]
                assert nxt is not None
                cur = nxt
            out.append(VertexFace(colour, True, tuple(cycle)))
    for _ in range(cls.spectator_count):
        out.append(VertexFace(None, True, tokens_all))
    return tuple(out)


@dataclass(frozen=True)
class FaceRow:
    """One face of the worst pattern: colour class, locality, local length, cost."""

    colour: int | None
    local: bool
    length: int
    cost: ScaleVector


def _zero(r: int) -> ScaleVector:
    return tuple(Fraction(0) for _ in range(r))


def _unit(r: int, rank: int, half: bool = False) -> ScaleVector:
    w = Fraction(1, 2) if half else Fraction(1)
    return tuple(w if i == rank else Fraction(0) for i in range(r))


def _vec_add(u: ScaleVector, v: ScaleVector) -> ScaleVector:
    return tuple(a + b for a, b in zip(u, v))


def scale_dominates(u: ScaleVector, v: ScaleVector) -> bool:
    """Whether ``u . j >= v . j`` for every non-increasing scale sequence."""
    total = Fraction(0)
    for a, b in zip(u, v):
        total += a - b
        if total < 0:
            return False
    return True


def scale_max(vectors: Iterable[ScaleVector]) -> ScaleVector:
    """The unique vector dominating all others; raised if none does."""
    pool = list(vectors)
    if not pool:
        raise ValueError("no vectors to maximize")
    for u in pool:
        if all(scale_dominates(u, v) for v in pool):
            return u
    raise InvariantViolation("no candidate dominates the whole pool")


def pattern_report(
    cls: VertexClass,
    pairing: Iterable[tuple[int, int]],
    assignment: Sequence[int],
) -> tuple[ScaleVector, tuple[FaceRow, ...]]:
    """Cost vector and per-face rows for one pattern and scale assignment.

    ``assignment`` permutes scale ranks (0 = top) over the corner positions in
    layout order; pinned positions always carry the lowest rank.
    """
    r = cls.corner_count
    corners = [i for i, e in enumerate(cls.layout) if e == "corner"]
    ranks = list(assignment)
    if sorted(ranks) != list(range(r)):
        raise ValueError("the assignment must permute the ranks 0..r-1")
    rank_of = {pos: ranks[k] for k, pos in enumerate(corners)}
    for i, e in enumerate(cls.layout):
        if e == "pinned":
            rank_of[i] = r - 1
    total = _zero(r)
    rows: list[FaceRow] = []
    for face in trace_vertex_faces(cls, pairing):
        if not face.tokens:
            raise InvariantViolation("a strand piece traversed no position")
        low = max(rank_of[t] for t in face.tokens)
        cost = _unit(r, low, half=not face.closed)
        total = _vec_add(total, cost)
        rows.append(FaceRow(face.colour, face.closed, len(face.tokens), cost))
    return total, tuple(rows)


def _all_reports(
    cls: VertexClass, tadpoles: int
) -> list[tuple[ScaleVector, tuple[FaceRow, ...]]]:
    r = cls.corner_count
    out = []
    for pairing in leg_pairings(cls, tadpoles):
        for assignment in itertools.permutations(range(r)):
            out.append(pattern_report(cls, pairing, assignment))
    return out


def worst_face_cost(cls: VertexClass, tadpoles: int) -> ScaleVector:
    """The dominant total face cost over all patterns and assignments."""
    reports = _all_reports(cls, tadpoles)
    if not reports:
        raise ValueError(f"{cls.name} admits no pattern with {tadpoles} tadpoles")
    return scale_max([vec for vec, _ in reports])


def worst_reports(cls: VertexClass, tadpoles: int) -> list[tuple[FaceRow, ...]]:
    """Distinct face-row multisets achieving the dominant cost."""
    reports = _all_reports(cls, tadpoles)
    best = scale_max([vec for vec, _ in reports])
    seen: set[tuple] = set()
    out = []
    for vec, rows in reports:
        if vec != best:
            continue
        key = tuple(sorted(Counter(rows).items(), key=repr))
        if key not in seen:
            seen.add(key)
            out.append(rows)
    return out


def achievable_case(
    cls: VertexClass, tadpoles: int, rows: Iterable[FaceRow]
) -> bool:
    """Whether some pattern and assignment realizes exactly these face rows."""
    want = Counter(rows)
    return any(Counter(r) == want for _, r in _all_reports(cls, tadpoles))


def vertex_weight(cls: VertexClass, tadpoles: int) -> ScaleVector:
    """Worst face cost minus the two powers of decay per corner scale.

    Pinned insertions keep their own decay out of this ledger, so the value
    is the full vertex weight only for classes without pinned positions.
    """
    r = cls.corner_count
    return _vec_add(worst_face_cost(cls, tadpoles), tuple(Fraction(-2) for _ in range(r)))


# ---------------------------------------------------------------------------
# Encoded worst-cost tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TadpoleCase:
    tadpoles: int
    label: str
    rows: tuple[FaceRow, ...]


@dataclass(frozen=True)
class VertexCostTable:
    """Face catalogue of one vertex class.

    ``common_rows`` hold the faces present for every pattern; each case adds
    the faces of one pairing shape.  ``worst_by_tadpoles`` gives the dominant
    total cost per tadpole count, and the two headline fields split it into
    the with-tadpole and tadpole-free worst cases.
    """

    vertex_class: str
    common_rows: tuple[FaceRow, ...]
    cases: tuple[TadpoleCase, ...]
    worst_by_tadpoles: tuple[tuple[int, ScaleVector], ...]
    worst_with_tadpole: ScaleVector | None
    worst_without: ScaleVector

    def case_total(self, case: TadpoleCase) -> ScaleVector:
        total = _zero(len(self.worst_without))
        for row in self.common_rows + case.rows:
            total = _vec_add(total, row.cost)
        return total


def _F(*nums) -> ScaleVector:
    return tuple(Fraction(x) for x in nums)


def _row(colour, local, length, *cost) -> FaceRow:
    return FaceRow(colour, local, length, tuple(Fraction(x) for x in cost))


_H = Fraction(1, 2)


def vertex_weight_tables() -> dict[str, VertexCostTable]:
    """The encoded worst-cost face catalogue for every vertex class."""
    t: dict[str, VertexCostTable] = {}

    t["quartic_same"] = VertexCostTable(
        "quartic_same",
        common_rows=(
            _row(None, True, 4, 0, 0, 0, 1),
            _row(None, True, 4, 0, 0, 0, 1),
            _row(None, True, 4, 0, 0, 0, 1),
        ),
        cases=(
            TadpoleCase(
                2,
                "parallel",
                (
                    _row(0, True, 1, 1, 0, 0, 0),
                    _row(0, True, 1, 0, 1, 0, 0),
                    _row(0, True, 2, 0, 0, 0, 1),
                ),
            ),
            TadpoleCase(2, "crossed", (_row(0, True, 4, 0, 0, 0, 1),)),
            TadpoleCase(
                1,
                "adjacent",
                (
                    _row(0, True, 1, 1, 0, 0, 0),
                    _row(0, False, 1, 0, _H, 0, 0),
                    _row(0, False, 2, 0, 0, 0, _H),
                ),
            ),
            TadpoleCase(
                1,
                "opposite",
                (_row(0, False, 2, 0, _H, 0, 0), _row(0, False, 2, 0, 0, 0, _H)),
            ),
            TadpoleCase(
                0,
                "",
                (
                    _row(0, False, 1, _H, 0, 0, 0),
                    _row(0, False, 1, 0, _H, 0, 0),
                    _row(0, False, 1, 0, 0, _H, 0),
                    _row(0, False, 1, 0, 0, 0, _H),
                ),
            ),
        ),
        worst_by_tadpoles=(
            (2, _F(1, 1, 0, 4)),
            (1, _F(1, _H, 0, Fraction(7, 2))),
            (0, _F(_H, _H, _H, Fraction(7, 2))),
        ),
        worst_with_tadpole=_F(1, 1, 0, 4),
        worst_without=_F(_H, _H, _H, Fraction(7, 2)),
    )

    t["quartic_three_one"] = VertexCostTable(
        "quartic_three_one",
        common_rows=(
            _row(None, True, 4, 0, 0, 0, 1),
            _row(None, True, 4, 0, 0, 0, 1),
            _row(1, False, 4, 0, 0, 0, _H),
        ),
        cases=(
            TadpoleCase(
                1,
                "adjacent",
                (_row(0, True, 1, 1, 0, 0, 0), _row(0, False, 3, 0, 0, 0, _H)),
            ),
            # the wide pairing closes around the lone off-colour leg: one
            # local length-2 face plus a two-token chain (regenerated by the
            # tracer; a two-chain structure is not realizable here)
            TadpoleCase(
                1,
                "wide",
                (_row(0, True, 2, 0, 1, 0, 0), _row(0, False, 2, 0, 0, 0, _H)),
            ),
            TadpoleCase(
                0,
                "",
                (
                    _row(0, False, 1, _H, 0, 0, 0),
                    _row(0, False, 1, 0, _H, 0, 0),
                    _row(0, False, 2, 0, 0, 0, _H),
                ),
            ),
        ),
        worst_by_tadpoles=((1, _F(1, 0, 0, 3)), (0, _F(_H, _H, 0, 3))),
        worst_with_tadpole=_F(1, 0, 0, 3),
        worst_without=_F(_H, _H, 0, 3),
    )

    t["quartic_pairs_adjacent"] = VertexCostTable(
        "quartic_pairs_adjacent",
        common_rows=(
            _row(None, True, 4, 0, 0, 0, 1),
            _row(None, True, 4, 0, 0, 0, 1),
        ),
        cases=(
            TadpoleCase(
                2,
                "",
                (
                    _row(0, True, 1, 1, 0, 0, 0),
                    _row(0, True, 3, 0, 0, 0, 1),
                    _row(1, True, 1, 0, 1, 0, 0),
                    _row(1, True, 3, 0, 0, 0, 1),
                ),
            ),
            TadpoleCase(
                1,
                "",
                (
                    _row(0, True, 1, 1, 0, 0, 0),
                    _row(0, True, 3, 0, 0, 0, 1),
                    _row(1, False, 1, 0, _H, 0, 0),
                    _row(1, False, 3, 0, 0, 0, _H),
                ),
            ),
            TadpoleCase(
                0,
                "",
                (
                    _row(0, False, 1, _H, 0, 0, 0),
                    _row(0, False, 3, 0, 0, 0, _H),
                    _row(1, False, 1, 0, _H, 0, 0),
                    _row(1, False, 3, 0, 0, 0, _H),
                ),
            ),
        ),
        worst_by_tadpoles=(
            (2, _F(1, 1, 0, 4)),
            (1, _F(1, _H, 0, Fraction(7, 2))),
            (0, _F(_H, _H, 0, 3)),
        ),
        worst_with_tadpole=_F(1, 1, 0, 4),
        worst_without=_F(_H, _H, 0, 3),
    )

    t["quartic_pairs_alternating"] = VertexCostTable(
        "quartic_pairs_alternating",
        common_rows=(
            _row(None, True, 4, 0, 0, 0, 1),
            _row(None, True, 4, 0, 0, 0, 1),
        ),
        cases=(
            TadpoleCase(
                2,
                "",
                (
                    _row(0, True, 2, 0, 1, 0, 0),
                    _row(0, True, 2, 0, 0, 0, 1),
                    _row(1, True, 2, 0, 0, 1, 0),
                    _row(1, True, 2, 0, 0, 0, 1),
                ),
            ),
            TadpoleCase(
                1,
                "",
                (
                    _row(0, True, 2, 0, 1, 0, 0),
                    _row(0, True, 2, 0, 0, 0, 1),
                    _row(1, False, 2, 0, 0, _H, 0),
                    _row(1, False, 2, 0, 0, 0, _H),
                ),
            ),
            TadpoleCase(
                0,
                "",
                (
                    _row(0, False, 2, 0, _H, 0, 0),
                    _row(0, False, 2, 0, 0, 0, _H),
                    _row(1, False, 2, 0, 0, _H, 0),
                    _row(1, False, 2, 0, 0, 0, _H),
                ),
            ),
        ),
        worst_by_tadpoles=(
            (2, _F(0, 1, 1, 4)),
            (1, _F(0, 1, _H, Fraction(7, 2))),
            (0, _F(0, _H, _H, 3)),
        ),
        worst_with_tadpole=_F(0, 1, 1, 4),
        worst_without=_F(0, _H, _H, 3),
    )

    t["quartic_pair_singles_adjacent"] = VertexCostTable(
        "quartic_pair_singles_adjacent",
        common_rows=(
            _row(None, True, 4, 0, 0, 0, 1),
            _row(1, False, 4, 0, 0, 0, _H),
            _row(2, False, 4, 0, 0, 0, _H),
        ),
        cases=(
            TadpoleCase(
                1,
                "",
                (_row(0, True, 1, 1, 0, 0, 0), _row(0, True, 3, 0, 0, 0, 1)),
            ),
            TadpoleCase(
                0,
                "",
                (_row(0, False, 1, _H, 0, 0, 0), _row(0, False, 3, 0, 0, 0, _H)),
            ),
        ),
        worst_by_tadpoles=((1, _F(1, 0, 0, 3)), (0, _F(_H, 0, 0, Fraction(5, 2)))),
        worst_with_tadpole=_F(1, 0, 0, 3),
        worst_without=_F(_H, 0, 0, Fraction(5, 2)),
    )

    t["quartic_pair_singles_alternating"] = VertexCostTable(
        "quartic_pair_singles_alternating",
        common_rows=(
            _row(None, True, 4, 0, 0, 0, 1),
            _row(1, False, 4, 0, 0, 0, _H),
            _row(2, False, 4, 0, 0, 0, _H),
        ),
        cases=(
            TadpoleCase(
                1,
                "",
                (_row(0, True, 2, 0, 1, 0, 0), _row(0, True, 2, 0, 0, 0, 1)),
            ),
            TadpoleCase(
                0,
                "",
                (_row(0, False, 2, 0, _H, 0, 0), _row(0, False, 2, 0, 0, 0, _H)),
            ),
        ),
        worst_by_tadpoles=((1, _F(0, 1, 0, 3)), (0, _F(0, _H, 0, Fraction(5, 2)))),
        worst_with_tadpole=_F(0, 1, 0, 3),
        worst_without=_F(0, _H, 0, Fraction(5, 2)),
    )

    t["quartic_distinct"] = VertexCostTable(
        "quartic_distinct",
        common_rows=(),
        cases=(
            TadpoleCase(
                0,
                "",
                (
                    _row(0, False, 4, 0, 0, 0, _H),
                    _row(1, False, 4, 0, 0, 0, _H),
                    _row(2, False, 4, 0, 0, 0, _H),
                    _row(3, False, 4, 0, 0, 0, _H),
                ),
            ),
        ),
        worst_by_tadpoles=((0, _F(0, 0, 0, 2)),),
        worst_with_tadpole=None,
        worst_without=_F(0, 0, 0, 2),
    )

    t["cubic_same"] = VertexCostTable(
        "cubic_same",
        common_rows=(
            _row(None, True, 3, 0, 0, 1),
            _row(None, True, 3, 0, 0, 1),
            _row(None, True, 3, 0, 0, 1),
        ),
        cases=(
            TadpoleCase(
                1,
                "",
                (_row(0, True, 1, 1, 0, 0), _row(0, False, 2, 0, 0, _H)),
            ),
            TadpoleCase(
                0,
                "",
                (
                    _row(0, False, 1, _H, 0, 0),
                    _row(0, False, 1, 0, _H, 0),
                    _row(0, False, 1, 0, 0, _H),
                ),
            ),
        ),
        worst_by_tadpoles=(
            (1, _F(1, 0, Fraction(7, 2))),
            (0, _F(_H, _H, Fraction(7, 2))),
        ),
        worst_with_tadpole=_F(1, 0, Fraction(7, 2)),
        worst_without=_F(_H, _H, Fraction(7, 2)),
    )

    t["cubic_pair"] = VertexCostTable(
        "cubic_pair",
        common_rows=(
            _row(None, True, 3, 0, 0, 1),
            _row(None, True, 3, 0, 0, 1),
            _row(1, False, 3, 0, 0, _H),
        ),
        cases=(
            TadpoleCase(
                1,
                "",
                (_row(0, True, 1, 1, 0, 0), _row(0, True, 2, 0, 0, 1)),
            ),
            TadpoleCase(
                0,
                "",
                (_row(0, False, 1, _H, 0, 0), _row(0, False, 2, 0, 0, _H)),
            ),
        ),
        worst_by_tadpoles=((1, _F(1, 0, Fraction(7, 2))), (0, _F(_H, 0, 3))),
        worst_with_tadpole=_F(1, 0, Fraction(7, 2)),
        worst_without=_F(_H, 0, 3),
    )

    t["cubic_distinct"] = VertexCostTable(
        "cubic_distinct",
        common_rows=(_row(None, True, 3, 0, 0, 1),),
        cases=(
            TadpoleCase(
                0,
                "",
                (
                    _row(0, False, 3, 0, 0, _H),
                    _row(1, False, 3, 0, 0, _H),
                    _row(2, False, 3, 0, 0, _H),
                ),
            ),
        ),
        worst_by_tadpoles=((0, _F(0, 0, Fraction(5, 2))),),
        worst_with_tadpole=None,
        worst_without=_F(0, 0, Fraction(5, 2)),
    )

    t["quadratic_same"] = VertexCostTable(
        "quadratic_same",
        common_rows=(
            _row(None, True, 3, 0, 1),
            _row(None, True, 3, 0, 1),
            _row(None, True, 3, 0, 1),
        ),
        cases=(
            TadpoleCase(1, "", (_row(0, True, 1, 1, 0), _row(0, True, 2, 0, 1))),
            TadpoleCase(0, "", (_row(0, False, 1, _H, 0), _row(0, False, 2, 0, _H))),
        ),
        worst_by_tadpoles=((1, _F(1, 4)), (0, _F(_H, Fraction(7, 2)))),
        worst_with_tadpole=_F(1, 4),
        worst_without=_F(_H, Fraction(7, 2)),
    )

    t["quadratic_distinct"] = VertexCostTable(
        "quadratic_distinct",
        common_rows=(_row(None, True, 3, 0, 1), _row(None, True, 3, 0, 1)),
        cases=(
            TadpoleCase(
                0, "", (_row(0, False, 3, 0, _H), _row(1, False, 3, 0, _H))
            ),
        ),
        worst_by_tadpoles=((0, _F(0, 3)),),
        worst_with_tadpole=None,
        worst_without=_F(0, 3),
    )

    t["linear"] = VertexCostTable(
        "linear",
        common_rows=(
            _row(None, True, 2, 1),
            _row(None, True, 2, 1),
            _row(None, True, 2, 1),
        ),
        cases=(TadpoleCase(0, "", (_row(0, False, 2, _H),)),),
        worst_by_tadpoles=((0, _F(Fraction(7, 2))),),
        worst_with_tadpole=None,
        worst_without=_F(Fraction(7, 2)),
    )

    return t


def quartic_worst_by_tadpoles() -> dict[int, ScaleVector]:
    """Dominant face cost over every quartic class, per tadpole count."""
    tables = vertex_weight_tables()
    out: dict[int, list[ScaleVector]] = {}
    for name, table in tables.items():
        if not name.startswith("quartic"):
            continue
        for tadpoles, vec in table.worst_by_tadpoles:
            out.setdefault(tadpoles, []).append(vec)
    return {k: scale_max(v) for k, v in out.items()}


# ---------------------------------------------------------------------------
# Spare decay on stranded vacuum graphs
# ---------------------------------------------------------------------------

SPARE_LIMIT = Fraction(23, 12)


@dataclass(frozen=True)
class SpareReport:
    """Per-line sums of reciprocal face lengths, with the 23/12 verdict."""

    ok: bool
    per_line: tuple[Fraction, ...]
    limit: Fraction = SPARE_LIMIT


def melonic_insertion_lines(graph: TensorGraph) -> tuple[int, ...]:
    """Lines forming a divergent two-point sub-insertion (melonic tadpoles).

    A tadpole line closing a transmitted-colour corner (slots 0 and 1, or
    slots 2 and 3, of one vertex) creates three length-one faces: the
    two-point subfunction it roots diverges and is renormalized away, so
    graphs carrying one lie outside the spare-decay domain.
    """
    hits = []
    for idx, ((v, s), (w, t)) in enumerate(graph.lines):
        if v == w and {s, t} in ({0, 1}, {2, 3}):
            hits.append(idx)
    return tuple(hits)


def spare_check(graph: TensorGraph) -> SpareReport:
    """Reciprocal face lengths through each line of a convergent vacuum graph.

    A face of length L running k times through a line adds k/L there.  The
    report is ``ok`` when no line exceeds 23/12.  Rejected inputs: non-vacuum
    graphs, graphs whose overall scaling degree is non-negative, and graphs
    containing a melonic tadpole sub-insertion; in the latter two cases the
    renormalized amplitude carries its own extra decay (or vanishes), so the
    criterion does not apply.
    """
    if not graph.is_vacuum:
        raise ValueError("the spare-decay criterion applies to vacuum graphs")
    strands = tensor_faces(graph)
    degree = strands.n_closed - 2 * graph.n_lines
    if degree >= 0:
        raise ValueError(
            f"inapplicable to a divergent graph (scaling degree {degree})"
        )
    melonic = melonic_insertion_lines(graph)
    if melonic:
        raise ValueError(
            f"inapplicable: lines {melonic} root divergent two-point "
            "sub-insertions that renormalization removes"
        )
    per_line = []
    for idx in range(graph.n_lines):
        total = Fraction(0)
        for _, lines in strands.closed:
            mult = lines.count(idx)
            if mult:
                total += Fraction(mult, len(lines))
        per_line.append(total)
    return SpareReport(
        ok=all(v <= SPARE_LIMIT for v in per_line), per_line=tuple(per_line)
    )


def vacuum_graphs(
    order: int, *, connected: bool = True
) -> Iterator[TensorGraph]:
    """All labelled vacuum graphs of the given order.

    Every vertex gets each of the four colours in turn; lines form a perfect
    matching of unbarred against barred slots.
    """
    if order < 1:
        raise ValueError("order must be at least 1")
    unbarred = [(v, s) for v in range(order) for s in (0, 2)]
    barred = [(v, s) for v in range(order) for s in (1, 3)]
    for cols in itertools.product(COLOURS, repeat=order):
        for perm in itertools.permutations(range(2 * order)):
            lines = tuple((unbarred[i], barred[perm[i]]) for i in range(2 * order))
            g = TensorGraph(cols, lines)
            if connected and not g.connected():
                continue
            yield g


def tensor_graph_to_json(graph: TensorGraph) -> str:
    payload = {
        "colours": list(graph.vertex_colours),
        "lines": [[list(a), list(b)] for a, b in graph.lines],
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def tensor_graph_from_json(text: str) -> TensorGraph:
    payload = json.loads(text)
    return TensorGraph(
        tuple(payload["colours"]),
        tuple((tuple(a), tuple(b)) for a, b in payload["lines"]),
    )


# ---------------------------------------------------------------------------
# Slice-scaling probes
# ---------------------------------------------------------------------------


def slice_window(j: int, ratio: int) -> tuple[int, int]:
    """Half-open weight window (lo, hi] with weight = 1 + squared norm."""
    if j < 1:
        raise ValueError("slice indices start at 1")
    if ratio < 2:
        raise ValueError("the slice ratio must be at least 2")
    lo = ratio ** (2 * (j - 1)) if j > 1 else 0
    return lo, ratio ** (2 * j)


def _window_arrays(j: int, ratio: int) -> tuple[int, np.ndarray]:
    """Radial norm-squared histogram of three spectator components.

    Returns the largest single-component magnitude compatible with the slice,
    and the count vector over squared norms up to the window top.
    """
    lo, hi = slice_window(j, ratio)
    reach = math.isqrt(hi - 1)
    counts = square_counts(reach, 3).astype(np.float64)
    if counts.size < hi:
        counts = np.concatenate([counts, np.zeros(hi - counts.size)])
    return reach, counts[:hi]


@dataclass(frozen=True)
class ProbeFamily:
    """A one-parameter family of amplitudes indexed by the slice."""

    name: str
    predicted_decay: float
    evaluate: Callable[[int, int], float]
    convergent: bool = True


@dataclass(frozen=True)
class ProbeResult:
    name: str
    samples: tuple[tuple[int, float], ...]
    fitted_decay: float
    predicted_decay: float
    tolerance: float


def scaling_probe(
    family: ProbeFamily,
    j_values: Sequence[int],
    ratio: int,
    *,
    tolerance: float = 0.15,
) -> ProbeResult:
    """Least-squares decay exponent of ``log amplitude`` against ``j log M``.

    The family must decay at least as fast as its predicted exponent (up to
    the tolerance); a slower fit raises.  Families marked non-convergent are
    rejected outright.
    """
    if not family.convergent:
        raise ValueError(f"family {family.name!r} is not convergent")
    js = sorted(set(int(j) for j in j_values))
    if len(js) < 2:
        raise ValueError("at least two slice values are required for a fit")
    samples = []
    for j in js:
        value = float(family.evaluate(j, ratio))
        if not (value > 0):
            raise ValueError(f"family {family.name!r} vanished at slice {j}")
        samples.append((j, value))
    xs = np.array([j * math.log(ratio) for j, _ in samples])
    ys = np.array([math.log(v) for _, v in samples])
    slope = float(np.polyfit(xs, ys, 1)[0])
    fitted_decay = -slope
    if fitted_decay < family.predicted_decay - tolerance:
        raise InvariantViolation(
            f"family {family.name!r} decays at rate {fitted_decay:.4f}, "
            f"slower than the predicted {family.predicted_decay}"
        )
    return ProbeResult(
        name=family.name,
        samples=tuple(samples),
        fitted_decay=fitted_decay,
        predicted_decay=family.predicted_decay,
        tolerance=tolerance,
    )


def _u1_pair_value(j: int, ratio: int) -> float:
    """Two degree-one vertices joined by one field propagator.

    Each vertex carries one sliced propagator corner and a norm-decay
    insertion of equal strength; the shared-colour face index runs over the
    full slice support while the three spectator components are summed
    radially.  Corner and insertion are taken as exact powers of the squared
    norm so that consecutive slices are self-similar and the decay exponent
    is visible already at small slice indices; unit-shifted weights would
    bias a short least-squares fit by their curvature.  The single zero-norm
    point is dropped (it only enters the first slice).
    """
    lo, hi = slice_window(j, ratio)
    reach, counts = _window_arrays(j, ratio)
    s = np.arange(counts.size, dtype=np.float64)
    total = 0.0
    for x in range(reach + 1):
        weight = 1.0 + x * x + s
        t = x * x + s
        mask = (weight > lo) & (weight <= hi) & (t > 0)
        if not mask.any():
            continue
        w = counts[mask] * t[mask] ** -2.0
        k = float(w.sum())
        total += (1 if x == 0 else 2) * k * k
    return len(COLOURS) * total


def _u3_pair_value(j: int, ratio: int) -> float:
    """Two cubic vertices of one colour joined by three parallel propagators.

    All six corners are sliced at ``j``; the three shared-colour faces each
    couple one corner of either vertex, and each vertex keeps its own radial
    spectator sum.  Corners are exact powers of the squared norm for the same
    self-similarity reason as in the degree-one family, with the zero-norm
    point dropped.
    """
    lo, hi = slice_window(j, ratio)
    reach, counts = _window_arrays(j, ratio)
    s = np.arange(counts.size, dtype=np.float64)
    xs = np.arange(reach + 1, dtype=np.float64)
    mult = np.where(xs == 0, 1.0, 2.0)
    weight = 1.0 + xs[:, None] ** 2 + s[None, :]
    t = xs[:, None] ** 2 + s[None, :]
    corner = np.where(
        (weight > lo) & (weight <= hi) & (t > 0), 1.0 / np.maximum(t, 1.0), 0.0
    )  # corner[x, s] = sliced corner power at squared norm x^2 + s
    total = 0.0
    for xi in range(reach + 1):
        scaled = corner * (counts * corner[xi])[None, :]
        t_slab = scaled @ corner.T
        total += mult[xi] * float((mult[:, None] * mult[None, :] * t_slab**2).sum())
    return total


def u1_pair_family() -> ProbeFamily:
    return ProbeFamily("u1_pair", 1.0, _u1_pair_value)


def u3_pair_family() -> ProbeFamily:
    return ProbeFamily("u3_pair", 3.0, _u3_pair_value)


def flat_family() -> ProbeFamily:
    return ProbeFamily("flat", 0.0, lambda j, ratio: 1.0)
