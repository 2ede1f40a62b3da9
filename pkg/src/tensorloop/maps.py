"""Combinatorial maps, partial duality, stranded graphs, and term catalogues.

Two graph layers live here:

* :class:`ColouredMap` - a rotation system over half-edge ids (a ribbon
  graph).  Faces come from corner tracing, Euler's relation ties vertices,
  edges, faces, components and genus together, and Chmutov partial duality
  is implemented on the flag model so that dualizing every edge gives the
  geometric dual and dualizing none is the identity.

* :class:`TensorGraph` - a four-stranded interaction graph: each vertex is
  a quartic trace invariant of one colour, propagators form a perfect
  matching between field and conjugate-field slots, and faces are the
  per-colour strand cycles that drive power counting.

On top of these sit the symbolic derivative-term catalogue for iterated
field derivatives of a loop vertex, skeleton graphs obtained by splitting
block trees along chain-rule partitions, and the canonical-form classifier
for the finite library of divergent stranded graphs.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from math import factorial
from typing import Iterable, Iterator, Mapping, Sequence

from .core import COLOURS, InvariantViolation
from .bkar import Forest, set_partitions

__all__ = [
    "ColouredMap",
    "FaceSet",
    "faces",
    "partial_dual",
    "to_chord_diagram",
    "ChordDiagram",
    "edge_submap",
    "example_two_vertex_map",
    "random_map",
    "TensorGraph",
    "TensorFaceSet",
    "tensor_faces",
    "DIVERGENT_TAGS",
    "library_graph",
    "library_colourings",
    "classify",
    "divergence_degree",
    "DerivativeTerm",
    "DiagramBatch",
    "derivative_terms",
    "SkeletonNode",
    "SkeletonGraph",
    "skeleton_graph",
    "enumerate_skeletons",
]


# ---------------------------------------------------------------------------
# Rotation systems (ribbon graphs)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ColouredMap:
    """A ribbon graph: cyclic half-edge orders per vertex plus an edge pairing.

    ``vertex_rotations`` lists, per vertex, the half-edge ids in
    counterclockwise order.  ``edge_pairs`` couples half-edges into internal
    edges; half-edges not mentioned there are external legs.  ``edge_colours``
    gives one integer colour per internal edge.  ``corner_labels`` and
    ``marks`` attach optional string annotations to half-edges (a corner is
    named by the half-edge it follows).
    """

    vertex_rotations: tuple[tuple[int, ...], ...]
    edge_pairs: tuple[tuple[int, int], ...] = ()
    edge_colours: tuple[int, ...] = ()
    corner_labels: tuple[tuple[int, str], ...] = ()
    marks: tuple[tuple[int, str], ...] = ()

    def __post_init__(self) -> None:
        rotations = tuple(tuple(r) for r in self.vertex_rotations)
        object.__setattr__(self, "vertex_rotations", rotations)
        pairs = tuple(tuple(p) for p in self.edge_pairs)
        object.__setattr__(self, "edge_pairs", pairs)
        colours = tuple(self.edge_colours)
        if not colours and pairs:
            colours = (0,) * len(pairs)
        if len(colours) != len(pairs):
            raise ValueError("one colour per internal edge is required")
        object.__setattr__(self, "edge_colours", colours)
        object.__setattr__(self, "corner_labels", tuple(tuple(c) for c in self.corner_labels))
        object.__setattr__(self, "marks", tuple(tuple(m) for m in self.marks))
        seen: set[int] = set()
        for rot in rotations:
            for dart in rot:
                if dart in seen:
                    raise ValueError(f"half-edge {dart} appears twice")
                seen.add(dart)
        used: set[int] = set()
        for a, b in pairs:
            if a == b or a not in seen or b not in seen:
                raise ValueError(f"bad edge pair ({a},{b})")
            if a in used or b in used:
                raise ValueError("a half-edge can belong to at most one edge")
            used.update((a, b))

    # -- basic structure ----------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_rotations)

    @property
    def n_edges(self) -> int:
        return len(self.edge_pairs)

    @property
    def darts(self) -> tuple[int, ...]:
        return tuple(d for rot in self.vertex_rotations for d in rot)

    @property
    def external_darts(self) -> tuple[int, ...]:
        used = {d for pair in self.edge_pairs for d in pair}
        return tuple(d for d in self.darts if d not in used)

    def vertex_of(self, dart: int) -> int:
        for v, rot in enumerate(self.vertex_rotations):
            if dart in rot:
                return v
        raise KeyError(dart)

    def _sigma(self) -> dict[int, int]:
        nxt: dict[int, int] = {}
        for rot in self.vertex_rotations:
            for i, d in enumerate(rot):
                nxt[d] = rot[(i + 1) % len(rot)]
        return nxt

    def _alpha(self) -> dict[int, int]:
        inv: dict[int, int] = {}
        for a, b in self.edge_pairs:
            inv[a] = b
            inv[b] = a
        return inv

    def components(self) -> list[set[int]]:
        """Connected components as vertex sets (isolated vertices included)."""
        dart_vertex = {}
        for v, rot in enumerate(self.vertex_rotations):
            for d in rot:
                dart_vertex[d] = v
        parent = list(range(self.n_vertices))

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for a, b in self.edge_pairs:
            ra, rb = find(dart_vertex[a]), find(dart_vertex[b])
            if ra != rb:
                parent[ra] = rb
        groups: dict[int, set[int]] = {}
        for v in range(self.n_vertices):
            groups.setdefault(find(v), set()).add(v)
        return list(groups.values())

    # -- serialization ------------------------------------------------------

    def to_json(self) -> str:
        payload = {
            "vertices": [list(r) for r in self.vertex_rotations],
            "edges": [list(p) for p in self.edge_pairs],
            "colours": list(self.edge_colours),
            "corner_labels": {str(d): lab for d, lab in self.corner_labels},
            "marks": {str(d): lab for d, lab in self.marks},
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ColouredMap":
        payload = json.loads(text)
        return cls(
            vertex_rotations=tuple(tuple(r) for r in payload.get("vertices", [])),
            edge_pairs=tuple(tuple(p) for p in payload.get("edges", [])),
            edge_colours=tuple(payload.get("colours", [])),
            corner_labels=tuple(
                (int(k), v) for k, v in sorted(payload.get("corner_labels", {}).items())
            ),
            marks=tuple((int(k), v) for k, v in sorted(payload.get("marks", {}).items())),
        )

    def canonical_form(self) -> tuple:
        """A hashable form invariant under dart relabelling and rotation shifts.

        Vertex order is canonicalized by brute force only for small maps; this
        is meant for equality testing in property checks.
        """
        return _map_canonical(self)


def _map_canonical(m: ColouredMap) -> tuple:
    # canonicalize each connected component by a breadth-first relabelling
    # from every possible starting dart, keeping the smallest encoding,
    # then sort the component encodings
    sigma = m._sigma()
    alpha = m._alpha()
    colour_of = {}
    for (a, b), col in zip(m.edge_pairs, m.edge_colours):
        colour_of[a] = colour_of[b] = col
    dart_vertex = {}
    for v, rot in enumerate(m.vertex_rotations):
        for d in rot:
            dart_vertex[d] = v
    comps = m.components()
    encodings = []
    for comp in comps:
        comp_darts = sorted(d for d in m.darts if dart_vertex[d] in comp)
        if not comp_darts:
            encodings.append(("isolated",))
            continue
        best: tuple | None = None
        for start in comp_darts:
            label: dict[int, int] = {}
            queue = [start]
            while queue:
                d = queue.pop(0)
                if d in label:
                    continue
                label[d] = len(label)
                nxt = sigma[d]
                if nxt not in label:
                    queue.append(nxt)
                if d in alpha and alpha[d] not in label:
                    queue.append(alpha[d])
            enc = (
                tuple(sorted((label[d], label[sigma[d]]) for d in comp_darts)),
                tuple(
                    sorted(
                        (min(label[a], label[b]), max(label[a], label[b]), c)
                        for (a, b), c in zip(m.edge_pairs, m.edge_colours)
                        if a in label
                    )
                ),
            )
            if best is None or enc < best:
                best = enc
        encodings.append(best)
    return (m.n_vertices, tuple(sorted(map(repr, encodings))))


@dataclass(frozen=True)
class FaceSet:
    """Faces of a ribbon graph from corner tracing.

    ``closed`` lists closed faces as tuples of darts; ``open_walks`` lists
    boundary walks that start and end on external legs.  For closed maps the
    Euler relation ``v - e + f = 2 c - 2 g`` determines the genus.
    """

    closed: tuple[tuple[int, ...], ...]
    open_walks: tuple[tuple[int, ...], ...]
    n_vertices: int
    n_edges: int
    n_components: int

    @property
    def n_closed(self) -> int:
        return len(self.closed)

    def genus(self) -> int:
        """Total genus for a closed map (raises when external legs exist)."""
        if self.open_walks:
            raise ValueError("genus is defined here only for closed maps")
        two_g = 2 * self.n_components - self.n_vertices + self.n_edges - self.n_closed
        if two_g < 0 or two_g % 2:
            raise InvariantViolation(
                f"Euler relation violated: 2g = {two_g} "
                f"(v={self.n_vertices}, e={self.n_edges}, f={self.n_closed}, "
                f"c={self.n_components})"
            )
        return two_g // 2


def faces(m: ColouredMap) -> FaceSet:
    """Trace faces by crossing each edge and turning at the next corner."""
    sigma = m._sigma()
    alpha = m._alpha()
    internal = [d for d in m.darts if d in alpha]
    externals = set(m.external_darts)
    visited: set[int] = set()
    open_walks: list[tuple[int, ...]] = []
    for x in sorted(externals):
        walk = [x]
        current = sigma[x]
        while current not in externals:
            walk.append(current)
            visited.add(current)
            current = sigma[alpha[current]]
        walk.append(current)
        open_walks.append(tuple(walk))
    closed: list[tuple[int, ...]] = []
    for d in internal:
        if d in visited:
            continue
        cycle = []
        current = d
        while current not in visited:
            visited.add(current)
            cycle.append(current)
            current = sigma[alpha[current]]
        closed.append(tuple(cycle))
    # an isolated vertex bounds one face of its own
    closed.extend(() for rot in m.vertex_rotations if not rot)
    return FaceSet(
        closed=tuple(closed),
        open_walks=tuple(open_walks),
        n_vertices=m.n_vertices,
        n_edges=m.n_edges,
        n_components=len(m.components()),
    )


# ---------------------------------------------------------------------------
# Partial duality on the flag model
# ---------------------------------------------------------------------------
#
# Flags are (dart, side) pairs.  Three side-swapping involutions encode the
# map: crossing the edge (tau0), crossing a corner (tau1), crossing the dart
# itself (tau2).  Dualizing an edge subset swaps tau0 and tau2 on the flags
# of those edges only; the new rotation system is read off the parity-one
# flags, which keeps a consistent global orientation.


def partial_dual(
    m: ColouredMap,
    edge_indices: Iterable[int],
    colour_involution: Mapping[int, int] | None = None,
) -> ColouredMap:
    """Chmutov partial dual with respect to a set of internal edge indices.

    Dualizing the empty set returns an equal map; dualizing twice returns the
    original; dualizing every edge of a closed map gives the geometric dual.
    Edge colours of dualized edges are passed through ``colour_involution``
    (identity when absent).
    """
    chosen = set(edge_indices)
    for idx in chosen:
        if not (0 <= idx < m.n_edges):
            raise ValueError(f"edge index {idx} out of range")
    sigma = m._sigma()
    alpha = m._alpha()
    dualized_darts = set()
    for idx in chosen:
        dualized_darts.update(m.edge_pairs[idx])

    # flag = (dart, s) with s in {0, 1}; parity of the flag is s.
    def tau2(fl):
        d, s = fl
        return (d, 1 - s)

    def tau0(fl):
        d, s = fl
        return (alpha[d], 1 - s)

    # corner crossing: (d, 1) <-> (sigma(d), 0)
    sigma_inv = {v: k for k, v in sigma.items()}

    def tau1(fl):
        d, s = fl
        return (sigma[d], 0) if s == 1 else (sigma_inv[d], 1)

    def tau0p(fl):
        return tau2(fl) if fl[0] in dualized_darts else tau0(fl)

    def tau2p(fl):
        return tau0(fl) if fl[0] in dualized_darts else tau2(fl)

    # new darts are the parity-one flags
    darts = m.darts
    new_rotations: list[tuple] = []
    seen: set = set()
    for d in darts:
        f0 = (d, 1)
        if f0 in seen:
            continue
        rot = []
        current = f0
        while current not in seen:
            seen.add(current)
            rot.append(current)
            current = tau2p(tau1(current))
        new_rotations.append(tuple(rot))

    # pair new darts through the (possibly swapped) edge crossing
    flag_ids = {fl: i for i, fl in enumerate(sorted(seen))}
    new_pairs = []
    new_colours = []
    for idx, (a, b) in enumerate(m.edge_pairs):
        fa = (a, 1)
        partner = tau2p(tau0p(fa))
        col = m.edge_colours[idx]
        if idx in chosen and colour_involution is not None:
            col = colour_involution.get(col, col)
        new_pairs.append((flag_ids[fa], flag_ids[partner]))
        new_colours.append(col)

    label_map = {}
    for d, lab in m.corner_labels:
        label_map[flag_ids[(d, 1)]] = lab
    mark_map = {}
    for d, lab in m.marks:
        mark_map[flag_ids[(d, 1)]] = lab

    rotations_ids = tuple(tuple(flag_ids[fl] for fl in rot) for rot in new_rotations)
    isolated = sum(1 for rot in m.vertex_rotations if not rot)
    rotations_ids = rotations_ids + ((),) * isolated
    return ColouredMap(
        vertex_rotations=rotations_ids,
        edge_pairs=tuple(new_pairs),
        edge_colours=tuple(new_colours),
        corner_labels=tuple(sorted(label_map.items())),
        marks=tuple(sorted(mark_map.items())),
    )


@dataclass(frozen=True)
class ChordDiagram:
    """A one-vertex map; chords may cross, which records an operator twist."""

    map: ColouredMap

    def __post_init__(self) -> None:
        if self.map.n_vertices != 1:
            raise ValueError("a chord diagram has exactly one vertex")

    def crossing_pairs(self) -> list[tuple[int, int]]:
        rot = self.map.vertex_rotations[0]
        pos = {d: i for i, d in enumerate(rot)}
        out = []
        for i, (a1, b1) in enumerate(self.map.edge_pairs):
            for j in range(i + 1, self.map.n_edges):
                a2, b2 = self.map.edge_pairs[j]
                i1, i2 = sorted((pos[a1], pos[b1]))
                j1, j2 = sorted((pos[a2], pos[b2]))
                if (i1 < j1 < i2 < j2) or (j1 < i1 < j2 < i2):
                    out.append((i, j))
        return out

    @property
    def permutation_required(self) -> bool:
        """True when some chords cross, so index lines must be permuted."""
        return bool(self.crossing_pairs())


def to_chord_diagram(m: ColouredMap, tree_edge_indices: Iterable[int]) -> ChordDiagram:
    """Dualize a spanning tree to roll a connected map onto one vertex."""
    tree = tuple(sorted(set(tree_edge_indices)))
    if len(m.components()) != 1:
        raise ValueError("the map must be connected")
    if len(tree) != m.n_vertices - 1:
        raise ValueError("a spanning tree needs exactly v-1 edges")
    dart_vertex = {}
    for v, rot in enumerate(m.vertex_rotations):
        for d in rot:
            dart_vertex[d] = v
    try:
        Forest(
            m.n_vertices,
            tuple(
                (dart_vertex[m.edge_pairs[i][0]], dart_vertex[m.edge_pairs[i][1]])
                for i in tree
            ),
        )
    except ValueError as exc:
        raise ValueError(f"not a spanning tree: {exc}") from exc
    dual = partial_dual(m, tree)
    if dual.n_vertices != 1:
        raise InvariantViolation(
            f"dualizing a spanning tree must give one vertex, got {dual.n_vertices}"
        )
    return ChordDiagram(dual)


def edge_submap(m: ColouredMap, edge_indices: Iterable[int]) -> ColouredMap:
    """The map on the same vertices with all other edges deleted outright."""
    chosen = set(edge_indices)
    keep_darts = {d for i in chosen for d in m.edge_pairs[i]}
    rotations = tuple(
        tuple(d for d in rot if d in keep_darts) for rot in m.vertex_rotations
    )
    return ColouredMap(
        rotations,
        tuple(m.edge_pairs[i] for i in sorted(chosen)),
        tuple(m.edge_colours[i] for i in sorted(chosen)),
    )


def example_two_vertex_map() -> ColouredMap:
    """Two vertices joined by one tree edge, each carrying a self-loop."""
    return ColouredMap(
        vertex_rotations=((0, 1, 2, 3), (4, 5, 6, 7)),
        edge_pairs=((1, 2), (0, 4), (5, 6)),
        edge_colours=(1, 1, 1),
    )


def random_map(rng, max_edges: int = 8, closed: bool = True) -> ColouredMap:
    """A random rotation system for property tests."""
    n_edges = int(rng.integers(1, max_edges + 1))
    n_vertices = int(rng.integers(1, 2 * n_edges + 1))
    darts = list(range(2 * n_edges))
    rng.shuffle(darts)
    # distribute darts over vertices (allow empty rotations, then drop them)
    cuts = sorted(rng.integers(0, len(darts) + 1, size=n_vertices - 1).tolist())
    rotations = []
    prev = 0
    for c in [*cuts, len(darts)]:
        rotations.append(tuple(darts[prev:c]))
        prev = c
    rotations = [r for r in rotations if r] or [tuple(darts)]
    pairs = tuple((2 * i, 2 * i + 1) for i in range(n_edges))
    colours = tuple(int(rng.integers(1, 5)) for _ in range(n_edges))
    return ColouredMap(tuple(rotations), pairs, colours)


# ---------------------------------------------------------------------------
# Stranded tensor graphs
# ---------------------------------------------------------------------------

Slot = tuple[int, int]  # (vertex, slot index 0..3); slots 0,2 unbarred, 1,3 barred

_UNBARRED = (0, 2)
_BARRED = (1, 3)


def _strand_partner(slot: int, own_colour: bool) -> int:
    if own_colour:
        return {0: 3, 3: 0, 1: 2, 2: 1}[slot]
    return {0: 1, 1: 0, 2: 3, 3: 2}[slot]


@dataclass(frozen=True)
class TensorGraph:
    """A quartic stranded interaction graph of rank four.

    Each vertex is a quartic invariant of a single colour; its four field
    slots alternate unbarred/barred in cyclic order.  The distinguished
    colour's strands connect slots (0,3) and (1,2); each other colour runs
    (0,1) and (2,3).  Propagator lines form a partial matching of unbarred
    against barred slots; unmatched slots are external.
    """

    vertex_colours: tuple[int, ...]
    lines: tuple[tuple[Slot, Slot], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "vertex_colours", tuple(self.vertex_colours))
        lines = []
        used: set[Slot] = set()
        for end_a, end_b in self.lines:
            a = (int(end_a[0]), int(end_a[1]))
            b = (int(end_b[0]), int(end_b[1]))
            if a[1] in _BARRED and b[1] in _UNBARRED:
                a, b = b, a
            if a[1] not in _UNBARRED or b[1] not in _BARRED:
                raise ValueError(f"a line must join an unbarred slot to a barred one: {a}, {b}")
            for s in (a, b):
                if not (0 <= s[0] < len(self.vertex_colours)) or s[1] not in range(4):
                    raise ValueError(f"slot {s} out of range")
                if s in used:
                    raise ValueError(f"slot {s} used twice")
                used.add(s)
            lines.append((a, b))
        object.__setattr__(self, "lines", tuple(lines))
        for c in self.vertex_colours:
            if c not in COLOURS:
                raise ValueError(f"vertex colour {c} not in {COLOURS}")

    @property
    def order(self) -> int:
        return len(self.vertex_colours)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @property
    def external_slots(self) -> tuple[Slot, ...]:
        used = {s for line in self.lines for s in line}
        return tuple(
            (v, s)
            for v in range(self.order)
            for s in range(4)
            if (v, s) not in used
        )

    @property
    def is_vacuum(self) -> bool:
        return not self.external_slots

    def line_partner(self) -> dict[Slot, tuple[Slot, int]]:
        out: dict[Slot, tuple[Slot, int]] = {}
        for idx, (a, b) in enumerate(self.lines):
            out[a] = (b, idx)
            out[b] = (a, idx)
        return out

    def connected(self) -> bool:
        if self.order <= 1:
            return True
        parent = list(range(self.order))

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for (va, _), (vb, _) in self.lines:
            parent[find(va)] = find(vb)
        return len({find(v) for v in range(self.order)}) == 1

    # -- canonical form ------------------------------------------------------

    def _encode(self, vperm: Sequence[int], rot: Sequence[int], cperm: Mapping[int, int]) -> tuple:
        def slot_map(s: Slot) -> Slot:
            v, k = s
            return (vperm[v], (k + 2) % 4 if rot[v] else k)

        lines = []
        for a, b in self.lines:
            na, nb = slot_map(a), slot_map(b)
            lines.append((na, nb))
        colours = [0] * self.order
        for v, c in enumerate(self.vertex_colours):
            colours[vperm[v]] = cperm[c]
        ext = sorted(slot_map(s) for s in self.external_slots)
        return (tuple(sorted(lines)), tuple(colours), tuple(ext))

    def canonical_key(self) -> tuple:
        """Smallest encoding over vertex relabellings, half-turn rotations of
        each vertex, and global colour permutations."""
        n = self.order
        if n > 6:
            raise ValueError("canonical keys are computed only up to order 6")
        best: tuple | None = None
        for vperm in itertools.permutations(range(n)):
            for rot_bits in itertools.product((0, 1), repeat=n):
                for cp in itertools.permutations(COLOURS):
                    cperm = dict(zip(COLOURS, cp))
                    enc = self._encode(vperm, rot_bits, cperm)
                    if best is None or enc < best:
                        best = enc
        assert best is not None
        return best


@dataclass(frozen=True)
class TensorFaceSet:
    """Per-colour strand cycles of a stranded graph.

    Each closed face records its colour and the sequence of line indices it
    traverses (repeats allowed); its length is the number of traversals.
    Open strands end on external slots.
    """

    closed: tuple[tuple[int, tuple[int, ...]], ...]
    open_strands: tuple[tuple[int, tuple[int, ...]], ...]

    def lengths(self) -> list[int]:
        return [len(lines) for _, lines in self.closed]

    @property
    def n_closed(self) -> int:
        return len(self.closed)

    def faces_through_line(self, line_index: int) -> list[tuple[int, int]]:
        """(face position, multiplicity) pairs for closed faces using the line."""
        out = []
        for pos, (_, lines) in enumerate(self.closed):
            mult = lines.count(line_index)
            if mult:
                out.append((pos, mult))
        return out


def tensor_faces(g: TensorGraph) -> TensorFaceSet:
    partner = g.line_partner()
    closed: list[tuple[int, tuple[int, ...]]] = []
    open_strands: list[tuple[int, tuple[int, ...]]] = []
    for colour in COLOURS:
        visited: set[Slot] = set()

        def strand_next(s: Slot) -> Slot:
            v, k = s
            own = g.vertex_colours[v] == colour
            return (v, _strand_partner(k, own))

        # open strands start at external slots
        for start in g.external_slots:
            if start in visited:
                continue
            walk_lines: list[int] = []
            visited.add(start)
            current = strand_next(start)
            while current in partner:
                visited.add(current)
                nxt, idx = partner[current]
                walk_lines.append(idx)
                visited.add(nxt)
                current = strand_next(nxt)
            visited.add(current)
            open_strands.append((colour, tuple(walk_lines)))
        # closed faces
        for v in range(g.order):
            for k in range(4):
                start = (v, k)
                if start in visited or start not in partner:
                    continue
                walk_lines = []
                current = start
                while True:
                    visited.add(current)
                    nxt, idx = partner[current]
                    walk_lines.append(idx)
                    visited.add(nxt)
                    current = strand_next(nxt)
                    if current == start:
                        break
                closed.append((colour, tuple(walk_lines)))
    return TensorFaceSet(tuple(closed), tuple(open_strands))


def divergence_degree(g: TensorGraph) -> int:
    """Uniform-slice scaling exponent: closed faces minus twice the lines."""
    return tensor_faces(g).n_closed - 2 * g.n_lines


# ---------------------------------------------------------------------------
# The divergent-graph library
# ---------------------------------------------------------------------------

DIVERGENT_TAGS = (
    "M1",
    "M2",
    "V1",
    "V2",
    "V3",
    "V4",
    "V5",
    "V6",
    "V7",
    "N1",
    "N2",
    "N3",
)


def _tadpole_chain(base: int, colours: Sequence[int]) -> tuple[list[tuple[Slot, Slot]], int]:
    """Lines of a melonic two-point chain rooted at vertex ``base``.

    ``colours[0]`` is the outer vertex; each later colour nests one deeper
    into the (0,1) loop of its predecessor.  Returns (lines, vertex count);
    the chain's external slots are (base, 2) and (base, 3).
    """
    lines: list[tuple[Slot, Slot]] = []
    depth = len(colours)
    for i in range(depth - 1):
        v, w = base + i, base + i + 1
        lines.append(((v, 0), (w, 3)))
        lines.append(((w, 2), (v, 1)))
    last = base + depth - 1
    lines.append(((last, 0), (last, 1)))
    return lines, depth


def library_graph(tag: str, colours: Sequence[int] | None = None) -> TensorGraph:
    """A representative stranded graph for each divergent class.

    ``colours`` optionally overrides the per-vertex colour assignment (the
    default uses colour 1 everywhere, or 1,2,... where distinctness matters).
    """
    if tag == "M1":
        cols = tuple(colours or (1,))
        return TensorGraph(cols, (((0, 0), (0, 1)),))
    if tag == "M2":
        cols = tuple(colours or (1, 2))
        lines, _ = _tadpole_chain(0, cols)
        return TensorGraph(cols, tuple(lines))
    if tag == "V1":
        cols = tuple(colours or (1,))
        return TensorGraph(cols, (((0, 0), (0, 1)), ((0, 2), (0, 3))))
    if tag == "N1":
        cols = tuple(colours or (1,))
        return TensorGraph(cols, (((0, 0), (0, 3)), ((0, 2), (0, 1))))
    if tag == "V2":
        cols = tuple(colours or (1, 2))
        lines, _ = _tadpole_chain(0, cols)
        lines.append(((0, 2), (0, 3)))
        return TensorGraph(cols, tuple(lines))
    if tag == "V3":
        cols = tuple(colours or (1, 2, 3))
        lines = [
            ((0, 0), (1, 3)),
            ((1, 2), (0, 1)),
            ((1, 0), (1, 1)),
            ((0, 2), (2, 3)),
            ((2, 2), (0, 3)),
            ((2, 0), (2, 1)),
        ]
        return TensorGraph(cols, tuple(lines))
    if tag == "V4":
        cols = tuple(colours or (1, 2, 3, 4))
        lines_a, na = _tadpole_chain(0, cols[:2])
        lines_b, _ = _tadpole_chain(na, cols[2:])
        ring = [((0, 2), (na, 3)), ((na, 2), (0, 3))]
        return TensorGraph(cols, tuple(lines_a + lines_b + ring))
    if tag == "V5":
        cols = tuple(colours or (1, 2, 3))
        lines = [((v, 0), (v, 1)) for v in range(3)]
        lines += [((0, 2), (1, 3)), ((1, 2), (2, 3)), ((2, 2), (0, 3))]
        return TensorGraph(cols, tuple(lines))
    if tag == "V6":
        cols = tuple(colours or (1, 2, 3, 4))
        lines = [((0, 0), (0, 1)), ((1, 0), (1, 1))]
        chain, _ = _tadpole_chain(2, cols[2:])
        lines += chain
        lines += [((0, 2), (1, 3)), ((1, 2), (2, 3)), ((2, 2), (0, 3))]
        return TensorGraph(cols, tuple(lines))
    if tag == "V7":
        cols = tuple(colours or (1, 2, 3, 4))
        lines = [((v, 0), (v, 1)) for v in range(4)]
        lines += [
            ((0, 2), (1, 3)),
            ((1, 2), (2, 3)),
            ((2, 2), (3, 3)),
            ((3, 2), (0, 3)),
        ]
        return TensorGraph(cols, tuple(lines))
    if tag == "N2":
        cols = tuple(colours or (1, 1))
        lines = [
            ((0, 0), (1, 3)),
            ((0, 2), (1, 1)),
            ((1, 0), (0, 3)),
            ((1, 2), (0, 1)),
        ]
        return TensorGraph(cols, tuple(lines))
    if tag == "N3":
        cols = tuple(colours or (1, 2))
        lines = [
            ((0, 0), (0, 3)),
            ((0, 2), (1, 3)),
            ((1, 2), (0, 1)),
            ((1, 0), (1, 1)),
        ]
        return TensorGraph(cols, tuple(lines))
    raise ValueError(f"unknown library tag {tag!r}")


def library_colourings(tag: str) -> list[TensorGraph]:
    """Colour assignments of the library shape that stay divergent.

    Vacuum colourings whose uniform-slice scaling degree turns negative (the
    four-line banana with different vertex colours, for instance) drop out of
    the class.
    """
    base = library_graph(tag)
    out = []
    for cols in itertools.product(COLOURS, repeat=base.order):
        g = TensorGraph(cols, base.lines)
        if g.is_vacuum and divergence_degree(g) < 0:
            continue
        out.append(g)
    return out


_LIBRARY_KEYS: dict[tuple, str] | None = None


def _library_keys() -> dict[tuple, str]:
    global _LIBRARY_KEYS
    if _LIBRARY_KEYS is None:
        table: dict[tuple, str] = {}
        for tag in DIVERGENT_TAGS:
            for g in library_colourings(tag):
                key = g.canonical_key()
                prior = table.get(key)
                if prior is not None and prior != tag:
                    raise InvariantViolation(
                        f"library collision: {tag} and {prior} share a canonical key"
                    )
                table[key] = tag
        _LIBRARY_KEYS = table
    return _LIBRARY_KEYS


def classify(g: TensorGraph) -> str:
    """Divergence class of a stranded graph.

    Graphs of order at most four are matched against the canonical-form
    library; anything unmatched, and every higher-order graph, is
    ``"convergent"`` (at higher order the scaling bound alone settles it).
    """
    if g.order > 4:
        return "convergent"
    return _library_keys().get(g.canonical_key(), "convergent")


# ---------------------------------------------------------------------------
# Derivative-term catalogue
# ---------------------------------------------------------------------------
#
# Atoms of a trace word:
#   "loop"    - an undifferentiated loop-vertex factor
#   "dloop"   - the scale-derived loop-vertex factor (carries the mark)
#   "res"     - a resolvent factor
#   "ins:i"   - the i-th field-derivative insertion
#   "dins:i"  - the same insertion carrying the scale mark
#   "mass1", "dmass1", "dmass2" - quadratic counterterm blocks
#   "field"   - a plain intermediate-field factor, "dfield" its marked form
#   "quad"    - the quadratic kernel term ending the trace expansion

_A_MARKED = ("dloop", "dins", "dmass1", "dmass2", "dfield", "quad")


@dataclass(frozen=True)
class DerivativeTerm:
    word: tuple[str, ...]
    coefficient: int
    stratum: int | None = None

    @property
    def trace_length(self) -> int:
        return len(self.word)

    @property
    def insertion_count(self) -> int:
        return sum(1 for a in self.word if a.startswith(("ins:", "dins:")))

    @property
    def marked_count(self) -> int:
        return sum(
            1
            for a in self.word
            if a == "quad" or a.startswith(("dloop", "dins:", "dmass", "dfield"))
        )


@dataclass(frozen=True)
class DiagramBatch:
    k: int
    scale: int
    terms: tuple[DerivativeTerm, ...]

    def __len__(self) -> int:
        return len(self.terms)

    def by_stratum(self) -> dict[int | None, list[DerivativeTerm]]:
        out: dict[int | None, list[DerivativeTerm]] = {}
        for t in self.terms:
            out.setdefault(t.stratum, []).append(t)
        return out


def _ins(i: int, marked: bool = False) -> str:
    return f"dins:{i}" if marked else f"ins:{i}"


def _terms_k1() -> list[DerivativeTerm]:
    t = []
    t.append(DerivativeTerm(("quad",), -1))
    t.append(DerivativeTerm((_ins(0, True), "loop", "loop", "res"), 1))
    t.append(DerivativeTerm(("dloop", _ins(0), "loop", "res"), 1))
    t.append(DerivativeTerm(("dloop", "loop", _ins(0), "res"), 1))
    t.append(DerivativeTerm(("dloop", "loop", "loop", "res", _ins(0), "res"), 1))
    t.append(DerivativeTerm(("dmass1", _ins(0), "field"), -1))
    t.append(DerivativeTerm(("dmass1", "field", _ins(0)), -1))
    t.append(DerivativeTerm(("mass1", _ins(0, True), "field"), -1))
    t.append(DerivativeTerm(("mass1", "dfield", _ins(0)), -1))
    t.append(DerivativeTerm(("mass1", _ins(0), "dfield"), -1))
    t.append(DerivativeTerm(("mass1", "field", _ins(0, True)), -1))
    t.append(DerivativeTerm(("dmass2", _ins(0)), 3))
    return t


def _terms_k2() -> list[DerivativeTerm]:
    t = [DerivativeTerm(("quad",), -1)]
    words = [
        (_ins(0, True), _ins(1), "loop", "res"),
        (_ins(0, True), "loop", _ins(1), "res"),
        (_ins(0, True), "loop", "loop", "res", _ins(1), "res"),
        (_ins(1, True), _ins(0), "loop", "res"),
        ("dloop", _ins(0), _ins(1), "res"),
        ("dloop", _ins(0), "loop", "res", _ins(1), "res"),
        (_ins(1, True), "loop", _ins(0), "res"),
        ("dloop", _ins(1), _ins(0), "res"),
        ("dloop", "loop", _ins(0), "res", _ins(1), "res"),
        (_ins(1, True), "loop", "loop", "res", _ins(0), "res"),
        ("dloop", _ins(1), "loop", "res", _ins(0), "res"),
        ("dloop", "loop", _ins(1), "res", _ins(0), "res"),
        ("dloop", "loop", "loop", "res", _ins(1), "res", _ins(0), "res"),
        ("dloop", "loop", "loop", "res", _ins(0), "res", _ins(1), "res"),
    ]
    t += [DerivativeTerm(w, 1) for w in words]
    t += [
        DerivativeTerm(("dmass1", _ins(0), _ins(1)), -1),
        DerivativeTerm(("dmass1", _ins(1), _ins(0)), -1),
        DerivativeTerm(("mass1", _ins(0, True), _ins(1)), -1),
        DerivativeTerm(("mass1", _ins(1, True), _ins(0)), -1),
        DerivativeTerm(("mass1", _ins(0), _ins(1, True)), -1),
        DerivativeTerm(("mass1", _ins(1), _ins(0, True)), -1),
    ]
    return t


def _tail(labels: Sequence[int]) -> tuple[str, ...]:
    word: list[str] = []
    for lab in labels:
        word.append(_ins(lab))
        word.append("res")
    return tuple(word)


def _terms_k_general(k: int) -> list[DerivativeTerm]:
    labels = list(range(k))
    terms: list[DerivativeTerm] = []
    # stratum 0: full prefix, all insertions in the resolvent tail
    for perm in itertools.permutations(labels):
        word = ("dloop", "loop", "loop", "res") + _tail(perm)
        terms.append(DerivativeTerm(word, 1, stratum=0))
    # stratum 1: one insertion absorbed into the prefix
    for i0 in labels:
        rest = [x for x in labels if x != i0]
        for perm in itertools.permutations(rest):
            tail = ("res",) + _tail(perm)
            for prefix in (
                (_ins(i0, True), "loop", "loop"),
                ("dloop", _ins(i0), "loop"),
                ("dloop", "loop", _ins(i0)),
            ):
                terms.append(DerivativeTerm(prefix + tail, 1, stratum=1))
    # stratum 2: two insertions absorbed, six arrangements
    for i0, i1 in itertools.combinations(labels, 2):
        rest = [x for x in labels if x not in (i0, i1)]
        for perm in itertools.permutations(rest):
            tail = ("res",) + _tail(perm)
            for prefix in (
                (_ins(i0, True), _ins(i1), "loop"),
                (_ins(i0, True), "loop", _ins(i1)),
                (_ins(i1, True), _ins(i0), "loop"),
                ("dloop", _ins(i0), _ins(i1)),
                (_ins(i1, True), "loop", _ins(i0)),
                ("dloop", _ins(i1), _ins(i0)),
            ):
                terms.append(DerivativeTerm(prefix + tail, 1, stratum=2))
    # stratum 3: three insertions absorbed, all six orders of the chosen triple
    for triple in itertools.combinations(labels, 3):
        rest = [x for x in labels if x not in triple]
        for perm in itertools.permutations(rest):
            tail = ("res",) + _tail(perm)
            for kappa in itertools.permutations(triple):
                prefix = (_ins(kappa[0], True), _ins(kappa[1]), _ins(kappa[2]))
                terms.append(DerivativeTerm(prefix + tail, 1, stratum=3))
    return terms


def derivative_terms(k: int, j: int = 1) -> DiagramBatch:
    """The trace-word catalogue for the k-th iterated field derivative.

    ``k = 1`` has 12 terms, ``k = 2`` has 21; for ``k >= 3`` the four strata
    hold k!, 3k!, 3k!, k! terms (8 k! in total) with trace lengths
    ``2k+4, 2k+2, 2k, 2k-2`` and exactly ``k`` insertions each, one factor
    carrying the scale mark.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k == 1:
        terms = _terms_k1()
    elif k == 2:
        terms = _terms_k2()
    else:
        terms = _terms_k_general(k)
    batch = DiagramBatch(k=k, scale=j, terms=tuple(terms))
    if k >= 3:
        expected = {0: factorial(k), 1: 3 * factorial(k), 2: 3 * factorial(k), 3: factorial(k)}
        got = {p: len(ts) for p, ts in batch.by_stratum().items()}
        if got != expected:
            raise InvariantViolation(f"stratum counts {got} differ from {expected}")
        for t in batch.terms:
            if t.insertion_count != k or t.marked_count != 1:
                raise InvariantViolation(f"malformed term {t.word}")
            want_len = 2 * k + 4 - 2 * (t.stratum or 0)
            if t.trace_length != want_len:
                raise InvariantViolation(
                    f"term length {t.trace_length} != {want_len} in stratum {t.stratum}"
                )
    return batch


# ---------------------------------------------------------------------------
# Skeleton graphs from block trees
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SkeletonNode:
    """One derived loop-vertex node of a skeleton graph.

    ``block_vertex`` is the tree vertex the node came from; ``corners``
    lists (tree edge index, origin scale) marks, where the origin scale is
    the scale of the block vertex at the other end of that tree edge.
    """

    block_vertex: int
    scale: int
    corners: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class SkeletonGraph:
    nodes: tuple[SkeletonNode, ...]
    edges: tuple[tuple[int, int, int], ...]  # (node index, node index, tree edge)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_components(self) -> int:
        return self.n_nodes - self.n_edges

    def quadruple_pairs(self) -> tuple[tuple[int, int, int], ...]:
        """Coloured copies of every edge: 4 per tree edge."""
        out = []
        for colour in COLOURS:
            for a, b, e in self.edges:
                out.append((a, b, e * 10 + colour))
        return tuple(out)


def skeleton_graph(
    tree: Forest,
    partitions: Mapping[int, Sequence[Sequence[int]]],
    scales: Sequence[int],
) -> SkeletonGraph:
    """Split each block vertex into nodes according to endpoint partitions.

    ``tree`` is a spanning tree of the block; each tree edge contributes one
    derivative endpoint at each of its two vertices.  ``partitions[v]`` is a
    partition of the incident tree-edge indices at vertex ``v``; each part
    becomes one node.  Since splitting tree vertices keeps the edge set
    acyclic, the result is a forest with ``len(tree.edges)`` edges.
    """
    if not tree.is_spanning_tree:
        raise ValueError("the block graph must be a spanning tree")
    if len(scales) != tree.n_vertices:
        raise ValueError("one scale per block vertex is required")
    incident: dict[int, list[int]] = {v: [] for v in range(tree.n_vertices)}
    for idx, (a, b) in enumerate(tree.edges):
        incident[a].append(idx)
        incident[b].append(idx)
    nodes: list[SkeletonNode] = []
    owner: dict[tuple[int, int], int] = {}  # (vertex, tree edge) -> node index
    for v in range(tree.n_vertices):
        parts = [tuple(p) for p in partitions.get(v, [tuple(incident[v])])]
        flat = sorted(x for p in parts for x in p)
        if flat != sorted(incident[v]):
            raise ValueError(
                f"partition at vertex {v} must cover its incident tree edges exactly"
            )
        if not parts and not incident[v]:
            parts = [()]
        for part in parts:
            corners = []
            for e in part:
                a, b = tree.edges[e]
                other = b if a == v else a
                corners.append((e, scales[other]))
            idx = len(nodes)
            nodes.append(SkeletonNode(v, scales[v], tuple(sorted(corners))))
            for e in part:
                owner[(v, e)] = idx
    edges = []
    for idx, (a, b) in enumerate(tree.edges):
        edges.append((owner[(a, idx)], owner[(b, idx)], idx))
    graph = SkeletonGraph(tuple(nodes), tuple(edges))
    b = tree.n_vertices
    if not (b <= graph.n_nodes <= max(b, 2 * (b - 1))):
        raise InvariantViolation(
            f"skeleton node count {graph.n_nodes} outside [{b}, {2 * (b - 1)}]"
        )
    return graph


def enumerate_skeletons(tree: Forest, scales: Sequence[int]) -> Iterator[SkeletonGraph]:
    """All skeleton graphs over every endpoint partition of every vertex."""
    incident: dict[int, list[int]] = {v: [] for v in range(tree.n_vertices)}
    for idx, (a, b) in enumerate(tree.edges):
        incident[a].append(idx)
        incident[b].append(idx)
    per_vertex = [list(set_partitions(incident[v])) for v in range(tree.n_vertices)]
    for combo in itertools.product(*per_vertex):
        partitions = {v: combo[v] for v in range(tree.n_vertices)}
        yield skeleton_graph(tree, partitions, scales)
