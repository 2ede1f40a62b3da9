"""Securing of resolvent chord diagrams and iterated Cauchy-Schwarz cuts.

This module works with the trace words left over after a tensor-model
amplitude has been rewritten as a product of cyclic words of operator
factors.  Each connected component is a single cyclic word (a chord
diagram read counterclockwise) whose entries are:

``res``
    a resolvent factor (unsafe);
``sigma``
    an uncontracted matrix-field insertion (unsafe, removed by
    :func:`contract_sigmas`);
``tree``
    one half of an edge that joins two formerly distinct trace
    components (unsafe);
``loop``
    one half of a contraction edge internal to a component (safe);
``dblock``
    a renormalized counterterm block (safe).

A resolvent is *menaced* when a half tree edge sits within six safe
elements of it; the deficiency ``m`` adds up ``6 - d`` over all such
admissible pairs and the measure ``psi = 18*(c - 1) + m`` strictly
decreases along every expansion step of :func:`secure`.  Once every
admissible pair sits at distance exactly six, iterated Cauchy-Schwarz
cuts (:func:`cut_scheme`) reduce the word to resolvent-free pieces with
dyadic exponents, and :func:`exponent_audit` double-checks the
bookkeeping of marked corner scales along the cut tree.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Sequence

from .core import InvariantViolation

__all__ = [
    "Item",
    "ResolventDiagram",
    "AdmissiblePair",
    "SecurityState",
    "DiagramBatch",
    "build_diagram",
    "security_state",
    "expand_left",
    "expand_right",
    "choose_expand",
    "secure",
    "between_resolvents_check",
    "contract_sigmas",
    "contraction_step_targets",
    "cut_scheme",
    "convergence_predicate",
    "exponent_audit",
    "leaf_count_bound",
    "secured_example",
    "random_diagram",
    "diagram_from_skeleton",
]

ITEM_KINDS = frozenset({"res", "sigma", "tree", "loop", "dblock"})
SAFE_KINDS = frozenset({"loop", "dblock"})
HALF_KINDS = frozenset({"tree", "loop"})
SATURATION = 6
EXPANSION_GATE = 5


@dataclass(frozen=True)
class Item:
    """One factor of a cyclic trace word."""

    uid: int
    kind: str
    marks: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in ITEM_KINDS:
            raise ValueError(f"unknown item kind {self.kind!r}")
        if self.kind == "res" and self.marks:
            raise ValueError("resolvent factors carry no scale marks")
        if any((not isinstance(m, int)) or m < 0 for m in self.marks):
            raise ValueError("scale marks must be non-negative integers")

    @property
    def safe(self) -> bool:
        return self.kind in SAFE_KINDS


@dataclass(frozen=True)
class ResolventDiagram:
    """A product of cyclic trace words with paired half edges.

    ``words`` lists the components; each word is read counterclockwise
    (increasing index, cyclically).  ``pairs`` matches the uids of half
    edges two by two; ``loop`` halves always pair within one word,
    ``tree`` halves may pair across words (a bridge between two trace
    components) or within one word (after components have been merged).
    """

    words: tuple[tuple[Item, ...], ...]
    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        seen: dict[int, Item] = {}
        for word in self.words:
            for item in word:
                if item.uid in seen:
                    raise ValueError(f"duplicate item uid {item.uid}")
                seen[item.uid] = item
        paired: set[int] = set()
        for a, b in self.pairs:
            if a == b:
                raise ValueError("a half edge cannot pair with itself")
            for uid in (a, b):
                if uid not in seen:
                    raise ValueError(f"pair references unknown uid {uid}")
                if seen[uid].kind not in HALF_KINDS:
                    raise ValueError("only tree/loop halves can be paired")
                if uid in paired:
                    raise ValueError(f"uid {uid} paired twice")
                paired.add(uid)
            if seen[a].kind != seen[b].kind:
                raise ValueError("paired halves must share a kind")
            if seen[a].kind == "loop":
                wa = self._word_index_of(a)
                wb = self._word_index_of(b)
                if wa != wb:
                    raise ValueError("loop halves must pair within one word")
        for uid, item in seen.items():
            if item.kind in HALF_KINDS and uid not in paired:
                raise ValueError(f"unpaired half edge uid {uid}")

    def _word_index_of(self, uid: int) -> int:
        for i, word in enumerate(self.words):
            for item in word:
                if item.uid == uid:
                    return i
        raise KeyError(uid)

    # -- basic counters -------------------------------------------------
    @property
    def n_components(self) -> int:
        return len(self.words)

    @property
    def n_resolvents(self) -> int:
        return sum(1 for w in self.words for it in w if it.kind == "res")

    @property
    def n_sigmas(self) -> int:
        return sum(1 for w in self.words for it in w if it.kind == "sigma")

    @property
    def n_edges(self) -> int:
        return len(self.pairs)

    def edge_kinds(self) -> dict[str, int]:
        """Count full edges by kind (``tree`` / ``loop``)."""
        by_uid = {it.uid: it for w in self.words for it in w}
        counts = {"tree": 0, "loop": 0}
        for a, _b in self.pairs:
            counts[by_uid[a].kind] += 1
        return counts

    def max_uid(self) -> int:
        return max((it.uid for w in self.words for it in w), default=-1)

    def locate(self, uid: int) -> tuple[int, int]:
        """Return (word index, position) of the item with this uid."""
        for i, word in enumerate(self.words):
            for p, item in enumerate(word):
                if item.uid == uid:
                    return i, p
        raise KeyError(uid)

    def resolvent_uids(self) -> tuple[int, ...]:
        return tuple(
            it.uid for w in self.words for it in w if it.kind == "res"
        )

    def mark_counts(self) -> dict[int, int]:
        """Number of marked corners per scale."""
        counts: dict[int, int] = {}
        for word in self.words:
            for item in word:
                for mark in item.marks:
                    counts[mark] = counts.get(mark, 0) + 1
        return counts

    def separation_ok(self) -> bool:
        """Check that consecutive resolvents stay apart.

        Every maximal run of items between two cyclically consecutive
        resolvents of a word must contain a half edge, an insertion, or
        at least three safe elements.  All diagram constructors in this
        module maintain the property; it is what makes the expansion
        measure strictly decrease.
        """
        for word in self.words:
            res_pos = [p for p, it in enumerate(word) if it.kind == "res"]
            if not res_pos:
                continue
            n = len(word)
            for idx, p in enumerate(res_pos):
                q = res_pos[(idx + 1) % len(res_pos)]
                gap_len = (q - p - 1) % n if len(res_pos) > 1 else n - 1
                gap = [word[(p + 1 + k) % n] for k in range(gap_len)]
                has_half = any(
                    it.kind in HALF_KINDS or it.kind == "sigma" for it in gap
                )
                safe = sum(1 for it in gap if it.safe)
                if not has_half and safe < 3:
                    return False
        return True

    # -- serialization ---------------------------------------------------
    def to_json(self) -> str:
        partner: dict[int, int] = {}
        for a, b in self.pairs:
            partner[a] = b
            partner[b] = a
        labels: dict[int, str] = {}
        next_label = 0
        for word in self.words:
            for item in word:
                if item.uid in partner and item.uid not in labels:
                    name = f"e{next_label}"
                    next_label += 1
                    labels[item.uid] = name
                    labels[partner[item.uid]] = name
        payload = {
            "words": [
                [
                    {
                        "kind": it.kind,
                        "marks": list(it.marks),
                        "edge": labels.get(it.uid),
                    }
                    for it in word
                ]
                for word in self.words
            ]
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ResolventDiagram":
        payload = json.loads(text)
        words: list[list[Item]] = []
        uid = 0
        by_label: dict[str, list[int]] = {}
        for word_spec in payload["words"]:
            word: list[Item] = []
            for spec in word_spec:
                item = Item(uid, spec["kind"], tuple(spec.get("marks", ())))
                if spec.get("edge") is not None:
                    by_label.setdefault(spec["edge"], []).append(uid)
                word.append(item)
                uid += 1
            words.append(word)
        pairs = []
        for label, uids in sorted(by_label.items()):
            if len(uids) != 2:
                raise ValueError(f"edge label {label!r} used {len(uids)} times")
            pairs.append((uids[0], uids[1]))
        return cls(tuple(tuple(w) for w in words), tuple(pairs))


def build_diagram(word_specs: Sequence[Sequence[str]]) -> ResolventDiagram:
    """Build a diagram from compact item strings.

    Each item is ``kind[:label][!scale...]``; halves sharing a label are
    paired.  Example: ``[["tree:a", "dblock!2", "res"], ["tree:a"]]``.
    """
    words: list[tuple[Item, ...]] = []
    by_label: dict[str, list[int]] = {}
    uid = 0
    for spec_word in word_specs:
        word: list[Item] = []
        for spec in spec_word:
            marks: tuple[int, ...] = ()
            if "!" in spec:
                head, *mark_bits = spec.split("!")
                marks = tuple(int(m) for m in mark_bits)
            else:
                head = spec
            if ":" in head:
                kind, label = head.split(":", 1)
                by_label.setdefault(label, []).append(uid)
            else:
                kind = head
            word.append(Item(uid, kind, marks))
            uid += 1
        words.append(tuple(word))
    pairs = []
    for label, uids in sorted(by_label.items()):
        if len(uids) != 2:
            raise ValueError(f"edge label {label!r} used {len(uids)} times")
        pairs.append((uids[0], uids[1]))
    return ResolventDiagram(tuple(words), tuple(pairs))


# ---------------------------------------------------------------------------
# security state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdmissiblePair:
    """A half tree edge menacing a resolvent across only safe elements."""

    word_index: int
    tree_uid: int
    resolvent_uid: int
    side: str  # side of the resolvent on which the tree half sits
    distance: int

    def __post_init__(self) -> None:
        if self.side not in ("left", "right"):
            raise ValueError("side must be 'left' or 'right'")
        if not 0 <= self.distance <= SATURATION:
            raise ValueError("admissible distances lie in [0, 6]")


@dataclass(frozen=True)
class SecurityState:
    pairs: tuple[AdmissiblePair, ...]
    components: int
    deficiency: int
    psi: int
    secured: bool

    def component_deficiency(self, word_index: int) -> int:
        return sum(
            SATURATION - p.distance
            for p in self.pairs
            if p.word_index == word_index
        )

    def component_secured(self, word_index: int) -> bool:
        return self.component_deficiency(word_index) == 0


def _scan(word: Sequence[Item], pos: int, step: int) -> tuple[int, Item | None]:
    """Walk from ``pos`` in direction ``step``; count the leading safe run.

    Returns the run length and the first unsafe item met, or ``None``
    when the walk wraps around to ``pos`` without meeting one.
    """
    n = len(word)
    count = 0
    for k in range(1, n):
        item = word[(pos + step * k) % n]
        if item.safe:
            count += 1
        else:
            return count, item
    return count, None


def security_state(diagram: ResolventDiagram) -> SecurityState:
    """Enumerate admissible (tree half, resolvent) pairs and measure psi.

    A pair is admissible when the half tree edge is separated from the
    resolvent by at most six consecutive safe elements on one side; the
    deficiency adds ``6 - distance`` over all pairs and the diagram is
    secured exactly when the deficiency vanishes.
    """
    pairs: list[AdmissiblePair] = []
    for i, word in enumerate(diagram.words):
        for pos, item in enumerate(word):
            if item.kind != "res":
                continue
            for side, step in (("left", -1), ("right", 1)):
                run, blocker = _scan(word, pos, step)
                if (
                    blocker is not None
                    and blocker.kind == "tree"
                    and run <= SATURATION
                ):
                    pairs.append(
                        AdmissiblePair(i, blocker.uid, item.uid, side, run)
                    )
    m = sum(SATURATION - p.distance for p in pairs)
    c = diagram.n_components
    psi = 18 * max(0, c - 1) + m
    return SecurityState(tuple(pairs), c, m, psi, m == 0)


# ---------------------------------------------------------------------------
# expansions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiagramBatch:
    """Diagrams plus the branch labels that produced them."""

    diagrams: tuple[ResolventDiagram, ...]
    provenance: tuple[str, ...]
    stats: Mapping[str, int | str | bool] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.diagrams) != len(self.provenance):
            raise ValueError("one provenance word per diagram required")

    def __len__(self) -> int:
        return len(self.diagrams)

    def __iter__(self) -> Iterator[tuple[ResolventDiagram, str]]:
        return iter(zip(self.diagrams, self.provenance))


def _component_resolvents(
    diagram: ResolventDiagram, component: int
) -> list[int]:
    word = diagram.words[component]
    return [p for p, it in enumerate(word) if it.kind == "res"]


def _split_resolvent(
    word: tuple[Item, ...], pos: int, half: Item, copy: Item
) -> tuple[Item, ...]:
    """Replace the resolvent at ``pos`` by (resolvent, half, fresh copy)."""
    return word[: pos + 1] + (half, copy) + word[pos + 1 :]


def _opened_at(word: tuple[Item, ...], pos: int) -> tuple[Item, ...]:
    """Linearize a cyclic word to start just after ``pos`` and end at it."""
    return word[pos + 1 :] + word[: pos + 1]


def _expand(
    diagram: ResolventDiagram, component: int, resolvent: int, side: str
) -> DiagramBatch:
    words = diagram.words
    if not 0 <= component < len(words):
        raise IndexError("component index out of range")
    res_positions = _component_resolvents(diagram, component)
    if not 0 <= resolvent < len(res_positions):
        raise IndexError("resolvent index out of range")
    pos = res_positions[resolvent]
    word = words[component]
    res_item = word[pos]
    uid = diagram.max_uid() + 1

    children: list[ResolventDiagram] = []
    labels: list[str] = []
    tag = "L" if side == "left" else "R"

    # identity child: the resolvent corner becomes a plain propagator
    # corner, i.e. the factor disappears from the word.
    reduced = word[:pos] + word[pos + 1 :]
    new_words = list(words)
    if reduced:
        new_words[component] = reduced
    else:
        del new_words[component]
    children.append(ResolventDiagram(tuple(new_words), diagram.pairs))
    labels.append(f"{tag}.identity")

    # counterterm child: a safe block appears next to the resolvent on
    # the expansion side.
    block = Item(uid, "dblock")
    if side == "left":
        grown = word[:pos] + (block,) + word[pos:]
    else:
        grown = word[: pos + 1] + (block,) + word[pos + 1 :]
    new_words = list(words)
    new_words[component] = grown
    children.append(ResolventDiagram(tuple(new_words), diagram.pairs))
    labels.append(f"{tag}.dblock")

    # contraction children: one per resolvent of the whole diagram.
    for t_word, t_pos, target in (
        (i, p, words[i][p])
        for i in range(len(words))
        for p in range(len(words[i]))
        if words[i][p].kind == "res"
    ):
        same = t_word == component
        kind = "loop" if same else "tree"
        near = Item(uid, kind)
        far = Item(uid + 1, kind)
        copy = Item(uid + 2, "res")
        new_pairs = diagram.pairs + ((near.uid, far.uid),)
        if same:
            base = word
            if side == "left":
                base = base[:pos] + (near,) + base[pos:]
                t_adj = t_pos + 1 if t_pos >= pos else t_pos
            else:
                base = base[: pos + 1] + (near,) + base[pos + 1 :]
                t_adj = t_pos + 1 if t_pos > pos else t_pos
            base = _split_resolvent(base, t_adj, far, copy)
            new_words = list(words)
            new_words[component] = base
            children.append(ResolventDiagram(tuple(new_words), new_pairs))
        else:
            split = _split_resolvent(words[t_word], t_pos, far, copy)
            far_pos = t_pos + 1
            opened = _opened_at(split, far_pos)
            if side == "left":
                merged = word[:pos] + (near,) + opened + word[pos:]
            else:
                merged = word[: pos + 1] + (near,) + opened + word[pos + 1 :]
            new_words = [
                w for i, w in enumerate(words) if i not in (component, t_word)
            ]
            new_words.insert(min(component, t_word), merged)
            children.append(ResolventDiagram(tuple(new_words), new_pairs))
        labels.append(f"{tag}.{kind}:{target.uid}")

    return DiagramBatch(
        tuple(children),
        tuple(labels),
        {"component": component, "resolvent": res_item.uid, "side": side},
    )


def expand_left(
    diagram: ResolventDiagram, component: int, resolvent: int
) -> DiagramBatch:
    """Expand the j-th resolvent of a component towards its left side.

    Children: the identity term (the resolvent corner becomes a plain
    propagator corner), the counterterm-block term, and one contraction
    term per resolvent of the diagram (a loop edge inside the component,
    or a tree edge that merges two components into a single word).
    """
    return _expand(diagram, component, resolvent, "left")


def expand_right(
    diagram: ResolventDiagram, component: int, resolvent: int
) -> DiagramBatch:
    """Mirror of :func:`expand_left`, acting on the right side."""
    return _expand(diagram, component, resolvent, "right")


def choose_expand(diagram: ResolventDiagram, component: int) -> DiagramBatch:
    """Pick the expansion mandated by the scanning rule.

    Starting from the root (the menaced resolvent with the smallest uid)
    and reading counterclockwise, expand the first resolvent that has a
    menacing half tree edge within five safe elements on one side, on
    that side.  Raises ``ValueError`` when the component is secured.
    """
    state = security_state(diagram)
    by_res: dict[int, dict[str, int]] = {}
    for p in state.pairs:
        if p.word_index == component:
            by_res.setdefault(p.resolvent_uid, {})[p.side] = p.distance
    if not any(d < SATURATION for dists in by_res.values() for d in dists.values()):
        raise ValueError("component is secured; nothing to expand")
    root_uid = min(by_res)
    res_positions = _component_resolvents(diagram, component)
    word = diagram.words[component]
    uid_order = [word[p].uid for p in res_positions]
    start = uid_order.index(root_uid)
    for k in range(len(uid_order)):
        j = (start + k) % len(uid_order)
        dists = by_res.get(uid_order[j], {})
        if dists.get("left", SATURATION + 1) <= EXPANSION_GATE:
            return expand_left(diagram, component, j)
        if dists.get("right", SATURATION + 1) <= EXPANSION_GATE:
            return expand_right(diagram, component, j)
    raise ValueError("component is secured; nothing to expand")


# ---------------------------------------------------------------------------
# securing loop
# ---------------------------------------------------------------------------

def between_resolvents_check(diagram: ResolventDiagram) -> bool:
    """Scanner for the separation property of secured words.

    Between two cyclically consecutive resolvents of a secured word
    there are at least three counterterm blocks or at least one half
    loop edge.
    """
    for word in diagram.words:
        res_pos = [p for p, it in enumerate(word) if it.kind == "res"]
        if not res_pos:
            continue
        n = len(word)
        for idx, p in enumerate(res_pos):
            q = res_pos[(idx + 1) % len(res_pos)]
            gap_len = (q - p - 1) % n if len(res_pos) > 1 else n - 1
            gap = [word[(p + 1 + k) % n] for k in range(gap_len)]
            dblocks = sum(1 for it in gap if it.kind == "dblock")
            loops = sum(1 for it in gap if it.kind == "loop")
            if dblocks < 3 and loops < 1:
                return False
    return True


def secure(
    diagram: ResolventDiagram,
    audit: bool = True,
    max_nodes: int = 2_000_000,
) -> DiagramBatch:
    """Expand until every admissible pair sits at distance exactly six.

    Processes a work queue of diagrams; secured ones are appended to the
    output, all others are replaced by their expansion children.  With
    ``audit`` on, every parent-to-child step must strictly decrease
    ``psi = 18*(c-1) + m`` and every leaf must pass the secured
    predicate and the between-resolvents scanner, else
    :class:`InvariantViolation` is raised.
    """
    if diagram.n_sigmas:
        raise ValueError("contract insertions before securing")
    if not diagram.separation_ok():
        raise ValueError("input words must keep resolvents separated")
    initial_state = security_state(diagram)
    initial_marks = diagram.mark_counts()
    leaves: list[ResolventDiagram] = []
    words: list[str] = []
    stack: list[tuple[ResolventDiagram, str, int, int]] = [
        (diagram, "", 0, initial_state.psi)
    ]
    nodes = 0
    max_depth = 0
    while stack:
        current, prov, depth, psi = stack.pop()
        nodes += 1
        if nodes > max_nodes:
            raise ValueError(f"expansion exceeded {max_nodes} nodes")
        state = security_state(current)
        max_depth = max(max_depth, depth)
        if state.secured:
            if audit:
                if not between_resolvents_check(current):
                    raise InvariantViolation(
                        "secured leaf fails the between-resolvents scanner"
                    )
                if current.mark_counts() != initial_marks:
                    raise InvariantViolation("scale marks were not preserved")
            leaves.append(current)
            words.append(prov)
            continue
        component = min(
            i
            for i in range(current.n_components)
            if not state.component_secured(i)
        )
        batch = choose_expand(current, component)
        for child, label in batch:
            child_psi = security_state(child).psi
            if audit and child_psi >= psi:
                raise InvariantViolation(
                    f"psi failed to decrease: {psi} -> {child_psi} at {label}"
                )
            stack.append(
                (child, f"{prov}/{label}" if prov else label, depth + 1, child_psi)
            )
    return DiagramBatch(
        tuple(leaves),
        tuple(words),
        {
            "leaves": len(leaves),
            "max_depth": max_depth,
            "psi_initial": initial_state.psi,
            "nodes": nodes,
        },
    )


def leaf_count_bound(block_size: int) -> int:
    """Worst-case number of secured leaves for a block of given size."""
    if block_size < 2:
        raise ValueError("the bound applies to blocks with at least 2 vertices")
    n = block_size - 1
    return (98 * n - 28) ** (42 * n - 30)


# ---------------------------------------------------------------------------
# insertion contraction
# ---------------------------------------------------------------------------

def _first_sigma(diagram: ResolventDiagram) -> tuple[int, int] | None:
    for i, word in enumerate(diagram.words):
        for p, item in enumerate(word):
            if item.kind == "sigma":
                return i, p
    return None


def _merge_words(
    words: Sequence[tuple[Item, ...]],
    host: int,
    host_pos: int,
    guest: int,
    guest_word: tuple[Item, ...],
    guest_anchor: int,
) -> list[tuple[Item, ...]]:
    """Splice ``guest_word`` (opened after its anchor) after ``host_pos``."""
    opened = _opened_at(guest_word, guest_anchor)
    merged = (
        words[host][: host_pos + 1] + opened + words[host][host_pos + 1 :]
    )
    out = [w for i, w in enumerate(words) if i not in (host, guest)]
    out.insert(min(host, guest), merged)
    return out


def _contract_pair(
    diagram: ResolventDiagram,
    s1: tuple[int, int],
    s2: tuple[int, int],
) -> ResolventDiagram:
    """Contract two insertions into the two halves of a new edge."""
    (w1, p1), (w2, p2) = s1, s2
    uid = diagram.max_uid() + 1
    same = w1 == w2
    kind = "loop" if same else "tree"
    a = Item(uid, kind, diagram.words[w1][p1].marks)
    b = Item(uid + 1, kind, diagram.words[w2][p2].marks)
    pairs = diagram.pairs + ((a.uid, b.uid),)
    words = list(diagram.words)
    if same:
        word = list(words[w1])
        word[p1] = a
        word[p2] = b
        words[w1] = tuple(word)
    else:
        host = list(words[w1])
        host[p1] = a
        words[w1] = tuple(host)
        guest = list(words[w2])
        guest[p2] = b
        words = _merge_words(words, w1, p1, w2, tuple(guest), p2)
    return ResolventDiagram(tuple(words), pairs)


def _contract_onto_resolvent(
    diagram: ResolventDiagram,
    sigma: tuple[int, int],
    target: tuple[int, int],
) -> ResolventDiagram:
    """Contract an insertion onto a resolvent, splitting it in two."""
    (ws, ps), (wt, pt) = sigma, target
    uid = diagram.max_uid() + 1
    same = ws == wt
    kind = "loop" if same else "tree"
    near = Item(uid, kind, diagram.words[ws][ps].marks)
    far = Item(uid + 1, kind)
    copy = Item(uid + 2, "res")
    pairs = diagram.pairs + ((near.uid, far.uid),)
    words = list(diagram.words)
    if same:
        word = list(words[ws])
        word[ps] = near
        word = word[: pt + 1] + [far, copy] + word[pt + 1 :]
        words[ws] = tuple(word)
    else:
        host = list(words[ws])
        host[ps] = near
        words[ws] = tuple(host)
        split = _split_resolvent(words[wt], pt, far, copy)
        words = _merge_words(words, ws, ps, wt, split, pt + 1)
    return ResolventDiagram(tuple(words), pairs)


def contraction_step_targets(diagram: ResolventDiagram) -> int:
    """Number of children produced by contracting the first insertion."""
    if _first_sigma(diagram) is None:
        return 0
    return (diagram.n_sigmas - 1) + diagram.n_resolvents


def contract_sigmas(
    diagram: ResolventDiagram, max_results: int = 1_000_000
) -> DiagramBatch:
    """Eliminate all insertions by repeated integration by parts.

    The first remaining insertion is contracted either with any other
    remaining insertion (adding one edge) or onto any resolvent (adding
    one edge plus two plain corners, the resolvent splitting in two);
    the procedure recurses until no insertion remains.  A diagram with a
    single unmatched insertion integrates to zero and is dropped.
    """
    out: list[ResolventDiagram] = []
    prov: list[str] = []
    stack: list[tuple[ResolventDiagram, str]] = [(diagram, "")]
    while stack:
        current, word = stack.pop()
        spot = _first_sigma(current)
        if spot is None:
            out.append(current)
            prov.append(word)
            if len(out) > max_results:
                raise ValueError("contraction produced too many diagrams")
            continue
        sigma_uid = current.words[spot[0]][spot[1]].uid
        children: list[tuple[ResolventDiagram, str]] = []
        for i, w in enumerate(current.words):
            for p, item in enumerate(w):
                if item.kind == "sigma" and (i, p) != spot:
                    children.append(
                        (
                            _contract_pair(current, spot, (i, p)),
                            f"ss:{sigma_uid}-{item.uid}",
                        )
                    )
                elif item.kind == "res":
                    children.append(
                        (
                            _contract_onto_resolvent(current, spot, (i, p)),
                            f"sr:{sigma_uid}-{item.uid}",
                        )
                    )
        for child, label in children:
            stack.append((child, f"{word}/{label}" if word else label))
    return DiagramBatch(tuple(out), tuple(prov), {"outputs": len(out)})


# ---------------------------------------------------------------------------
# iterated Cauchy-Schwarz cuts
# ---------------------------------------------------------------------------

def convergence_predicate(diagram: ResolventDiagram) -> bool:
    """Edge-count test for resolvent-free pieces.

    True when the piece keeps at least five tree edges, or two tree
    edges plus a loop edge, or two loop edges.
    """
    kinds = diagram.edge_kinds()
    t, l = kinds["tree"], kinds["loop"]
    return t >= 5 or (t >= 2 and l >= 1) or l >= 2


def _double_arc(
    diagram: ResolventDiagram,
    arc: list[int],
    cut_adjacent: dict[int, int],
    uid_start: int,
) -> ResolventDiagram:
    """Close an arc with its reversed mirror copy into a one-word diagram.

    ``arc`` lists positions in the (single) word; ``cut_adjacent`` maps
    item uids to the number of cut resolvents they were adjacent to.
    Marks on such items are kept on ``2 - count`` of their two copies,
    which realizes the corner bookkeeping of the cut recursion.
    """
    word = diagram.words[0]
    partner: dict[int, int] = {}
    for a, b in diagram.pairs:
        partner[a] = b
        partner[b] = a
    arc_items = [word[p] for p in arc]
    arc_uids = {it.uid for it in arc_items}
    uid = uid_start
    originals: list[Item] = []
    mirrors: list[Item] = []
    mirror_of: dict[int, int] = {}
    for item in arc_items:
        lost = cut_adjacent.get(item.uid, 0)
        keep_orig = item.marks if lost <= 1 else ()
        keep_mirr = item.marks if lost == 0 else ()
        originals.append(Item(uid, item.kind, keep_orig))
        mirror_of[item.uid] = uid + 1
        mirrors.append(Item(uid + 1, item.kind, keep_mirr))
        uid += 2
    orig_of = {it.uid: new.uid for it, new in zip(arc_items, originals)}
    new_word = tuple(originals) + tuple(reversed(mirrors))
    new_pairs: list[tuple[int, int]] = []
    for item in arc_items:
        if item.kind not in HALF_KINDS:
            continue
        other = partner[item.uid]
        if other in arc_uids:
            if item.uid < other:
                new_pairs.append((orig_of[item.uid], orig_of[other]))
                new_pairs.append((mirror_of[item.uid], mirror_of[other]))
        else:
            new_pairs.append((orig_of[item.uid], mirror_of[item.uid]))
    return ResolventDiagram((new_word,), tuple(new_pairs))


def _cyclic_slice(n: int, start: int, stop: int) -> list[int]:
    """Positions strictly between start and stop, walking forward."""
    out = []
    p = (start + 1) % n
    while p != stop:
        out.append(p)
        p = (p + 1) % n
    return out


def _adjacency_counts(
    word: tuple[Item, ...], cut_positions: list[int]
) -> dict[int, int]:
    n = len(word)
    counts: dict[int, int] = {}
    for cp in cut_positions:
        for q in ((cp - 1) % n, (cp + 1) % n):
            if q in cut_positions:
                continue
            uid = word[q].uid
            counts[uid] = counts.get(uid, 0) + 1
    return counts


def _odd_cut(
    diagram: ResolventDiagram,
) -> tuple[ResolventDiagram, ResolventDiagram]:
    """Cut through the root menaced resolvent and its saturated gap.

    The cut enters at the resolvent and exits between the third and
    fourth safe element of the six separating it from the tree half.
    """
    word = diagram.words[0]
    n = len(word)
    state = security_state(diagram)
    if not state.pairs:
        raise ValueError("odd cut requires a resolvent menaced by a tree half")
    root = min(
        (p for p in state.pairs),
        key=lambda p: (p.resolvent_uid, p.side != "left"),
    )
    pos = diagram.locate(root.resolvent_uid)[1]
    # the three safe elements nearest the resolvent stay together; the
    # cut exits between the third and the fourth one on the tree side
    if root.side == "left":
        arc_a = [(pos - 3) % n, (pos - 2) % n, (pos - 1) % n]
        arc_b = _cyclic_slice(n, pos, arc_a[0])
    else:
        arc_a = [(pos + 1) % n, (pos + 2) % n, (pos + 3) % n]
        arc_b = _cyclic_slice(n, arc_a[-1], pos)
    cut_adjacent = _adjacency_counts(word, [pos])
    uid0 = diagram.max_uid() + 1
    w0 = _double_arc(diagram, arc_a, cut_adjacent, uid0)
    w1 = _double_arc(diagram, arc_b, cut_adjacent, uid0)
    return w0, w1


def _even_cut(
    diagram: ResolventDiagram,
) -> tuple[ResolventDiagram, ResolventDiagram]:
    """Cut through two opposite resolvents of an even-resolvent word."""
    word = diagram.words[0]
    n = len(word)
    res_pos = [p for p, it in enumerate(word) if it.kind == "res"]
    r = len(res_pos)
    if r % 2:
        raise InvariantViolation("even cut on an odd number of resolvents")
    k = r // 2
    first_uid = min(word[p].uid for p in res_pos)
    start = next(i for i, p in enumerate(res_pos) if word[p].uid == first_uid)
    ordered = res_pos[start:] + res_pos[:start]
    p1, p2 = ordered[0], ordered[k]
    arc_a = _cyclic_slice(n, p1, p2)
    arc_b = _cyclic_slice(n, p2, p1)
    cut_adjacent = _adjacency_counts(word, [p1, p2])
    uid0 = diagram.max_uid() + 1
    w0 = _double_arc(diagram, arc_a, cut_adjacent, uid0)
    w1 = _double_arc(diagram, arc_b, cut_adjacent, uid0)
    return w0, w1


def cut_scheme(
    diagram: ResolventDiagram, audit: bool = True
) -> list[tuple[str, ResolventDiagram, Fraction]]:
    """Reduce a secured one-word diagram to resolvent-free pieces.

    Returns (binary word, piece, exponent) triples: an odd number of
    resolvents (or exactly two) triggers one odd cut, after which even
    cuts halve the resolvent count until none remains.  Exponents are
    the dyadic weights of the iterated Cauchy-Schwarz bounds; with
    ``audit`` on, every piece must pass :func:`convergence_predicate`.
    """
    if diagram.n_components != 1:
        raise ValueError("the cut scheme works one trace component at a time")
    if diagram.n_sigmas:
        raise ValueError("contract insertions before cutting")
    if not security_state(diagram).secured:
        raise ValueError("unsecured input rejected")
    leaves: list[tuple[str, ResolventDiagram, Fraction]] = []
    stack: list[tuple[ResolventDiagram, str, Fraction, bool]] = [
        (diagram, "", Fraction(1), True)
    ]
    while stack:
        current, label, weight, first = stack.pop()
        r = current.n_resolvents
        if r == 0:
            if audit and not convergence_predicate(current):
                raise InvariantViolation(
                    "cut produced a piece failing the convergence predicate"
                )
            leaves.append((label, current, weight))
            continue
        if first and (r == 2 or r % 2 == 1):
            w0, w1 = _odd_cut(current)
        else:
            w0, w1 = _even_cut(current)
        stack.append((w1, label + "1", weight / 2, False))
        stack.append((w0, label + "0", weight / 2, False))
    leaves.sort(key=lambda t: t[0])
    return leaves


def exponent_audit(
    diagram: ResolventDiagram,
    cuts: Sequence[tuple[str, ResolventDiagram, Fraction]],
) -> dict[int, Fraction]:
    """Cross-check marked-corner counts along a completed cut scheme.

    For each scale the weighted corner count over the pieces must equal
    ``c_a - c_{a,r}/2`` computed on the input, where ``c_a`` counts the
    marked corners of that scale and ``c_{a,r}`` those adjacent to a
    resolvent (with multiplicity when a corner touches two).  When
    ``c_a >= 4`` the result must be at least two.  The weighted edge
    count is conserved as well.
    """
    totals = diagram.mark_counts()
    adjacent: dict[int, int] = {a: 0 for a in totals}
    for word in diagram.words:
        n = len(word)
        for p, item in enumerate(word):
            if not item.marks:
                continue
            count = sum(
                1
                for q in ((p - 1) % n, (p + 1) % n)
                if n > 1 and word[q].kind == "res"
            )
            if count:
                for mark in item.marks:
                    adjacent[mark] += count
    recursive: dict[int, Fraction] = {a: Fraction(0) for a in totals}
    edge_weighted = Fraction(0)
    for _word, piece, weight in cuts:
        edge_weighted += weight * piece.n_edges
        for a, cnt in piece.mark_counts().items():
            recursive[a] = recursive.get(a, Fraction(0)) + weight * cnt
    if edge_weighted != diagram.n_edges:
        raise InvariantViolation(
            f"edge count not conserved: {edge_weighted} != {diagram.n_edges}"
        )
    out: dict[int, Fraction] = {}
    for a in sorted(totals):
        closed = totals[a] - Fraction(adjacent[a], 2)
        if recursive.get(a, Fraction(0)) != closed:
            raise InvariantViolation(
                f"scale {a}: recursive {recursive.get(a)} != closed {closed}"
            )
        if totals[a] >= 4 and closed < 2:
            raise InvariantViolation(
                f"scale {a}: residual corner weight {closed} below 2"
            )
        out[a] = closed
    return out


# ---------------------------------------------------------------------------
# constructors for corpora
# ---------------------------------------------------------------------------

def secured_example(
    n_resolvents: int, mark_scales: Sequence[int] = ()
) -> ResolventDiagram:
    """A single-word secured diagram with the requested resolvent count.

    Every menaced resolvent sits at distance exactly six from its tree
    half, saturated gaps mix loop halves and counterterm blocks, and
    each requested scale marks at least four corners.
    """
    if n_resolvents < 1:
        raise ValueError("need at least one resolvent")
    spec: list[str] = []
    loop_id = 0
    for i in range(n_resolvents):
        spec.append(f"tree:t{i // 2}")
        spec.extend(
            [
                f"loop:g{loop_id}",
                f"loop:g{loop_id}",
                "dblock",
                f"loop:g{loop_id + 1}",
                f"loop:g{loop_id + 1}",
                "dblock",
            ]
        )
        loop_id += 2
        spec.append("res")
        spec.extend(
            [
                f"loop:f{loop_id}",
                f"loop:f{loop_id}",
                "dblock",
                "dblock",
                f"loop:f{loop_id + 1}",
                f"loop:f{loop_id + 1}",
                "dblock",
            ]
        )
        loop_id += 2
    if n_resolvents % 2:
        spec.append(f"tree:t{n_resolvents // 2}")
        spec.extend(["dblock"] * 7)
    diagram = build_diagram([spec])
    if mark_scales:
        words = []
        safe_positions = [
            p
            for p, it in enumerate(diagram.words[0])
            if it.kind == "dblock"
        ]
        word = list(diagram.words[0])
        slot = 0
        for scale in mark_scales:
            for _ in range(4):
                p = safe_positions[slot % len(safe_positions)]
                item = word[p]
                word[p] = Item(item.uid, item.kind, item.marks + (scale,))
                slot += 1
        words.append(tuple(word))
        diagram = ResolventDiagram(tuple(words), diagram.pairs)
    state = security_state(diagram)
    if not state.secured:
        raise InvariantViolation("constructed example is not secured")
    return diagram


def random_diagram(rng, n_components: int | None = None) -> ResolventDiagram:
    """A small random diagram suitable as a securing work item.

    Components are joined in a chain by tree edges; the first word
    carries one or two resolvents kept a few safe elements away from
    any half tree edge (a large initial deficiency makes the expansion
    tree astronomically wide), the others mix counterterm blocks and
    internal loop edges.
    """
    c = n_components if n_components is not None else rng.randint(1, 3)
    specs: list[list[str]] = [[] for _ in range(c)]
    loop_id = 0
    for i in range(c):
        specs[i].append("dblock")
        if i + 1 < c:
            specs[i].append(f"tree:b{i}")
            specs[i + 1].append(f"tree:b{i}")
    for _ in range(rng.randint(1, 2)):
        gap = ["dblock"] * rng.randint(3, 5)
        if rng.random() < 0.7:
            gap[rng.randrange(len(gap) - 1)] = f"loop:l{loop_id}"
            gap[-1] = f"loop:l{loop_id}"
            loop_id += 1
        specs[0].extend(gap)
        specs[0].append("res")
        specs[0].extend(["dblock"] * rng.randint(3, 4))
    for i in range(1, c):
        for _ in range(rng.randint(0, 2)):
            specs[i].extend([f"loop:l{loop_id}", f"loop:l{loop_id}", "dblock"])
            loop_id += 1
    diagram = build_diagram(specs)
    if not diagram.separation_ok():
        raise InvariantViolation("random diagram broke the separation rule")
    return diagram


def diagram_from_skeleton(
    skeleton,
    copies: int = 4,
    sigmas: int = 0,
    resolvents: int = 0,
) -> ResolventDiagram:
    """Trace words for several copies of a skeleton forest.

    Each copy contributes one word per skeleton node: a half tree edge
    per corner (marked with the corner's origin scale) separated by
    counterterm blocks.  Half of the copies reverse their reading order
    (mirror conjugates).  ``sigmas`` insertions and ``resolvents``
    resolvent factors are distributed round-robin over the words, at
    most three insertions per word; a full contraction enumerates every
    pairing, so keep the insertion budget small.
    """
    word_specs: list[list[str]] = []
    for copy in range(copies):
        mirrored = copy >= copies - copies // 2
        for node in skeleton.nodes:
            spec: list[str] = []
            for edge_idx, scale in node.corners:
                spec.append(f"tree:c{copy}e{edge_idx}!{scale}")
                spec.append("dblock")
            if mirrored:
                spec = spec[::-1]
            word_specs.append(spec)
    for k in range(sigmas):
        word = word_specs[k % len(word_specs)]
        if sum(1 for it in word if it == "sigma") >= 3:
            raise ValueError("at most three insertions per word")
        word.extend(["sigma", "dblock"])
    for k in range(resolvents):
        word_specs[k % len(word_specs)].extend(
            ["dblock"] * 6 + ["res"] + ["dblock"] * 6
        )
    return build_diagram(word_specs)
