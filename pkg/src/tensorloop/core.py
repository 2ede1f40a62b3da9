"""Shared configuration, index arithmetic, slice cutoffs and domain predicates.

Everything downstream is rooted in :class:`ModelConfig`: the box cutoff
``n_cut`` for momentum indices, the integer slice ratio ``slice_ratio`` with
its highest slice ``j_max``, the complex coupling ``g`` (with ``lam`` the
principal square root, so ``lam**2 == g``), the cardioid radius ``rho`` and the
auxiliary cutoff ``aux_cut`` used for sums whose natural range is all of Z.

Exact quantities are :class:`fractions.Fraction`; floating quantities are
complex floats. Nothing here (or downstream) converts silently between the box
cutoff and slice cutoffs: slices only enter through :func:`slice_indicator`.
"""

from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator, Sequence, Union

Scalar = Union[Fraction, int, float, complex]

COLOURS: tuple[int, int, int, int] = (1, 2, 3, 4)

#: Default cap on the dense Hilbert-space dimension (2*n_cut+1)**4.
DEFAULT_DIM_CAP = 10_000


class InvariantViolation(RuntimeError):
    """A runtime audit failed: a quantity left its guaranteed domain.

    Raised (never silently swallowed) when e.g. a resolvent exceeds its
    cardioid norm bound, a matrix logarithm hits its branch cut, or a
    security index fails to decrease strictly along an expansion branch.
    """


def complement(colour: int) -> tuple[int, ...]:
    """The three colours other than ``colour``."""
    if colour not in COLOURS:
        raise ValueError(f"colour must be one of {COLOURS}, got {colour!r}")
    return tuple(c for c in COLOURS if c != colour)


@dataclass(frozen=True)
class Momentum4:
    """A rank-4 integer momentum ``(n_1, n_2, n_3, n_4)``."""

    components: tuple[int, int, int, int]

    def __post_init__(self) -> None:
        if len(self.components) != 4 or not all(
            isinstance(c, int) for c in self.components
        ):
            raise ValueError("Momentum4 needs exactly four integer components")

    @property
    def norm_sq(self) -> int:
        return sum(c * c for c in self.components)

    def component(self, colour: int) -> int:
        return self.components[colour - 1]

    def in_box(self, n_cut: int) -> bool:
        return all(-n_cut <= c <= n_cut for c in self.components)

    def __iter__(self) -> Iterator[int]:
        return iter(self.components)


def _norm_sq(n: "Momentum4 | Sequence[int] | int") -> int:
    """Squared Euclidean norm of a momentum given as tuple, Momentum4 or n^2."""
    if isinstance(n, Momentum4):
        return n.norm_sq
    if isinstance(n, int):
        if n < 0:
            raise ValueError("a bare integer momentum argument means norm_sq >= 0")
        return n
    return sum(int(c) * int(c) for c in n)


@dataclass(frozen=True)
class ModelConfig:
    """Immutable model parameters.

    ``coupling`` is the quartic coupling ``g``; ``lam`` (property) is its
    principal square root. ``rho`` bounds the cardioid domain
    ``|g| < rho * cos(arg(g)/2)**2``. ``aux_cut`` truncates sums that range
    over all of Z (it defaults to ``n_cut`` when negative).
    """

    n_cut: int = 1
    slice_ratio: int = 2
    j_max: int = 4
    coupling: complex = complex(Fraction(1, 100))
    rho: float = 0.125
    aux_cut: int = -1

    def __post_init__(self) -> None:
        if self.n_cut < 0:
            raise ValueError("n_cut must be >= 0")
        if not isinstance(self.slice_ratio, int) or self.slice_ratio < 2:
            raise ValueError("slice_ratio must be an integer >= 2")
        if self.j_max < 1:
            raise ValueError("j_max must be >= 1")
        if self.rho <= 0:
            raise ValueError("rho must be positive")

    @property
    def lam(self) -> complex:
        """Principal square root of the coupling (so ``lam**2 == coupling``)."""
        return cmath.sqrt(complex(self.coupling))

    @property
    def effective_aux_cut(self) -> int:
        return self.aux_cut if self.aux_cut >= 0 else self.n_cut

    @property
    def dim(self) -> int:
        """Dense Hilbert-space dimension (2*n_cut+1)**4."""
        return (2 * self.n_cut + 1) ** 4

    def check_dim(self, cap: int = DEFAULT_DIM_CAP) -> None:
        if self.dim > cap:
            raise ValueError(
                f"dense dimension {self.dim} exceeds the cap {cap}; "
                f"lower n_cut or raise the cap explicitly"
            )

    def as_dict(self) -> dict:
        g = complex(self.coupling)
        return {
            "n_cut": self.n_cut,
            "slice_ratio": self.slice_ratio,
            "j_max": self.j_max,
            "g_re": g.real,
            "g_im": g.imag,
            "rho": self.rho,
            "aux_cut": self.effective_aux_cut,
            "lambda_branch": "principal",
        }


def iter_box(n_cut: int, dims: int = 4) -> Iterator[tuple[int, ...]]:
    """All integer points of ``[-n_cut, n_cut]**dims`` in lexicographic order."""
    if dims == 0:
        yield ()
        return
    for head in range(-n_cut, n_cut + 1):
        for tail in iter_box(n_cut, dims - 1):
            yield (head, *tail)


def slice_indicator(
    j: int,
    n: "Momentum4 | Sequence[int] | int",
    mode: str = "leq",
    *,
    slice_ratio: int,
) -> bool:
    """Sharp momentum-slice cutoff.

    ``leq`` mode: is ``1 + ||n||^2 <= M**(2 j)``?  ``exact`` mode: does the
    momentum fall in slice ``j`` precisely, i.e. leq at ``j`` but not at
    ``j - 1`` (slice 1 collects everything below ``M**2``)?  ``n`` may be a
    :class:`Momentum4`, a component sequence, or a bare ``norm_sq`` integer.
    """
    if j < 1:
        raise ValueError("slice index must be >= 1")
    if slice_ratio < 2:
        raise ValueError("slice_ratio must be >= 2")
    weight = 1 + _norm_sq(n)
    if mode == "leq":
        return weight <= slice_ratio ** (2 * j)
    if mode == "exact":
        if j == 1:
            return weight <= slice_ratio ** 2
        return slice_ratio ** (2 * (j - 1)) < weight <= slice_ratio ** (2 * j)
    raise ValueError(f"mode must be 'leq' or 'exact', got {mode!r}")


def slice_of(n: "Momentum4 | Sequence[int] | int", *, slice_ratio: int) -> int:
    """The unique slice index ``j >= 1`` with ``slice_indicator(j, n, 'exact')``."""
    weight = 1 + _norm_sq(n)
    j = 1
    while weight > slice_ratio ** (2 * j):
        j += 1
    return j


def in_cardioid(g: complex, rho: float) -> bool:
    """Is ``g`` inside the cardioid ``|g| < rho * cos(arg(g)/2)**2``?

    The tip ``g = 0`` counts as inside; the negative real axis
    (``|arg g| = pi``) is excluded.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    g = complex(g)
    if g == 0:
        return True
    phi = cmath.phase(g)
    if abs(phi) >= math.pi:
        return False
    return abs(g) < rho * math.cos(phi / 2.0) ** 2


# ---------------------------------------------------------------------------
# Config files: a flat key-value document, either JSON or "key = value" lines.
# ---------------------------------------------------------------------------

_CONFIG_KEYS = ("n_cut", "slice_ratio", "j_max", "g_re", "g_im", "rho", "aux_cut")


def _parse_flat_text(text: str) -> dict:
    data: dict = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, value = line.split("=", 1)
        elif ":" in line:
            key, value = line.split(":", 1)
        else:
            raise ValueError(f"unparseable config line: {raw!r}")
        data[key.strip()] = value.strip()
    return data


def load_config(path: "str | Path", overrides: dict | None = None) -> ModelConfig:
    """Load a :class:`ModelConfig` from a flat key-value file.

    Recognized keys: ``n_cut, slice_ratio, j_max, g_re, g_im, rho, aux_cut``.
    ``overrides`` (e.g. from CLI flags) take precedence over file values.
    """
    text = Path(path).read_text()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        data = json.loads(text)
    else:
        data = _parse_flat_text(text)
    merged: dict = {k: v for k, v in data.items() if k in _CONFIG_KEYS}
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    return config_from_flat(merged)


def config_from_flat(data: dict) -> ModelConfig:
    """Build a config from flat keys (strings or numbers accepted)."""

    def geti(key: str, default: int) -> int:
        return int(data.get(key, default))

    def getf(key: str, default: float) -> float:
        return float(data.get(key, default))

    g = complex(getf("g_re", 0.01), getf("g_im", 0.0))
    return ModelConfig(
        n_cut=geti("n_cut", 1),
        slice_ratio=geti("slice_ratio", 2),
        j_max=geti("j_max", 4),
        coupling=g,
        rho=getf("rho", 0.125),
        aux_cut=geti("aux_cut", -1),
    )
