"""Combinatorial and numerical machinery for multiscale loop-vertex expansions
of a quartic melonic rank-4 tensor field model.

Subpackage map:

- ``core``: shared configuration, momentum/colour index arithmetic, sharp slice
  cutoffs, the cardioid analyticity-domain predicate.
- ``lattice``: exact and floating evaluation of propagators, counterterms,
  renormalized amplitudes, quadratic-form operators, resolvents and sliced
  interactions on truncated tensor Hilbert spaces.
- ``bkar``: forests, two-level jungles, weakening matrices, the forest-formula
  engine, set partitions, Grassmann minor factors.
- ``maps``: rotation-system combinatorial maps with coloured edges and labelled
  corners, faces, partial duality, chord diagrams, derivative-term and
  skeleton-graph generation, the divergence classifier.
- ``securing``: the contraction process, resolvent-securing algorithms with the
  termination measure, and the iterated Cauchy-Schwarz cutting scheme.
- ``powercount``: multiscale scale attributions, face-cost bounds, the encoded
  worst-cost tables with their regenerator, spare-power checks, scaling probes.
- ``oracle``: finite-dimensional Gaussian Wick oracle and the algebraic
  cancellation test bench, regularized determinants.
- ``cli``: command-line dispatch over all of the above.
"""

from __future__ import annotations

__all__ = [
    "core",
    "lattice",
    "bkar",
    "maps",
    "securing",
    "powercount",
    "oracle",
    "cli",
]

__version__ = "0.1.0"
