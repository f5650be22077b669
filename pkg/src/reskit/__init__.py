"""Resonance expansions for embedded eigenvalues of finite surrogate models.

Modules: ``linop`` (matrices, projections, spectra), ``feshbach`` (Schur
complement map and its identities), ``resonance`` (level shifts, resonance
data), ``propagator`` (resonance expansion and contour route), ``bath``
(quasi-continuum surrogates), ``spinboson`` (arbitrary-coupling analytics)
and ``cli``.
"""

__version__ = "0.1.0"
