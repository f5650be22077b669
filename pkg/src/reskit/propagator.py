"""Resonance expansion of ``<phi, exp(itL) psi>`` and the contour route.

The expansion is

    sum over partially stable clusters:  exp(itE) <phi, Pi_E psi>
    sum over decaying branches:          exp(it(e + delta**2 a_j(e))) <phi, (Q_j + delta Qt_j) psi>

plus a remainder, measured here by subtraction from the exact propagator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from reskit.errors import NotPartiallyStable, QuadratureNotConverged, WindowTooSmall
from reskit.linop import Spectrum, as_cmatrix, eig, propagator_exact
from reskit.model import Model
from reskit.resonance import (
    DEFAULT_LIMIT,
    PARTIALLY_STABLE,
    ComplementData,
    LimitSettings,
    ResonanceData,
    resonance_data,
)

__all__ = [
    "Model",
    "DressedOperator",
    "ExpansionResult",
    "RemainderFit",
    "ContourConfig",
    "ContourResult",
    "stationary_projection",
    "decaying_operator",
    "expand",
    "remainder_fit",
    "fit_decay_rate",
    "contour_amplitude",
]


@dataclass(frozen=True)
class DressedOperator:
    """``c * [V K V^* + delta * (-V K Y - X K V^* + delta * X K Y)]``

    with ``X = R I P`` and ``Y = P I R`` evaluated at ``x - i0`` (R the
    reduced resolvent of the cluster complement) and K an operator on the
    cluster range in its own coordinates.
    """

    core: np.ndarray
    coefficient: complex
    x: float
    delta: float
    complement: ComplementData = field(repr=False)
    limit: LimitSettings = field(default=DEFAULT_LIMIT, repr=False)

    def amplitude(self, phi, psi) -> complex:
        """``<phi, op psi>``; the eps -> 0 limit is taken on the scalars."""
        comp = self.complement
        v = comp.basis
        phi = np.asarray(phi, dtype=complex)
        psi = np.asarray(psi, dtype=complex)
        vphi = v.conj().T @ phi
        vpsi = v.conj().T @ psi
        gphi = comp.gh_apply(phi)
        gpsi = comp.gh_apply(psi)
        m = v.shape[1]

        def pieces(z):
            # row phi^* X and column Y psi
            row = (gphi.conj() * comp._weights(z)) @ comp.b
            col = comp.b.conj().T @ (comp._weights(z) * gpsi)
            return np.concatenate([row, col])

        vec, _ = comp.boundary_limit(pieces, self.x, self.limit, "dressing amplitude")
        row, col = vec[:m], vec[m:]
        k = self.core
        d = self.delta
        val = vphi.conj() @ k @ vpsi + d * (-(vphi.conj() @ k @ col) - row @ k @ vpsi + d * (row @ k @ col))
        return complex(self.coefficient * val)

    def dense(self) -> np.ndarray:
        """Full matrix; the eps -> 0 limit is taken entrywise, which is only
        meaningful when the dressing stays bounded (e.g. at an embedded
        eigenvalue of L)."""
        comp = self.complement
        v = comp.basis
        k, d = self.core, self.delta
        # only R I P K and K P I R need to be bounded, so factor K = U S W^*
        # and take limits of R I P U and W^* P I R
        u, s, wh = np.linalg.svd(k)
        keep = s > 1e-12 * max(1.0, s.max(initial=0.0))
        u, s, wh = u[:, keep], s[keep], wh[keep]
        xu, _ = comp.boundary_limit(lambda z: comp.dressing_right(z) @ u, self.x, self.limit, "R I P")
        wy, _ = comp.boundary_limit(lambda z: wh @ comp.dressing_left(z), self.x, self.limit, "P I R")
        xk = (xu * s) @ wh
        ky = u @ (s[:, None] * wy)
        op = v @ k @ v.conj().T + d * (-(v @ ky) - xk @ v.conj().T + d * ((xu * s) @ wy))
        return self.coefficient * op


def stationary_projection(model: Model, rd: ResonanceData,
                          limit: LimitSettings = DEFAULT_LIMIT) -> DressedOperator:
    """Projection onto the perturbed eigenvalue E of a partially stable
    cluster, assembled from the Feshbach blocks at E."""
    if rd.classification != PARTIALLY_STABLE or rd.energy is None:
        raise NotPartiallyStable(f"cluster at e={rd.cluster.e:g} has no stable branch")
    coeff = 1.0 / (1.0 - model.delta ** 2 * rd.a0_prime_at_energy)
    return DressedOperator(rd.q0_at_energy, coeff, rd.energy, model.delta, rd.complement, limit)


def decaying_operator(model: Model, rd: ResonanceData, j: int,
                      limit: LimitSettings = DEFAULT_LIMIT) -> DressedOperator:
    """``Q_j(e) + delta * Qt_j`` for the decaying branch j."""
    return DressedOperator(rd.projections[j], 1.0, rd.cluster.e, model.delta, rd.complement, limit)


@dataclass
class ExpansionResult:
    times: np.ndarray
    expansion: np.ndarray
    exact: np.ndarray | None
    stationary_terms: list
    decaying_terms: list
    meta: dict = field(default_factory=dict)

    @property
    def remainder(self) -> np.ndarray | None:
        return None if self.exact is None else self.exact - self.expansion

    def stationary_value(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, dtype=complex)
        for energy, amp in self.stationary_terms:
            out = out + amp * np.exp(1j * t * energy)
        return out

    def rows(self):
        """(t, Re exact, Im exact, Re expansion, Im expansion, |R|, t|R|)"""
        r = np.abs(self.remainder) if self.exact is not None else np.full(len(self.times), np.nan)
        ex = self.exact if self.exact is not None else np.full(len(self.times), np.nan)
        for k, t in enumerate(self.times):
            yield (t, ex[k].real, ex[k].imag, self.expansion[k].real, self.expansion[k].imag, r[k], t * r[k])


def expand(model: Model, phi, psi, times, data=None, exact: bool = True,
           spectrum: Spectrum | None = None, limit: LimitSettings = DEFAULT_LIMIT) -> ExpansionResult:
    """Evaluate the resonance expansion on a time grid.

    ``data`` is a list of ResonanceData, one per cluster (computed when
    omitted). With ``exact=True`` the exact propagator is evaluated from the
    eigendecomposition of L and the remainder is their difference.
    """
    model.check_a1()
    if data is None:
        data = [resonance_data(model, c, limit=limit) for c in model.clusters]
    t = np.asarray(times, dtype=float)
    value = np.zeros(t.shape, dtype=complex)
    stationary, decaying = [], []
    for rd in data:
        if rd.classification == PARTIALLY_STABLE:
            amp = stationary_projection(model, rd, limit).amplitude(phi, psi)
            stationary.append((rd.energy, amp))
            value += amp * np.exp(1j * t * rd.energy)
        for j in rd.decaying_indices():
            amp = decaying_operator(model, rd, j, limit).amplitude(phi, psi)
            pole = rd.cluster.e + model.delta ** 2 * rd.eigenvalues[j]
            decaying.append((complex(pole), amp))
            value += amp * np.exp(1j * t * pole)
    ex = None
    if exact:
        ex = np.asarray(propagator_exact(model.generator, t, phi, psi, spectrum))
    meta = {"delta": model.delta, "n": model.n, "limit": limit.to_dict()}
    return ExpansionResult(t, value, ex, stationary, decaying, meta)


@dataclass(frozen=True)
class RemainderFit:
    amplitude: float
    exponent: float
    samples: int
    skipped: bool = False


def remainder_fit(result: ExpansionResult | None = None, t_min: float | None = None,
                  t_max: float | None = None, times=None, values=None,
                  bins: int = 0, floor: float = 1e-13) -> RemainderFit:
    """Least-squares fit ``log|R| = log C + p log t`` over a time window.

    With ``bins > 0`` the fit uses the maximum of |R| in each of ``bins``
    logarithmic time bins (the upper envelope), which removes the zeros of
    an oscillating remainder from the regression.
    """
    if result is not None:
        times, values = result.times, result.remainder
    t = np.asarray(times, dtype=float)
    r = np.abs(np.asarray(values))
    sel = np.ones(t.shape, bool)
    if t_min is not None:
        sel &= t >= t_min
    if t_max is not None:
        sel &= t <= t_max
    t, r = t[sel], r[sel]
    if len(t) < 20:
        raise WindowTooSmall(f"{len(t)} samples in the fit window; need at least 20")
    if np.max(r) <= floor:
        return RemainderFit(0.0, float("nan"), len(t), skipped=True)
    if bins:
        edges = np.geomspace(t[0], t[-1] * (1 + 1e-12), bins + 1)
        idx = np.clip(np.searchsorted(edges, t, side="right") - 1, 0, bins - 1)
        tt, rr = [], []
        for b in range(bins):
            mask = idx == b
            if np.any(mask):
                k = np.argmax(np.where(mask, r, -1))
                tt.append(t[k])
                rr.append(r[k])
        t, r = np.array(tt), np.array(rr)
    r = np.maximum(r, floor)
    p, logc = np.polyfit(np.log(t), np.log(r), 1)
    return RemainderFit(float(np.exp(logc)), float(p), int(sel.sum()))


def fit_decay_rate(times, values, stationary=0.0) -> float:
    """Rate k of the best fit ``|values - stationary| ~ C exp(-k t)``."""
    t = np.asarray(times, dtype=float)
    y = np.abs(np.asarray(values) - stationary)
    slope, _ = np.polyfit(t, np.log(y), 1)
    return float(-slope)


# contour route ---------------------------------------------------------------

@dataclass(frozen=True)
class ContourConfig:
    """Shifted line ``R - i w`` split into windows ``[e - alpha, e + alpha]``
    around each cluster energy and the remainder of the line.

    ``panel`` is the Gauss-Legendre panel width in units of w.
    """

    w: float
    alpha: float
    centers: tuple = ()
    nodes: int = 16
    panel: float = 1.0
    margin: float = 1.0

    def __post_init__(self):
        if self.w <= 0 or self.alpha <= 0:
            raise ValueError("w and alpha must be positive")
        if self.w >= 1:
            raise ValueError("w must be below 1")

    def to_dict(self) -> dict:
        return {"w": self.w, "alpha": self.alpha, "centers": list(self.centers),
                "nodes": self.nodes, "panel": self.panel, "margin": self.margin}


@dataclass(frozen=True)
class ContourResult:
    value: complex
    windows: dict
    tail: complex


class _ShiftedSolver:
    """``<phi, (T - z)^{-2} psi>`` for many z after one Householder
    tridiagonalisation ``L = Q T Q^*`` (no eigendecomposition involved)."""

    def __init__(self, h, phi, psi):
        h = as_cmatrix(h, square=True)
        t, q = scipy.linalg.hessenberg((h + h.conj().T) / 2, calc_q=True)
        self.diag = np.real(np.diag(t)).copy()
        self.off = np.diag(t, -1).copy()   # T[k+1, k]
        self.phi = q.conj().T @ np.asarray(phi, dtype=complex)
        self.psi = q.conj().T @ np.asarray(psi, dtype=complex)
        self.lo = float(np.min(self.diag - 2 * np.abs(np.r_[self.off, 0]) - np.abs(np.r_[0, self.off])))
        self.hi = float(np.max(self.diag + 2 * np.abs(np.r_[self.off, 0]) + np.abs(np.r_[0, self.off])))

    def _solve(self, z, rhs):
        # Thomas algorithm vectorised over z; pivots keep Im > 0 when Im z < 0
        n = len(self.diag)
        z = np.asarray(z)
        sub = self.off           # T[k+1, k]
        sup = self.off.conj()    # T[k, k+1]
        cp = np.empty((n, z.size), dtype=complex)
        dp = np.empty((n, z.size), dtype=complex)
        piv = self.diag[0] - z
        cp[0] = (sup[0] / piv) if n > 1 else 0
        dp[0] = rhs[0] / piv
        for k in range(1, n):
            piv = self.diag[k] - z - sub[k - 1] * cp[k - 1]
            if k < n - 1:
                cp[k] = sup[k] / piv
            dp[k] = (rhs[k] - sub[k - 1] * dp[k - 1]) / piv
        x = np.empty_like(dp)
        x[-1] = dp[-1]
        for k in range(n - 2, -1, -1):
            x[k] = dp[k] - cp[k] * x[k + 1]
        return x

    def squared(self, z) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        rhs = np.repeat(self.psi[:, None], z.size, axis=1)
        x = self._solve(z, rhs)
        y = self._solve(z, x)
        return self.phi.conj() @ y


def _gl_panels(a: float, b: float, width: float, nodes: int):
    k = max(1, int(np.ceil((b - a) / width)))
    xg, wg = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(a, b, k + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * xg[None, :]).ravel()
    wts = (half[:, None] * wg[None, :]).ravel()
    return x, wts


def _ray_nodes(t: float, nodes: int):
    """Nodes/weights on s in [0, inf) for integrands damped by exp(-t s)."""
    s_max = 40.0 / t
    edges = [0.0, min(0.25, s_max)]
    while edges[-1] < s_max:
        edges.append(min(2 * edges[-1], s_max))
    xs, ws = [], []
    xg, wg = np.polynomial.legendre.leggauss(nodes)
    for a, b in zip(edges[:-1], edges[1:]):
        xs.append(0.5 * (b - a) * xg + 0.5 * (b + a))
        ws.append(0.5 * (b - a) * wg)
    return np.concatenate(xs), np.concatenate(ws)


def contour_amplitude(h, phi, psi, t, config: ContourConfig, check: bool = True) -> ContourResult | list:
    """``<phi, exp(itH) psi>`` from
    ``(1/it) (1/2 pi i) * integral over R - i w of exp(itz) <phi, R_z^2 psi> dz``.

    ``h`` is a Model or a self-adjoint matrix; ``t`` a positive scalar or a
    sequence (a list of results is returned). The line is cut at
    ``|Re z| = X`` beyond the spectrum and the two tails are rotated onto
    vertical rays ``+-X - i w + i s``, where exp(itz) decays.
    """
    mat = h.generator if isinstance(h, Model) else h
    solver = _ShiftedSolver(mat, phi, psi)
    w = config.w
    x_lo, x_hi = solver.lo - config.margin, solver.hi + config.margin
    width = config.panel * w
    # segment boundaries: cluster windows and the gaps between them
    cuts = sorted({x_lo, x_hi} | {c - config.alpha for c in config.centers}
                  | {c + config.alpha for c in config.centers})
    cuts = [c for c in cuts if x_lo <= c <= x_hi]
    pieces = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        x, wt = _gl_panels(a, b, width, config.nodes)
        label = next((f"{c:g}" for c in config.centers
                      if c - config.alpha - 1e-12 <= a and b <= c + config.alpha + 1e-12), "inf")
        pieces.append((label, x, wt, solver.squared(x - 1j * w)))
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(ts <= 0):
        raise ValueError("contour_amplitude needs t > 0")
    out = []
    for tt in ts:
        pref = 1.0 / (1j * tt) / (2j * np.pi)
        windows = {}
        for label, x, wt, g in pieces:
            val = pref * np.sum(wt * np.exp(1j * tt * (x - 1j * w)) * g)
            windows[label] = windows.get(label, 0.0) + val
        s, ws = _ray_nodes(tt, config.nodes)
        tail = 0.0
        for x0, sign in ((x_hi, 1.0), (x_lo, -1.0)):
            z = x0 - 1j * w + 1j * s
            tail += sign * pref * np.sum(ws * 1j * np.exp(1j * tt * z) * solver.squared(z))
        windows["inf"] = windows.get("inf", 0.0) + tail
        total = complex(sum(windows.values()))
        if check and not np.isfinite(total):
            raise QuadratureNotConverged("contour quadrature produced a non-finite value")
        out.append(ContourResult(total, {k: complex(v) for k, v in windows.items()}, complex(tail)))
    return out[0] if np.ndim(t) == 0 else out
