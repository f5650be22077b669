"""Quasi-continuum reservoirs and the finite surrogate models built from them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.integrate

from reskit.errors import ClusterOutsideContinuum, UnsupportedCoupling, WindowTooNarrow
from reskit.model import EigenvalueCluster, Model


@dataclass(frozen=True)
class SpectralDensity:
    """Reservoir spectral density J(omega) on omega >= 0.

    ``family="ohmic"`` is ``A * omega**s * omega_c**(1 - s) * exp(-omega/omega_c)``
    (s = 1 is the ohmic case proper); ``family="table"`` interpolates the
    given samples linearly and vanishes outside them.
    """

    family: str = "ohmic"
    A: float = 1.0
    s: float = 1.0
    omega_c: float = 1.0
    table_omega: tuple = ()
    table_values: tuple = ()

    def __post_init__(self):
        if self.family not in ("ohmic", "table"):
            raise ValueError(f"unknown spectral density family {self.family!r}")
        if self.family == "ohmic" and (self.A < 0 or self.omega_c <= 0 or self.s <= 0):
            raise ValueError("ohmic density needs A >= 0, s > 0, omega_c > 0")
        if self.family == "table" and len(self.table_omega) != len(self.table_values):
            raise ValueError("table density needs matching omega/value samples")

    def __call__(self, omega):
        w = np.asarray(omega, dtype=float)
        if self.family == "ohmic":
            with np.errstate(invalid="ignore", divide="ignore"):
                out = self.A * np.abs(w) ** self.s * self.omega_c ** (1 - self.s) * np.exp(-np.abs(w) / self.omega_c)
            return np.where(w >= 0, out, 0.0)
        return np.interp(w, self.table_omega, self.table_values, left=0.0, right=0.0)

    @property
    def upper(self) -> float:
        """Frequency beyond which J is negligible (used to bound quadrature)."""
        if self.family == "ohmic":
            return self.omega_c * (40.0 + 2 * self.s)
        return float(self.table_omega[-1])

    @classmethod
    def from_dict(cls, d: dict) -> "SpectralDensity":
        fam = d.get("family", "ohmic")
        if fam == "table":
            return cls("table", table_omega=tuple(d["omega"]), table_values=tuple(d["values"]))
        return cls(fam, float(d.get("A", 1.0)), float(d.get("s", 1.0)), float(d.get("omega_c", 1.0)))

    def to_dict(self) -> dict:
        if self.family == "table":
            return {"family": "table", "omega": list(self.table_omega), "values": list(self.table_values)}
        return {"family": self.family, "A": self.A, "s": self.s, "omega_c": self.omega_c}


def thermal_density(J: SpectralDensity, beta: float, u):
    """Coupling density on the signed frequency line,
    ``rho(u) = (2/pi) J(|u|) / |1 - exp(-beta u)|``.

    Satisfies ``rho(-u) = exp(-beta u) rho(u)``; ``beta = inf`` keeps only u > 0.
    """
    u = np.asarray(u, dtype=float)
    ju = (2 / np.pi) * J(np.abs(u))
    if np.isinf(beta):
        return np.where(u > 0, ju, 0.0)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        out = ju / np.abs(-np.expm1(-beta * u))
    return np.where(u == 0, 0.0, out)


@dataclass(frozen=True)
class Discretization:
    points: np.ndarray
    weights: np.ndarray
    couplings: np.ndarray
    scheme: str = "uniform"
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def spacing(self) -> float:
        return float(np.min(np.diff(self.points))) if self.n > 1 else 1.0

    @property
    def window(self) -> tuple:
        h = self.spacing
        return (float(self.points[0] - h / 2), float(self.points[-1] + h / 2))


def _nodes(lo: float, hi: float, n: int, scheme: str):
    if scheme == "uniform":
        h = (hi - lo) / n
        return lo + h * (np.arange(n) + 0.5), np.full(n, h)
    if scheme == "gauss":
        x, w = np.polynomial.legendre.leggauss(n)
        return 0.5 * (hi - lo) * x + 0.5 * (hi + lo), 0.5 * (hi - lo) * w
    raise ValueError(f"unknown scheme {scheme!r}")


def uniform_grid(lo: float, hi: float, n: int, scheme: str = "uniform") -> Discretization:
    """Plain grid on [lo, hi] with couplings ``sqrt(weight)`` (unit density)."""
    x, w = _nodes(lo, hi, n, scheme)
    return Discretization(x, w, np.sqrt(w), scheme)


def discretize(J: SpectralDensity, beta: float, n: int, window: tuple,
               scheme: str = "uniform", mass_tol: float = 0.01) -> Discretization:
    """Signed-frequency discretisation of the thermal coupling density.

    ``|g_k|**2 = rho(u_k) * w_k``; negative frequencies carry a minus sign.
    """
    if n < 100:
        raise ValueError("need at least 100 modes")
    lo, hi = map(float, window)
    x, w = _nodes(lo, hi, n, scheme)
    rho = thermal_density(J, beta, x)
    g = np.sqrt(rho * w) * np.where(x < 0, -1.0, 1.0)

    def f(u):
        return float(thermal_density(J, beta, u))

    top = max(J.upper, hi, -lo) * 2
    inside = scipy.integrate.quad(f, lo, 0, limit=200)[0] + scipy.integrate.quad(f, 0, hi, limit=200)[0]
    outside = 0.0
    if hi < top:
        outside += scipy.integrate.quad(f, hi, top, limit=200)[0]
    if lo > -top:
        outside += scipy.integrate.quad(f, -top, lo, limit=200)[0]
    total = inside + outside
    if total > 0 and outside > mass_tol * total:
        raise WindowTooNarrow(f"{100 * outside / total:.2f}% of the coupling mass lies outside {window}")
    return Discretization(x, w, g, scheme, {"beta": beta, "total_mass": total, "outside_mass": outside})


@dataclass(frozen=True)
class Channel:
    """A quasi-continuum and its coupling profiles to the cluster states.

    ``profile(x)`` returns an array of shape (len(x), M) where M is the
    total number of cluster states; the matrix element between cluster
    state b and mode k is ``profile(x_k)[b] * sqrt(w_k)``.
    """

    grid: Discretization
    profile: Callable


def build_friedrichs(clusters: Sequence, channels: Sequence[Channel], delta: float = 0.0,
                     continuum_kernel: Callable | None = None, meta: dict | None = None) -> Model:
    """Friedrichs-type surrogate: cluster states first, then every channel's modes.

    Parameters
    ----------
    clusters : sequence of (e, m)
    channels : sequence of Channel
    continuum_kernel : callable, optional
        Smooth kernel kappa(x, y); adds ``kappa(x_k, x_l) sqrt(w_k w_l)``
        between all continuum modes (all channels together).
    """
    sizes = [int(m) for _, m in clusters]
    n_c = sum(sizes)
    pts = np.concatenate([ch.grid.points for ch in channels])
    wts = np.concatenate([ch.grid.weights for ch in channels])
    for e, _ in clusters:
        if not any(ch.grid.window[0] < e < ch.grid.window[1] for ch in channels):
            raise ClusterOutsideContinuum(f"cluster energy {e:g} lies outside every channel")
    n = n_c + len(pts)
    l0 = np.zeros((n, n))
    energies = np.concatenate([np.full(m, e, dtype=float) for (e, _), m in zip(clusters, sizes)])
    l0[np.arange(n_c), np.arange(n_c)] = energies
    l0[np.arange(n_c, n), np.arange(n_c, n)] = pts
    coupling = np.zeros((n, n), dtype=complex)
    col = n_c
    for ch in channels:
        prof = np.asarray(ch.profile(ch.grid.points), dtype=complex).reshape(ch.grid.n, n_c)
        block = prof.T * np.sqrt(ch.grid.weights)[None, :]
        coupling[:n_c, col:col + ch.grid.n] = block
        coupling[col:col + ch.grid.n, :n_c] = block.conj().T
        col += ch.grid.n
    if continuum_kernel is not None:
        sw = np.sqrt(wts)
        k = np.asarray(continuum_kernel(pts[:, None], pts[None, :]), dtype=complex)
        coupling[n_c:, n_c:] += k * np.outer(sw, sw)
    cl = []
    start = 0
    for (e, _), m in zip(clusters, sizes):
        cl.append(EigenvalueCluster.on_indices(e, range(start, start + m), n))
        start += m
    spacing = min(ch.grid.spacing for ch in channels)
    info = {"builder": "friedrichs", "clusters": [[float(e), int(m)] for e, m in clusters]}
    info.update(meta or {})
    return Model(l0, coupling, float(delta), tuple(cl), spacing, info)


SYSTEM_LABELS = ("++", "+-", "-+", "--")


def build_spinboson_liouvillean_surrogate(eps: float, disc: Discretization, delta: float = 0.0,
                                          beta: float | None = None, coupling: str = "linear",
                                          truncation: int = 1) -> Model:
    """Single-excitation surrogate of the spin-boson Liouvillean.

    Basis: ``phi_ab (x) Omega`` (4 states, labels ``SYSTEM_LABELS``) followed
    by ``phi_ab (x) |u_k>`` in blocks of N modes per system label. The free
    part is ``L_S + u`` with ``H_S = (eps/2) sigma_z``; the interaction is
    ``G (x) 1 (x) phi(h) - 1 (x) conj(G) (x) phi(exp(-beta u/2) h)`` with
    ``G = sigma_x`` and ``<u_k|phi(h)|Omega> = g_k / sqrt(2)``.
    """
    if coupling != "linear":
        raise UnsupportedCoupling("only the linear field coupling has a matrix surrogate")
    if truncation != 1:
        raise UnsupportedCoupling("only the single-excitation sector is implemented")
    beta = float(disc.meta.get("beta", np.inf) if beta is None else beta)
    n_modes = disc.n
    energy = {"+": eps / 2, "-": -eps / 2}
    bohr = np.array([energy[a] - energy[b] for a, b in SYSTEM_LABELS])
    n = 4 + 4 * n_modes
    l0 = np.zeros(n)
    l0[:4] = bohr
    for s in range(4):
        l0[4 + s * n_modes: 4 + (s + 1) * n_modes] = bohr[s] + disc.points
    g = disc.couplings / np.sqrt(2)
    if np.isfinite(beta):
        with np.errstate(over="ignore", invalid="ignore"):
            thermal = np.where(g == 0, 0.0, g * np.exp(-beta * disc.points / 2))
    else:
        thermal = np.zeros_like(g)
    flip = {"+": "-", "-": "+"}
    index = {lab: k for k, lab in enumerate(SYSTEM_LABELS)}
    mat = np.zeros((n, n))
    for lab in SYSTEM_LABELS:
        a, b = lab
        src = index[lab]
        left = index[flip[a] + b]    # G acting on the left factor
        right = index[a + flip[b]]   # conj(G) acting on the right factor
        sl = slice(4 + left * n_modes, 4 + (left + 1) * n_modes)
        sr = slice(4 + right * n_modes, 4 + (right + 1) * n_modes)
        mat[sl, src] += g
        mat[sr, src] -= thermal
    mat = mat + mat.T
    clusters = (
        EigenvalueCluster.on_indices(0.0, [0, 3], n),
        EigenvalueCluster.on_indices(float(eps), [1], n),
        EigenvalueCluster.on_indices(float(-eps), [2], n),
    )
    info = {"builder": "spinboson_surrogate", "eps": eps, "beta": beta, "modes": n_modes}
    return Model(np.diag(l0), mat, float(delta), clusters, disc.spacing, info)
