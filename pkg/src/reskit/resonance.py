"""Level-shift operators, the reduced operator A_z and its spectral data.

For a cluster with projection P (eigenvalue e of L0) the Feshbach map of
``L - z`` onto Ran P is ``e - z + delta**2 * A_z`` with

    A_z = -P I (P^perp L P^perp - z)^{-1} I P.

Limits onto the real axis are taken from below (``z = x - i eps``) by
polynomial extrapolation in eps over a geometric eps ladder that stays well
above the level spacing of the quasi-continuum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from reskit.errors import (
    CircleTouchesSpectrum,
    DegenerateLevelShift,
    EmptyResonanceSet,
    FixedPointDiverged,
    LimitNotConverged,
    NotSeparating,
    OutsideWindow,
    PairingAmbiguous,
)
from reskit.linop import eig
from reskit.model import EigenvalueCluster, Model

UNSTABLE = "unstable"
PARTIALLY_STABLE = "partially_stable"

__all__ = [
    "EigenvalueCluster",
    "LimitSettings",
    "ComplementData",
    "LevelShiftData",
    "ResonanceData",
    "GapData",
    "neville_at_zero",
    "level_shift",
    "a_z",
    "riesz_projection",
    "resonance_data",
    "gaps",
]


@dataclass(frozen=True)
class LimitSettings:
    """Geometric eps ladder from ``factor * spacing`` up to ``eps_max``.

    The lower end keeps eps several level spacings above the discrete
    quasi-continuum; ``eps_max`` must stay below the distance to the nearest
    band edge or isolated level of the complement. The ladder always spans
    at least a factor 6.
    """

    factor: float = 4.0
    eps_max: float = 0.08
    count: int = 9
    rtol: float = 1e-7
    # derivatives resolve the discrete grid sooner; they get their own ladder
    deriv_factor: float = 6.0
    deriv_rtol: float = 1e-6

    def ladder(self, spacing: float, derivative: bool = False) -> np.ndarray:
        lo = (self.deriv_factor if derivative else self.factor) * spacing
        # coarse grids still get a ladder spanning a decent range
        return np.geomspace(lo, max(self.eps_max, 6 * lo), self.count)

    def to_dict(self) -> dict:
        return {"factor": self.factor, "eps_max": self.eps_max, "count": self.count,
                "rtol": self.rtol, "deriv_factor": self.deriv_factor, "deriv_rtol": self.deriv_rtol}


DEFAULT_LIMIT = LimitSettings()


def neville_at_zero(xs, ys):
    """Value at x = 0 of the interpolating polynomial through (xs, ys).

    ``ys`` may be a sequence of equally shaped arrays. Returns the final
    extrapolant and the one obtained without the last (largest) node.
    """
    xs = np.asarray(xs, dtype=float)
    p = [np.asarray(y, dtype=complex) for y in ys]
    k = len(xs)
    diag = [p[0]]
    # table[i] holds the extrapolant through nodes i..i+level
    table = list(p)
    for level in range(1, k):
        for i in range(k - level):
            x0, x1 = xs[i], xs[i + level]
            table[i] = (-x1 * table[i] + x0 * table[i + 1]) / (x0 - x1)
        diag.append(table[0])
    return diag[-1], diag[-2] if k > 1 else diag[-1]


class ComplementData:
    """Spectral representation of ``P^perp L P^perp`` on Ran P^perp.

    With ``G = W U`` (ambient images of the complement eigenvectors) and
    ``B = G^* I V`` every quantity needed downstream is a diagonal sandwich:
    ``A_z = -B^* diag(1/(mu - z)) B`` and ``R_z I V = G diag(1/(mu - z)) B``.
    G is never formed; ``g_apply``/``gh_apply`` act with it.
    """

    def __init__(self, model: Model, cluster: EigenvalueCluster, delta: float | None = None):
        d = model.delta if delta is None else float(delta)
        proj = cluster.projection
        v = proj.basis
        l_full = model.l0 if d == 0 else model.l0 + d * model.coupling
        if proj.indices is not None:
            self._rest = np.asarray(proj.complement_indices(), dtype=int)
            self._w = None
            m = l_full[np.ix_(self._rest, self._rest)]
        else:
            self._rest = None
            self._w = proj.complement_basis
            m = self._w.conj().T @ l_full @ self._w
        m = (m + m.conj().T) / 2
        if np.allclose(m.imag, 0, atol=0):
            m = m.real
        if not np.any(m - np.diag(np.diag(m))):
            mu = np.diag(m).real.copy()
            self._order = np.argsort(mu, kind="stable")
            self._u = None
            mu = mu[self._order]
        else:
            mu, self._u = scipy.linalg.eigh(m)
            self._order = None
        self.n = model.n
        self.cluster = cluster
        self.delta = d
        self.spacing = model.spacing
        self.mu = mu
        self.basis = v
        self.b = self.gh_apply(model.coupling @ v)

    def gh_apply(self, x: np.ndarray) -> np.ndarray:
        """``G^* x`` for ambient vectors (columns) x."""
        y = x[self._rest] if self._w is None else self._w.conj().T @ x
        if self._u is None:
            return y[self._order]
        return self._u.conj().T @ y

    def g_apply(self, y: np.ndarray) -> np.ndarray:
        """``G y`` for complement-eigenbasis coefficients y."""
        if self._u is None:
            inner = np.empty_like(y)
            inner[self._order] = y
        else:
            inner = self._u @ y
        if self._w is not None:
            return self._w @ inner
        out = np.zeros((self.n,) + y.shape[1:], dtype=complex)
        out[self._rest] = inner
        return out

    def _weights(self, z: complex, power: int = 1) -> np.ndarray:
        return 1.0 / (self.mu - z) ** power

    def a_matrix(self, z: complex) -> np.ndarray:
        return -self.b.conj().T @ (self._weights(z)[:, None] * self.b)

    def a_prime(self, z: complex) -> np.ndarray:
        return -self.b.conj().T @ (self._weights(z, 2)[:, None] * self.b)

    def dressing_right(self, z: complex) -> np.ndarray:
        """``R_z^P I P`` as an (n, m) matrix (acting on cluster coordinates)."""
        return self.g_apply(self._weights(z)[:, None] * self.b)

    def dressing_left(self, z: complex) -> np.ndarray:
        """``P I R_z^P`` as an (m, n) matrix."""
        return self.dressing_right(np.conj(z)).conj().T

    def apply_resolvent(self, z: complex, x: np.ndarray) -> np.ndarray:
        """``R_z^P x`` for ambient vectors x (the Ran P component is dropped)."""
        y = self.gh_apply(np.asarray(x, dtype=complex))
        w = self._weights(z)
        return self.g_apply(w[:, None] * y if y.ndim == 2 else w * y)

    def min_distance(self, z: complex) -> float:
        return float(np.min(np.abs(self.mu - z))) if self.mu.size else np.inf

    def boundary_limit(self, fn, x: complex, limit: LimitSettings = DEFAULT_LIMIT,
                       what: str = "quantity", derivative: bool = False,
                       strict: bool = True):
        """Limit of ``fn(x - i eps)`` as eps -> 0+ for real x; direct
        evaluation when x lies in the open lower half plane.

        Returns (value, error estimate). With ``strict=False`` a spread above
        tolerance is returned instead of raising.
        """
        x = complex(x)
        eps = limit.ladder(self.spacing, derivative)
        rtol = limit.deriv_rtol if derivative else limit.rtol
        if x.imag < 0:
            return np.asarray(fn(x)), 0.0
        vals = [fn(x - 1j * e) for e in eps]
        best, prev = neville_at_zero(eps, vals)
        err = float(np.abs(best - prev).max(initial=0.0))
        scale = max(1.0, float(np.abs(best).max(initial=0.0)))
        if strict and err > rtol * scale:
            raise LimitNotConverged(
                f"{what} at x={x.real:g}: successive extrapolants differ by {err:.2e}")
        return best, err


@dataclass(frozen=True)
class LevelShiftData:
    cluster: EigenvalueCluster = field(repr=False)
    matrix: np.ndarray
    eigenvalues: np.ndarray
    projections: tuple = field(repr=False)
    classification: str
    limit_error: float = 0.0

    @property
    def stable_index(self) -> int | None:
        return 0 if self.classification == PARTIALLY_STABLE else None


def _simple_spectrum(mat: np.ndarray, real_tol: float):
    """Eigenvalues (real one first, if any) and spectral projections."""
    spectrum = eig(mat)
    lam = spectrum.eigenvalues
    order = list(range(len(lam)))
    real_idx = [k for k in order if abs(lam[k].imag) <= real_tol]
    rest = [k for k in order if k not in real_idx]
    order = real_idx + rest
    lam = lam[order]
    projs = tuple(spectrum.projector([k]) for k in order)
    return lam, projs, len(real_idx)


def level_shift(model: Model, cluster: EigenvalueCluster,
                limit: LimitSettings = DEFAULT_LIMIT,
                real_tol: float = 1e-7, simple_tol: float = 1e-6,
                complement: ComplementData | None = None) -> LevelShiftData:
    """Level-shift operator ``-P I P^perp (L0 - e + i0)^{-1} I P`` and its
    (A4) classification.

    Raises A1Violated, LimitNotConverged or DegenerateLevelShift.
    """
    model.check_a1()
    comp = complement or ComplementData(model, cluster, delta=0.0)
    lam_mat, err = comp.boundary_limit(comp.a_matrix, cluster.e, limit, "level shift")
    scale = max(1.0, float(np.abs(lam_mat).max(initial=0.0)))
    lam, projs, n_real = _simple_spectrum(lam_mat, real_tol * scale)
    if len(lam) > 1:
        sep = min(abs(lam[i] - lam[j]) for i in range(len(lam)) for j in range(i))
        if sep < simple_tol * scale:
            raise DegenerateLevelShift(f"level-shift eigenvalues at e={cluster.e:g} are not simple")
    if n_real > 1:
        raise DegenerateLevelShift(
            f"{n_real} real level-shift eigenvalues at e={cluster.e:g}; at most one is allowed")
    cls = PARTIALLY_STABLE if n_real == 1 else UNSTABLE
    if cls == PARTIALLY_STABLE:
        # an exactly real eigenvalue; drop round-off in its imaginary part
        lam = lam.copy()
        lam[0] = lam[0].real
    return LevelShiftData(cluster, lam_mat, lam, projs, cls, err)


def a_z(model: Model, cluster: EigenvalueCluster, z: complex,
        limit: LimitSettings = DEFAULT_LIMIT, window: float | None = None,
        complement: ComplementData | None = None) -> np.ndarray:
    """``A_z`` at the model's coupling; real z are limits from below."""
    z = complex(z)
    if z.imag > 0:
        raise OutsideWindow("A_z is defined for Im z <= 0")
    if window is not None and abs(z.real - cluster.e) > window:
        raise OutsideWindow(f"|Re z - e| = {abs(z.real - cluster.e):g} exceeds the window {window:g}")
    comp = complement or ComplementData(model, cluster)
    return comp.boundary_limit(comp.a_matrix, z, limit, "A_z")[0]


def riesz_projection(a, center: complex, radius: float, n_nodes: int = 64) -> np.ndarray:
    """Spectral projection of ``a`` for the eigenvalues inside a circle,
    ``-(1/2 pi i) * contour integral of (a - zeta)^{-1}``, by the trapezoidal rule."""
    a = np.asarray(a, dtype=complex)
    if n_nodes < 16:
        raise ValueError("need at least 16 nodes")
    lam = scipy.linalg.eigvals(a)
    dist = np.abs(lam - center)
    gap = np.min(np.abs(dist - radius))
    if gap < 1e-3 * radius:
        raise CircleTouchesSpectrum(f"an eigenvalue lies within {gap:.2e} of the circle")
    if not np.any(dist < radius):
        raise NotSeparating("no eigenvalue inside the circle")
    m = a.shape[0]
    theta = 2 * np.pi * (np.arange(n_nodes) + 0.5) / n_nodes
    out = np.zeros((m, m), dtype=complex)
    eye = np.eye(m)
    for th in theta:
        zeta = center + radius * np.exp(1j * th)
        # d zeta = i (zeta - center) d theta
        out += scipy.linalg.solve(a - zeta * eye, eye) * (zeta - center)
    return -out / n_nodes


def _spectral_data(mat: np.ndarray, reference: np.ndarray, n_nodes: int = 64):
    """Eigenvalues of ``mat`` paired with ``reference`` and their Riesz projections."""
    lam = scipy.linalg.eigvals(mat)
    m = len(lam)
    if m == 1:
        return lam.copy(), (np.eye(1, dtype=complex),)
    sep_ref = min(abs(reference[i] - reference[j]) for i in range(m) for j in range(i))
    paired = np.empty(m, dtype=complex)
    used = set()
    for j, r in enumerate(reference):
        d = np.abs(lam - r)
        k = int(np.argmin(d))
        if k in used or np.sum(d < sep_ref / 2) > 1:
            raise PairingAmbiguous(f"eigenvalues of A_z cannot be matched to {r:.4g}")
        used.add(k)
        paired[j] = lam[k]
    projs = []
    for j in range(m):
        others = np.delete(paired, j)
        radius = 0.4 * float(np.min(np.abs(others - paired[j])))
        projs.append(riesz_projection(mat, paired[j], radius, n_nodes))
    return paired, tuple(projs)


@dataclass(frozen=True)
class ResonanceData:
    """Spectral data of ``A_z`` for one cluster at the model's coupling.

    ``eigenvalues[j]`` is paired with ``level_shift.eigenvalues[j]``. For a
    partially stable cluster ``energy`` is the perturbed eigenvalue E solving
    ``e - E + delta**2 * a_0(E) = 0`` and index 0 is the stable branch.
    """

    cluster: EigenvalueCluster = field(repr=False)
    delta: float
    level_shift: LevelShiftData = field(repr=False)
    a_matrix: np.ndarray
    eigenvalues: np.ndarray
    projections: tuple = field(repr=False)
    derivatives: np.ndarray
    energy: float | None = None
    a0_at_energy: complex | None = None
    a0_prime_at_energy: complex | None = None
    q0_at_energy: np.ndarray | None = field(default=None, repr=False)
    fixed_point_residual: float | None = None
    fixed_point_iterations: int = 0
    limit_error: float = 0.0
    derivative_error: float = 0.0
    complement: ComplementData | None = field(default=None, repr=False)

    @property
    def classification(self) -> str:
        return self.level_shift.classification

    def poles(self) -> np.ndarray:
        return self.cluster.e + self.delta ** 2 * self.eigenvalues

    def decaying_indices(self) -> list:
        start = 1 if self.classification == PARTIALLY_STABLE else 0
        return list(range(start, len(self.eigenvalues)))

    def max_deviation(self) -> float:
        """max_j |a_j(e) - lambda_j|"""
        return float(np.max(np.abs(self.eigenvalues - self.level_shift.eigenvalues)))

    def projection_deviation(self) -> float:
        """max_j ||Q_j(e) - P_{e,j}|| (spectral norm)"""
        return float(max(np.linalg.norm(q - p, 2) for q, p in
                         zip(self.projections, self.level_shift.projections)))


def _derivatives(aprime: np.ndarray, projs) -> np.ndarray:
    # first-order perturbation: a_j' = tr(Q_j A')
    return np.array([np.trace(q @ aprime) for q in projs])


def resonance_data(model: Model, cluster: EigenvalueCluster,
                   level_shift_data: LevelShiftData | None = None,
                   limit: LimitSettings = DEFAULT_LIMIT,
                   damping: float = 0.5, max_iter: int = 50,
                   fp_tol: float = 1e-10) -> ResonanceData:
    """a_j(e), Q_j(e), a_j'(e) and, for a partially stable cluster, the
    perturbed eigenvalue E with the data of the stable branch at E."""
    ls = level_shift_data or level_shift(model, cluster, limit)
    comp = ComplementData(model, cluster)
    e = cluster.e
    amat, err = comp.boundary_limit(comp.a_matrix, e, limit, "A_e")
    lam, projs = _spectral_data(amat, ls.eigenvalues)
    aprime, derr = comp.boundary_limit(comp.a_prime, e, limit, "A'_e", derivative=True,
                                      strict=False)
    derivs = _derivatives(aprime, projs)
    extra = {}
    if ls.classification == PARTIALLY_STABLE:
        d2 = model.delta ** 2
        energy = e + d2 * lam[0].real
        resid = np.inf
        it = 0
        for it in range(1, max_iter + 1):
            amat_e, _ = comp.boundary_limit(comp.a_matrix, energy, limit, "A_E")
            lam_e, _ = _spectral_data(amat_e, ls.eigenvalues)
            a0 = lam_e[0]
            resid = abs(e - energy + d2 * a0)
            if resid <= fp_tol * max(1.0, abs(e)):
                break
            energy = (1 - damping) * energy + damping * (e + d2 * a0.real)
        else:
            raise FixedPointDiverged(f"E did not converge at e={e:g} (residual {resid:.2e})")
        amat_e, _ = comp.boundary_limit(comp.a_matrix, energy, limit, "A_E")
        lam_e, projs_e = _spectral_data(amat_e, ls.eigenvalues)
        aprime_e, derr_e = comp.boundary_limit(comp.a_prime, energy, limit, "A'_E",
                                               derivative=True, strict=False)
        derr = max(derr, derr_e)
        extra = dict(
            energy=float(energy),
            a0_at_energy=complex(lam_e[0]),
            a0_prime_at_energy=complex(_derivatives(aprime_e, projs_e)[0]),
            q0_at_energy=projs_e[0],
            fixed_point_residual=float(resid),
            fixed_point_iterations=it,
        )
    return ResonanceData(cluster, model.delta, ls, amat, lam, projs, derivs,
                         limit_error=err, derivative_error=derr, complement=comp, **extra)


@dataclass(frozen=True)
class GapData:
    resonance_gap: float
    eigenvalue_gap: float
    alpha: float
    gamma: float
    c: float

    def to_dict(self) -> dict:
        return {"resonance_gap": self.resonance_gap, "eigenvalue_gap": self.eigenvalue_gap,
                "alpha": self.alpha, "gamma": self.gamma, "c": self.c}


def gaps(level_shifts, clusters=None, c: float = 0.25, real_tol: float = 1e-7,
         decay_rates=None) -> GapData:
    """Cluster gap, eigenvalue gap of L0, window half-width and minimal decay rate.

    ``decay_rates`` (Im a_j at finite coupling) override the level-shift
    imaginary parts when computing the minimal decay rate.
    """
    level_shifts = list(level_shifts)
    if not level_shifts:
        raise EmptyResonanceSet("no clusters")
    clusters = clusters or [ls.cluster for ls in level_shifts]
    seps = []
    pos_im = []
    for ls in level_shifts:
        lam = ls.eigenvalues
        seps += [abs(lam[i] - lam[j]) for i in range(len(lam)) for j in range(i)]
        pos_im += [x.imag for x in lam if x.imag > real_tol]
    energies = sorted(cl.e for cl in clusters)
    g = min((b - a for a, b in zip(energies, energies[1:])), default=np.inf)
    delta_gap = min(seps, default=np.inf)
    rates = pos_im if decay_rates is None else [r for r in decay_rates if r > real_tol]
    if not rates:
        raise EmptyResonanceSet("no decaying resonance")
    gamma = float(min(rates))
    alpha = 0.5 * min(c * delta_gap, g, min(pos_im, default=np.inf))
    if not np.isfinite(alpha):
        alpha = 0.5
    return GapData(float(delta_gap), float(g), float(alpha), gamma, float(c))
