"""Arbitrary-coupling spin-boson analytics.

Bath correlation kernels Q1/Q2, the relaxation rate, the leading-order
resonance table, the coherent (Weyl) overlap algebra, the leading-order
spectral projections and the resulting dynamics curves.

Conventions: ``H_S = (eps/2) sigma_z``, system basis phi_ab with a, b in
{+, -}, coupling constant c = q0**2 / pi in front of Q1 and Q2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.interpolate
import scipy.optimize
import scipy.special

from reskit.bath import SYSTEM_LABELS, SpectralDensity
from reskit.errors import (
    InfraredDivergent,
    IntegralNotDamped,
    LabelNotInClosedSet,
    NonIntegrableDensity,
    QuadratureNotConverged,
)


@dataclass(frozen=True)
class SpinBosonParams:
    """Tunneling ``delta``, detuning ``eps``, coupling ``q0``, inverse temperature
    ``beta`` (``inf`` for zero temperature) and the spectral density ``J``."""

    delta: float
    eps: float
    q0: float
    beta: float
    J: SpectralDensity = field(default_factory=SpectralDensity)

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        for name in ("delta", "eps", "q0"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def c(self) -> float:
        return self.q0 ** 2 / np.pi

    @classmethod
    def from_dict(cls, d: dict) -> "SpinBosonParams":
        beta = d.get("beta", 1.0)
        beta = np.inf if beta in (None, "inf") else float(beta)
        return cls(float(d.get("delta", 0.0)), float(d.get("eps", 0.0)), float(d.get("q0", 1.0)),
                   beta, SpectralDensity.from_dict(d.get("J", {})))

    def to_dict(self) -> dict:
        return {"delta": self.delta, "eps": self.eps, "q0": self.q0,
                "beta": "inf" if np.isinf(self.beta) else self.beta, "J": self.J.to_dict()}


# ---------------------------------------------------------------------------
# omega-integrals

_GL = {n: np.polynomial.legendre.leggauss(n) for n in (20, 30)}


def _panels(breaks: np.ndarray, fn, n: int) -> float:
    x, w = _GL[n]
    a, b = breaks[:-1, None], breaks[1:, None]
    nodes = 0.5 * (b - a) * x[None, :] + 0.5 * (b + a)
    return float(np.sum(0.5 * (b - a) * w[None, :] * fn(nodes)))


def _omega_breaks(J: SpectralDensity, t: float) -> np.ndarray:
    top = J.upper
    width = min(np.pi / t if t > 0 else np.inf, top / 64)
    first = min(width, top / 64)
    # geometric grading towards omega = 0 absorbs the omega**(s-1) behaviour
    grading = first * 2.0 ** -np.arange(40, 0, -1)
    regular = np.linspace(first, top, max(2, int(np.ceil((top - first) / width)) + 1))
    extra = np.asarray(J.table_omega, dtype=float) if J.family == "table" else np.zeros(0)
    pts = np.concatenate([[0.0], grading, regular, extra[(extra > 0) & (extra < top)]])
    return np.unique(pts)


def _omega_integral(J: SpectralDensity, t: float, integrand, tol: float) -> tuple[float, float]:
    breaks = _omega_breaks(J, t)
    coarse = _panels(breaks, integrand, 20)
    fine = _panels(breaks, integrand, 30)
    err = abs(fine - coarse)
    if not np.isfinite(fine) or err > max(tol, 1e-12 * abs(fine)) * 1e3:
        raise QuadratureNotConverged(f"omega integral at t={t:g}: error estimate {err:.2e}")
    return fine, err


def _sinc_over_omega(J, omega, t):
    # J(w) sin(w t) / w**2 written as J(w)/w * t * sinc, finite at w -> 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = J(omega) / omega * t * np.sinc(omega * t / np.pi)
    return np.where(omega > 0, out, 0.0)


def _coth_half(beta, omega):
    if np.isinf(beta):
        return np.ones_like(omega)
    with np.errstate(divide="ignore", over="ignore"):
        return 1.0 / np.tanh(beta * omega / 2)


def _check_q2_density(J: SpectralDensity, beta: float) -> None:
    if J.family == "ohmic" and J.s < 1:
        raise NonIntegrableDensity(f"sub-ohmic density (s={J.s:g}) is rejected for Q2")
    if (J.family == "table" and np.isfinite(beta) and len(J.table_omega)
            and J.table_omega[0] <= 0 and J.table_values[0] != 0):
        raise NonIntegrableDensity("J(0) != 0: coth(beta w/2) J(w)/w**2 is not integrable at 0")


def q1(J: SpectralDensity, t: float, tol: float = 1e-9, return_error: bool = False):
    """``Q1(t) = int_0^inf J(w)/w**2 sin(w t) dw``."""
    t = float(t)
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return (0.0, 0.0) if return_error else 0.0
    val, err = _omega_integral(J, t, lambda w: _sinc_over_omega(J, w, t), tol)
    return (val, err) if return_error else val


def q2(J: SpectralDensity, beta: float, t: float, tol: float = 1e-9, return_error: bool = False):
    """``Q2(t) = int_0^inf J(w) (1 - cos w t)/w**2 coth(beta w/2) dw``."""
    t = float(t)
    if t < 0:
        raise ValueError("t must be nonnegative")
    _check_q2_density(J, beta)
    if t == 0:
        return (0.0, 0.0) if return_error else 0.0

    def f(w):
        with np.errstate(divide="ignore", invalid="ignore"):
            out = J(w) * 2 * np.sin(w * t / 2) ** 2 / w ** 2 * _coth_half(beta, w)
        return np.where(w > 0, out, 0.0)

    val, err = _omega_integral(J, t, f, tol)
    return (val, err) if return_error else val


def q1_ohmic(A: float, omega_c: float, t):
    """Closed form of Q1 for ``J = A w exp(-w/omega_c)``."""
    return A * np.arctan(omega_c * np.asarray(t, dtype=float))


def q2_ohmic(A: float, omega_c: float, beta: float, t):
    """Closed form of Q2 for ``J = A w exp(-w/omega_c)``.

    Expanding coth in geometric series of ``exp(-beta w)`` and summing the
    resulting logarithms gives a log-Gamma expression; ``beta = inf`` keeps
    only the vacuum part ``(A/2) ln(1 + omega_c**2 t**2)``.
    """
    t = np.asarray(t, dtype=float)
    out = 0.5 * A * np.log1p((omega_c * t) ** 2)
    if np.isfinite(beta):
        x = 1.0 + 1.0 / (omega_c * beta)
        out = out + 2 * A * (scipy.special.gammaln(x) - scipy.special.loggamma(x + 1j * t / beta).real)
    # the two log-Gamma terms cancel only to round-off at t = 0
    return np.where(t == 0, 0.0, out)


def _thermal_sum(b: float, beta: float, s: float, t: np.ndarray) -> np.ndarray:
    # sum_{n>=1} [(b + n beta)^(1-s) - Re (b + n beta - i t)^(1-s)] with an
    # Euler-Maclaurin tail beyond K terms (K beta well past max t)
    K = int(max(64, np.ceil(8 * t.max() / beta)))
    out = np.zeros(t.size)
    for lo in range(1, K, 4096):
        n = np.arange(lo, min(lo + 4096, K))[:, None] * beta + b
        out += np.sum(n ** (1 - s) - ((n - 1j * t[None, :]) ** (1 - s)).real, axis=0)
    xk = b + K * beta
    zk = xk - 1j * t
    if s == 2:
        integral = -(np.log(xk) - np.log(zk).real) / beta
    else:
        integral = -(xk ** (2 - s) - (zk ** (2 - s)).real) / (beta * (2 - s))
    fk = xk ** (1 - s) - (zk ** (1 - s)).real
    dfk = beta * (1 - s) * (xk ** -s - (zk ** -s).real)
    return out + integral + 0.5 * fk - dfk / 12


def q1_power(A: float, s: float, omega_c: float, t):
    """Closed form of Q1 for ``J = A w^s omega_c^(1-s) exp(-w/omega_c)``, s > 1."""
    t = np.asarray(t, dtype=float)
    b = 1.0 / omega_c
    return A * omega_c ** (1 - s) * scipy.special.gamma(s - 1) * ((b - 1j * t) ** (1 - s)).imag


def q2_power(A: float, s: float, omega_c: float, beta: float, t):
    """Closed form of Q2 for the power-law family, s > 1 (coth expanded in
    ``exp(-n beta w)``, each term a Gamma integral)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    b = 1.0 / omega_c
    out = b ** (1 - s) - ((b - 1j * t) ** (1 - s)).real
    if np.isfinite(beta):
        out = out + 2 * _thermal_sum(b, beta, s, t)
    return A * omega_c ** (1 - s) * scipy.special.gamma(s - 1) * out


def _is_ohmic(J: SpectralDensity) -> bool:
    return J.family == "ohmic" and J.s == 1.0


def _closed_form(J: SpectralDensity) -> bool:
    return J.family == "ohmic" and J.s >= 1.0


def kernels(params: SpinBosonParams, t) -> tuple[np.ndarray, np.ndarray]:
    """Q1 and Q2 sampled at the times ``t``.

    Closed forms for the power-law family with s >= 1, omega quadrature
    otherwise.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    J = params.J
    if _is_ohmic(J):
        return q1_ohmic(J.A, J.omega_c, t), q2_ohmic(J.A, J.omega_c, params.beta, t)
    if _closed_form(J):
        return q1_power(J.A, J.s, J.omega_c, t), q2_power(J.A, J.s, J.omega_c, params.beta, t)
    _check_q2_density(J, params.beta)
    return _kernels_quadrature(J, params.beta, t)


def _kernels_quadrature(J: SpectralDensity, beta: float, t: np.ndarray, chunk: int = 2_000_000):
    # one omega grid resolving the largest t, shared by every sample time
    x, w = _GL[30]
    breaks = _omega_breaks(J, float(t.max()))
    a, b = breaks[:-1, None], breaks[1:, None]
    om = (0.5 * (b - a) * x[None, :] + 0.5 * (b + a)).ravel()
    wt = (0.5 * (b - a) * w[None, :]).ravel()
    with np.errstate(divide="ignore", invalid="ignore"):
        base = np.where(om > 0, J(om) / om ** 2, 0.0) * wt
    coth = _coth_half(beta, om)
    out1 = np.empty(t.size)
    out2 = np.empty(t.size)
    step = max(1, chunk // om.size)
    for i in range(0, t.size, step):
        arg = np.outer(t[i:i + step], om)
        out1[i:i + step] = np.sin(arg) @ base
        out2[i:i + step] = (2 * np.sin(arg / 2) ** 2) @ (base * coth)
    return out1, out2


# ---------------------------------------------------------------------------
# relaxation rate

@dataclass(frozen=True)
class RelaxationData:
    """Relaxation rate and the leading-order resonance table.

    ``x`` is the sine-transform companion of the cosine transform defining
    ``tau_inv``; it is a modelling choice for the otherwise unspecified real
    part of the off-diagonal resonances (reported as ``x_definition``).
    """

    params: SpinBosonParams
    tau_inv: float
    tau_error: float
    x: float
    x_error: float
    horizon: float
    tail_bound: float
    t_samples: np.ndarray = field(repr=False)
    q1_samples: np.ndarray = field(repr=False)
    q2_samples: np.ndarray = field(repr=False)
    x_definition: str = "int_0^inf sin(eps t) cos(c Q1) exp(-c Q2) dt"

    def q1(self, t):
        return scipy.interpolate.CubicSpline(self.t_samples, self.q1_samples)(t)

    def q2(self, t):
        return scipy.interpolate.CubicSpline(self.t_samples, self.q2_samples)(t)

    @property
    def resonances(self) -> dict:
        """Leading-order resonances per sector ``"0"``, ``"+eps"``, ``"-eps"``
        (sector energies 0, eps, -eps): ``[0, i/tau]``, ``[x + i/(2 tau)]``,
        ``[-x + i/(2 tau)]``."""
        return {"0": [0j, 1j * self.tau_inv],
                "+eps": [self.x + 0.5j * self.tau_inv],
                "-eps": [-self.x + 0.5j * self.tau_inv]}

    @property
    def sector_energies(self) -> dict:
        eps = float(self.params.eps)
        return {"0": 0.0, "+eps": eps, "-eps": -eps}

    @property
    def gamma(self) -> float:
        """Smallest decay rate ``delta**2 tau_inv / 2``."""
        return self.params.delta ** 2 * self.tau_inv / 2

    def to_dict(self) -> dict:
        energies = self.sector_energies
        table = [{"sector": k, "e": energies[k], "index": j, "re": float(np.real(lam)),
                  "im": float(np.imag(lam))}
                 for k, lams in self.resonances.items() for j, lam in enumerate(lams)]
        return {"params": self.params.to_dict(), "tau_inv": self.tau_inv, "tau_error": self.tau_error,
                "x": self.x, "x_error": self.x_error, "x_definition": self.x_definition,
                "horizon": self.horizon, "tail_bound": self.tail_bound, "gamma": self.gamma,
                "resonances": table}


def relaxation(params: SpinBosonParams, envelope_tol: float = 1e-12,
               max_horizon: float | None = None) -> RelaxationData:
    """tau^{-1} = int_0^inf cos(eps t) cos(c Q1) exp(-c Q2) dt, and its sine companion x.

    Panels of length ``pi / max(|eps|, omega_c, 1)`` are added until the
    envelope ``exp(-c Q2)`` falls below ``envelope_tol``; each panel is done
    with 20- and 30-point Gauss-Legendre rules to estimate the error. The
    default horizon cap is 1e5 with closed-form kernels and ``100 pi / scale``
    when the kernels come from omega quadrature (whose cost grows with t).
    """
    c = params.c
    scale = max(abs(params.eps), params.J.omega_c if params.J.family == "ohmic" else 1.0, 1.0)
    width = np.pi / scale
    if max_horizon is None:
        max_horizon = 1e5 if _closed_form(params.J) else 100 * width
    x20, w20 = _GL[20]
    x30, w30 = _GL[30]
    acc = {"cos20": 0.0, "cos30": 0.0, "sin20": 0.0, "sin30": 0.0}
    samples = [(0.0, 0.0, 0.0)]
    a = 0.0
    block = 16
    checkpoint = (0.0, 0.0)
    while True:
        starts = a + width * np.arange(block)
        for n, x, w in ((20, x20, w20), (30, x30, w30)):
            nodes = (starts[:, None] + 0.5 * width * (x[None, :] + 1)).ravel()
            k1, k2 = kernels(params, nodes)
            base = np.cos(c * k1) * np.exp(-c * k2) * np.tile(0.5 * width * w, block)
            acc[f"cos{n}"] += float(np.sum(np.cos(params.eps * nodes) * base))
            acc[f"sin{n}"] += float(np.sum(np.sin(params.eps * nodes) * base))
        a = float(starts[-1] + width)
        ends = starts + width
        e1, e2 = kernels(params, ends)
        samples.extend(zip(ends, e1, e2))
        envelope = float(np.exp(-c * e2[-1]))
        if envelope < envelope_tol:
            break
        if a >= 2 * checkpoint[0]:
            # Q2 saturating (infrared-regular densities): the envelope never decays
            if c * (e2[-1] - checkpoint[1]) < 1e-3:
                raise IntegralNotDamped(
                    f"exp(-c Q2) levels off at {envelope:.3e}: Q2 stays bounded, so the relaxation "
                    "integral does not converge absolutely")
            checkpoint = (a, float(e2[-1]))
        if a > max_horizon:
            raise IntegralNotDamped(
                f"exp(-c Q2) = {envelope:.2e} at t = {a:.3g}: the relaxation integral is not damped "
                "within the horizon (increase q0 or the temperature)")
    tau_inv = acc["cos30"]
    if not tau_inv > 0:
        raise IntegralNotDamped(f"relaxation integral is {tau_inv:.3e}: no finite relaxation time")
    tail = envelope * width
    ts, s1, s2 = map(np.asarray, zip(*samples))
    return RelaxationData(
        params, tau_inv, abs(acc["cos30"] - acc["cos20"]) + tail,
        acc["sin30"], abs(acc["sin30"] - acc["sin20"]) + tail, a, tail, ts, s1, s2)


def tau_inverse(params: SpinBosonParams) -> tuple[float, float]:
    """``(tau_inv, error estimate)``."""
    r = relaxation(params)
    return r.tau_inv, r.tau_error


# ---------------------------------------------------------------------------
# coherent (Weyl) vectors

# W(sigma a + tau b) Omega, with a = f_beta the left displacement and b its
# image under the modular conjugation (the right displacement).
COHERENT_LABELS = {
    "Omega": (0, 0),
    "X0": (1, 1),
    "X0*": (-1, -1),
    "X+": (-1, 1),
    "X-": (1, -1),
}
LABEL_ORDER = tuple(COHERENT_LABELS)


@dataclass(frozen=True)
class CoherentVector:
    label: str
    left: int
    right: int

    @classmethod
    def from_label(cls, label: str) -> "CoherentVector":
        if label not in COHERENT_LABELS:
            raise LabelNotInClosedSet(f"{label!r} is not one of {', '.join(LABEL_ORDER)}")
        return cls(label, *COHERENT_LABELS[label])

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([self.left, self.right], dtype=float)


def ccr_overlap(c1, c2, gram) -> complex:
    """``<W(g1) Omega, W(g2) Omega>`` for ``g_i = sum_k c_i[k] e_k``.

    ``gram[k, l] = <e_k, e_l>`` is the (thermal) Gram matrix of the basis
    functions. Uses ``W(f) W(g) = exp(-i/2 Im<f,g>) W(f+g)`` and the Gaussian
    vacuum expectation ``exp(-|g|**2 / 4)``.
    """
    c1 = np.asarray(c1, dtype=complex)
    c2 = np.asarray(c2, dtype=complex)
    g = np.asarray(gram, dtype=complex)
    cross = c1.conj() @ g @ c2
    d = c2 - c1
    norm2 = float(np.real(d.conj() @ g @ d))
    return complex(np.exp(0.5j * cross.imag - 0.25 * norm2))


def displacement_forms(params: SpinBosonParams, tol: float = 1e-10) -> np.ndarray:
    """Thermal Gram matrix ``[[N, M], [M, N]]`` of the left and right displacements.

    ``N = (q0**2 / 2 pi) int J coth(beta w/2) / w**2`` and
    ``M = -(q0**2 / 2 pi) int J / (w**2 sinh(beta w/2))`` (zero at beta = inf).
    """
    J, beta = params.J, params.beta
    finite = np.isfinite(beta)
    if J.family == "ohmic" and J.s <= (2 if finite else 1):
        need = "s > 2" if finite else "s > 1"
        raise InfraredDivergent(
            f"<f, coth(beta|u|/2) f> diverges for s = {J.s:g} at "
            f"{'finite' if finite else 'zero'} temperature; use {need} or a tabulated density "
            "that vanishes below an infrared cutoff (or request the orthogonal limit)")
    if J.family == "table" and len(J.table_omega) and J.table_omega[0] <= 0 and (
            J.table_values[0] != 0 or finite):
        raise InfraredDivergent(
            "tabulated J is nonzero down to w = 0; start the table at a positive infrared cutoff")
    pref = params.q0 ** 2 / (2 * np.pi)

    def n_int(w):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = J(w) / w ** 2 * _coth_half(beta, w)
        return np.where(w > 0, out, 0.0)

    def m_int(w):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = J(w) / w ** 2 / np.sinh(beta * w / 2)
        return np.where(w > 0, out, 0.0)

    n_val = pref * _omega_integral(J, 0.0, n_int, tol)[0]
    m_val = -pref * _omega_integral(J, 0.0, m_int, tol)[0] if finite else 0.0
    return np.array([[n_val, m_val], [m_val, n_val]])


def weyl_overlap(left: CoherentVector | str, right: CoherentVector | str,
                 params: SpinBosonParams, forms: np.ndarray | None = None) -> complex:
    """``<left, right>`` for two coherent vectors of the closed label set."""
    left = CoherentVector.from_label(left) if isinstance(left, str) else left
    right = CoherentVector.from_label(right) if isinstance(right, str) else right
    forms = displacement_forms(params) if forms is None else forms
    return ccr_overlap(left.coefficients, right.coefficients, forms)


def coherent_gram(params: SpinBosonParams, forms: np.ndarray | None = None,
                  infrared: str = "raise") -> np.ndarray:
    """5x5 Gram matrix over ``LABEL_ORDER``.

    ``infrared="orthogonal"`` replaces an infrared-divergent Gram matrix by
    its limit, the identity (distinct coherent vectors become orthogonal as
    the displacement norms grow without bound).
    """
    if infrared not in ("raise", "orthogonal"):
        raise ValueError("infrared must be 'raise' or 'orthogonal'")
    if forms is None:
        try:
            forms = displacement_forms(params)
        except InfraredDivergent:
            if infrared == "raise":
                raise
            return np.eye(len(LABEL_ORDER), dtype=complex)
    vecs = [CoherentVector.from_label(lab) for lab in LABEL_ORDER]
    return np.array([[ccr_overlap(u.coefficients, v.coefficients, forms) for v in vecs] for u in vecs])


# ---------------------------------------------------------------------------
# doubled system space

@dataclass(frozen=True)
class SystemSpace:
    """Doubled two-level space with basis phi_++, phi_+-, phi_-+, phi_--."""

    eps: float
    beta: float

    labels = SYSTEM_LABELS

    def index(self, label: str) -> int:
        return SYSTEM_LABELS.index(label)

    @property
    def gibbs_weights(self) -> tuple[float, float]:
        """Normalised amplitudes on (phi_++, phi_--), proportional to exp(-/+ beta eps/4)."""
        if np.isinf(self.beta):
            if self.eps == 0:
                return (np.sqrt(0.5), np.sqrt(0.5))
            return (0.0, 1.0) if self.eps > 0 else (1.0, 0.0)
        y = self.beta * self.eps / 4
        w = np.array([-y, y])
        w = np.exp(w - w.max())
        w /= np.linalg.norm(w)
        return float(w[0]), float(w[1])

    @property
    def gibbs_vector(self) -> np.ndarray:
        v = np.zeros(4)
        v[0], v[3] = self.gibbs_weights
        return v

    @property
    def kernel_projection(self) -> np.ndarray:
        """Projection onto the zero-energy sector span{phi_++, phi_--}."""
        return np.diag([1.0, 0.0, 0.0, 1.0])

    @property
    def gibbs_projection(self) -> np.ndarray:
        v = self.gibbs_vector
        return np.outer(v, v)

    @property
    def gibbs_complement(self) -> np.ndarray:
        return self.kernel_projection - self.gibbs_projection


# ---------------------------------------------------------------------------
# leading-order projections

@dataclass(frozen=True)
class LeadingProjection:
    """Operator ``sum w |s><s'| (x) |X><Y|`` on system space (x) coherent span.

    ``terms`` holds ``(s, s', X, Y, w)`` with system and coherent labels.
    """

    name: str
    terms: tuple
    error_order: str = "O(delta)"

    @property
    def system_matrix(self) -> np.ndarray:
        m = np.zeros((4, 4))
        for s, sp, _, _, w in self.terms:
            m[SYSTEM_LABELS.index(s), SYSTEM_LABELS.index(sp)] += w
        return m

    def amplitude(self, phi, psi, gram: np.ndarray) -> complex:
        """``<phi, P psi>`` for vectors given as (4, 5) coefficient arrays over
        ``SYSTEM_LABELS x LABEL_ORDER``."""
        phi = np.asarray(phi, dtype=complex).reshape(4, 5)
        psi = np.asarray(psi, dtype=complex).reshape(4, 5)
        total = 0j
        for s, sp, x, y, w in self.terms:
            i, j = SYSTEM_LABELS.index(s), SYSTEM_LABELS.index(sp)
            k, l = LABEL_ORDER.index(x), LABEL_ORDER.index(y)
            total += w * (phi[i].conj() @ gram[:, k]) * (gram[l, :] @ psi[j])
        return complex(total)

    def dense(self, gram: np.ndarray) -> np.ndarray:
        """Matrix of the operator in an orthonormal basis of the 20-dim span.

        Returns ``(matrix, coords)`` where coords maps coefficient arrays to
        that basis: ``amplitude(phi, psi) = (coords phi)^* matrix (coords psi)``.
        """
        evals, evecs = np.linalg.eigh(gram)
        keep = evals > 1e-12 * evals.max()
        root = evecs[:, keep] * np.sqrt(evals[keep])
        coords = np.kron(np.eye(4), root.conj().T)
        op = np.zeros((coords.shape[0], coords.shape[0]), dtype=complex)
        for s, sp, x, y, w in self.terms:
            ks = np.zeros(20)
            ks[SYSTEM_LABELS.index(s) * 5 + LABEL_ORDER.index(x)] = 1
            kb = np.zeros(20)
            kb[SYSTEM_LABELS.index(sp) * 5 + LABEL_ORDER.index(y)] = 1
            op += w * np.outer(coords @ ks, (coords @ kb).conj())
        return op, coords


def projections_leading(params: SpinBosonParams) -> dict:
    """Leading-order projections keyed ``"stationary"``, ``"0"``, ``"+eps"``, ``"-eps"``.

    The stationary projection is ``|Omega_0><Omega_0|`` with
    ``Omega_0 = g_+ phi_++ (x) X0 + g_- phi_-- (x) X0*`` (Gibbs amplitudes
    g); together with the ``"0"`` projection it makes up the whole zero-energy
    sector.
    """
    space = SystemSpace(params.eps, params.beta)
    gp, gm = space.gibbs_weights
    # (e^{beta eps/2} + e^{-beta eps/2})^{-1} (e^{beta eps/2}, -1, -1, e^{-beta eps/2})
    # equals (g_-^2, -g_+ g_-, -g_+ g_-, g_+^2) in Gibbs amplitudes
    zero = (("++", "++", "X0", "X0", gm * gm), ("++", "--", "X0", "X0*", -gp * gm),
            ("--", "++", "X0*", "X0", -gp * gm), ("--", "--", "X0*", "X0*", gp * gp))
    stationary = (("++", "++", "X0", "X0", gp * gp), ("++", "--", "X0", "X0*", gp * gm),
                  ("--", "++", "X0*", "X0", gp * gm), ("--", "--", "X0*", "X0*", gm * gm))
    return {
        "stationary": LeadingProjection("stationary", stationary),
        "0": LeadingProjection("0", zero),
        "+eps": LeadingProjection("+eps", (("+-", "+-", "X+", "X+", 1.0),)),
        "-eps": LeadingProjection("-eps", (("-+", "-+", "X-", "X-", 1.0),)),
    }


def coherent_vector_array(components) -> np.ndarray:
    """Coefficient array from ``(system label, coherent label, coefficient)`` triples."""
    out = np.zeros((4, 5), dtype=complex)
    for s, lab, coef in components:
        if s not in SYSTEM_LABELS:
            raise ValueError(f"unknown system label {s!r}")
        out[SYSTEM_LABELS.index(s), LABEL_ORDER.index(CoherentVector.from_label(lab).label)] += coef
    return out


def product_vector(system, label: str = "Omega") -> np.ndarray:
    """Coefficient array of ``system (x) W(...) Omega`` for a 4-vector ``system``."""
    out = np.zeros((4, 5), dtype=complex)
    out[:, LABEL_ORDER.index(CoherentVector.from_label(label).label)] = np.asarray(system, dtype=complex)
    return out


# ---------------------------------------------------------------------------
# dynamics

@dataclass(frozen=True)
class DynamicsCurve:
    times: np.ndarray
    values: np.ndarray
    equilibrium: complex
    poles: dict
    amplitudes: dict
    constant: float
    decay_rate: float

    @property
    def deviation(self) -> np.ndarray:
        return np.abs(self.values - self.equilibrium)

    def envelope(self, t=None) -> np.ndarray:
        """``C (exp(-rate t) + 1/t)`` with the fitted constant."""
        t = self.times if t is None else np.asarray(t, dtype=float)
        return self.constant * (np.exp(-self.decay_rate * t) + 1 / t)

    def decay_time(self) -> float:
        """1/e time of ``sum_j |amplitude_j| exp(-Im pole_j t)``."""
        amps = {k: abs(a) for k, a in self.amplitudes.items() if k != "stationary" and abs(a) > 0}
        if not amps:
            return np.inf
        rates = {k: self.poles[k].imag for k in amps}
        if min(rates.values()) <= 0:
            return np.inf
        total = sum(amps.values())

        def f(t):
            return sum(a * np.exp(-rates[k] * t) for k, a in amps.items()) - total / np.e

        hi = 1.0 / min(rates.values())
        while f(hi) > 0:
            hi *= 2
        return float(scipy.optimize.brentq(f, 0.0, hi, xtol=1e-14, rtol=1e-13))

    def rows(self):
        env = self.envelope()
        for t, v, e in zip(self.times, self.values, env):
            yield (float(t), float(v.real), float(v.imag), float(e),
                   float(self.equilibrium.real), float(self.equilibrium.imag))


def fit_equilibrium_constant(times, deviation, rate: float) -> float:
    """Smallest C with ``deviation <= C (exp(-rate t) + 1/t)`` on the samples."""
    t = np.asarray(times, dtype=float)
    return float(np.max(np.asarray(deviation) / (np.exp(-rate * t) + 1 / t)))


def dynamics_curve(params: SpinBosonParams, relax: RelaxationData, phi, psi, times,
                   gram: np.ndarray | None = None) -> DynamicsCurve:
    """Leading-order ``<phi, exp(itL) psi>`` from the resonance expansion.

    Poles are ``0``, ``delta**2 a_0``, ``+-eps + delta**2 a_{+-eps}`` with the
    a's read from the resonance table; amplitudes come from
    ``projections_leading`` through the coherent Gram matrix.
    """
    times = np.asarray(times, dtype=float)
    if np.any(times <= 0):
        raise ValueError("times must be positive")
    gram = coherent_gram(params) if gram is None else gram
    projs = projections_leading(params)
    d2 = params.delta ** 2
    table = relax.resonances
    eps = float(params.eps)
    poles = {"stationary": 0j, "0": d2 * table["0"][1],
             "+eps": eps + d2 * table["+eps"][0], "-eps": -eps + d2 * table["-eps"][0]}
    amps = {k: p.amplitude(phi, psi, gram) for k, p in projs.items()}
    values = np.zeros(times.shape, dtype=complex)
    for k, a in amps.items():
        values += a * np.exp(1j * poles[k] * times)
    eq = amps["stationary"]
    rate = d2 * relax.tau_inv / 2
    const = fit_equilibrium_constant(times, np.abs(values - eq), rate)
    return DynamicsCurve(times, values, eq, poles, amps, const, rate)


def coherent_norm2(vec, gram: np.ndarray) -> float:
    """Squared norm of a coefficient array through the coherent Gram matrix."""
    v = np.asarray(vec, dtype=complex).reshape(4, 5)
    return float(np.real(np.einsum("si,ij,sj->", v.conj(), gram, v)))
