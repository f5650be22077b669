"""Acceptance suite: eight numbered checks shared by ``reskit validate`` and the tests.

Every check returns a ``CriterionResult`` carrying the measured quantities,
the thresholds they are held to and the wall time.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import mpmath
import numpy as np
import scipy.linalg

from reskit import spinboson as sb
from reskit.bath import (
    Channel,
    SpectralDensity,
    build_friedrichs,
    build_spinboson_liouvillean_surrogate,
    discretize,
    uniform_grid,
)
from reskit.feshbach import block_resolvent, feshbach_map, isospectral_check, iterate_feshbach, lift_eigenvector
from reskit.linop import OrthProjection, eig, propagator_exact
from reskit.propagator import (
    ContourConfig,
    contour_amplitude,
    expand,
    fit_decay_rate,
    remainder_fit,
    stationary_projection,
)
from reskit.resonance import gaps, level_shift, resonance_data


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    metrics: dict
    thresholds: dict
    runtime: float = 0.0
    notes: list = field(default_factory=list)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.metrics.items())
        return f"[{status}] criterion {self.number} ({self.name}): {shown} [{self.runtime:.1f}s]"

    def to_dict(self) -> dict:
        return {"number": self.number, "name": self.name, "passed": self.passed,
                "metrics": {k: _jsonable(v) for k, v in self.metrics.items()},
                "thresholds": {k: _jsonable(v) for k, v in self.thresholds.items()},
                "runtime": self.runtime, "notes": list(self.notes)}


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{v:.3g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def _flat_profile(x):
    return np.ones((len(x), 1))


def _quartic_profile(x):
    return np.sqrt(1 + 3 * x ** 4)[:, None]


# ---------------------------------------------------------------------------

def criterion_1(seed: int = 0, count: int = 100, perturb: float = 0.0) -> CriterionResult:
    """Feshbach identities on random 8x8 complex matrices with rank-2 projections.

    ``perturb`` adds a random matrix of that size to the operator handed to
    the Feshbach routines (not to the reference), to exercise a red run.
    """
    rng = np.random.default_rng(seed)
    worst = {"det_at_eigenvalues": 0.0, "block_residual": 0.0, "iterated_residual": 0.0,
             "lift_residual": 0.0}
    min_elsewhere = np.inf
    for _ in range(count):
        h = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        hp = h + perturb * (rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8)))
        basis, _ = np.linalg.qr(rng.normal(size=(8, 2)) + 1j * rng.normal(size=(8, 2)))
        q = OrthProjection(basis, 8)
        q_inner = OrthProjection(basis[:, :1], 8)
        z = complex(rng.normal() * 3, 3 + abs(rng.normal()))
        iso = isospectral_check(hp, q, z_samples=[z])
        worst["det_at_eigenvalues"] = max(worst["det_at_eigenvalues"], iso["max_det_at_eigenvalues"])
        min_elsewhere = min(min_elsewhere, iso["min_det_elsewhere"])
        ref = np.linalg.inv(h - z * np.eye(8))
        br = block_resolvent(hp, q, z).assemble()
        worst["block_residual"] = max(worst["block_residual"],
                                      np.abs(br - ref).max() / np.abs(ref).max())
        it = iterate_feshbach(hp, q, q_inner, z).embedded()
        direct = feshbach_map(hp, q_inner, z).embedded()
        worst["iterated_residual"] = max(worst["iterated_residual"],
                                         np.abs(it - direct).max() / max(1.0, np.abs(direct).max()))
        for row in iso["rows"]:
            if not row["eigenvalue"]:
                continue
            e = row["z"]
            fmap = feshbach_map(h, q, e).map_matrix
            _, _, vh = np.linalg.svd(fmap)
            psi = lift_eigenvector(h, q, e, vh[-1].conj())
            res = np.linalg.norm(h @ psi - e * psi) / (np.linalg.norm(psi) * np.linalg.norm(h, 2))
            worst["lift_residual"] = max(worst["lift_residual"], res)
    thresholds = {"det_at_eigenvalues": 1e-8, "block_residual": 1e-10,
                  "iterated_residual": 1e-10, "lift_residual": 1e-8}
    passed = all(worst[k] < thresholds[k] for k in thresholds)
    metrics = dict(worst, min_det_elsewhere=float(min_elsewhere))
    return CriterionResult(1, "Feshbach identities", passed, metrics, thresholds)


def _regression_models():
    rng = np.random.default_rng(7)
    g300 = uniform_grid(-1, 1, 300)
    g400 = uniform_grid(-1, 1, 400)
    two = lambda x: np.stack([np.ones_like(x), 0.6 + 0.5 * x], axis=1)
    models = [
        build_friedrichs([(0.0, 1)], [Channel(g300, _flat_profile)], delta=0.1),
        build_friedrichs([(0.0, 1)], [Channel(g400, _quartic_profile)], delta=0.05),
        build_friedrichs([(-0.3, 1), (0.4, 1)], [Channel(g400, two)], delta=0.08),
    ]
    out = []
    for m in models:
        phi = np.zeros(m.n, complex)
        psi = np.zeros(m.n, complex)
        k = len(m.clusters)
        phi[:k] = 1.0
        phi[k:k + 40] = 0.1 * rng.normal(size=40)
        psi[:k] = 0.7
        psi[100:140] = 0.1j
        out.append((m, phi / np.linalg.norm(phi), psi / np.linalg.norm(psi)))
    return out


def criterion_2(times=(0.5, 1.0, 2.0, 5.0, 10.0)) -> CriterionResult:
    """Contour representation against exact propagation, and w-independence."""
    err = 0.0
    spread = 0.0
    alphas = []
    for m, phi, psi in _regression_models():
        lss = [level_shift(m, c) for c in m.clusters]
        alpha = gaps(lss).alpha
        alphas.append(alpha)
        exact = propagator_exact(m.generator, np.array(times), phi, psi)
        values = []
        for w in (0.05 * alpha, 0.1 * alpha):
            cfg = ContourConfig(w, alpha, tuple(c.e for c in m.clusters))
            vals = np.array([r.value for r in contour_amplitude(m, phi, psi, list(times), cfg)])
            err = max(err, float(np.abs(vals - exact).max()))
            values.append(vals)
        spread = max(spread, float(np.abs(values[0] - values[1]).max()))
    thresholds = {"contour_vs_exact": 1e-6, "w_spread": 1e-6}
    metrics = {"contour_vs_exact": err, "w_spread": spread, "alphas": alphas}
    passed = err < 1e-6 and spread < 1e-6
    return CriterionResult(2, "contour representation", passed, metrics, thresholds)


def criterion_3() -> CriterionResult:
    """Resonance expansion on an N = 2000 Friedrichs surrogate at delta = 0.02."""
    grid = uniform_grid(-1, 1, 2000)
    m = build_friedrichs([(0.0, 1)], [Channel(grid, _quartic_profile)], delta=0.02)
    rd = resonance_data(m, m.clusters[0])
    im_a = float(rd.eigenvalues[0].imag)
    rate = m.delta ** 2 * im_a
    t0, t1 = 0.5, 0.5 / rate
    ts = np.linspace(t0, t1, 800)
    phi = np.zeros(m.n)
    phi[0] = 1.0
    res = expand(m, phi, phi, ts, [rd])
    rel = float(np.abs(res.remainder).max() / abs(np.vdot(phi, phi)))
    fitted = fit_decay_rate(ts[ts > 5], res.exact[ts > 5])
    rate_err = abs(fitted - rate) / rate
    fit = remainder_fit(res, t_min=1.0)
    env = remainder_fit(res, t_min=1.0, bins=12)
    thresholds = {"max_remainder": 5e-3, "rate_rel_error": 0.05, "remainder_exponent": -0.8}
    metrics = {"max_remainder": rel, "rate_rel_error": rate_err, "remainder_exponent": fit.exponent,
               "envelope_exponent": env.exponent, "fitted_rate": fitted, "predicted_rate": rate}
    passed = rel <= 5e-3 and rate_err <= 0.05 and fit.exponent <= -0.8
    return CriterionResult(3, "resonance expansion", passed, metrics, thresholds)


def _two_channel_model(delta: float):
    ga = uniform_grid(-1, 1, 1000)
    gb = uniform_grid(0.3, 1.3, 500)
    th = 0.4
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    pa = lambda x: np.outer(np.ones_like(x), [1.0, 0.0]) @ rot.T
    pb = lambda x: np.outer(np.ones_like(x), [0.0, 1.0]) @ rot.T
    return build_friedrichs([(0.0, 2)], [Channel(ga, pa), Channel(gb, pb)], delta=delta)


def criterion_4() -> CriterionResult:
    """Partially stable cluster: stationary projection and decay of the orthogonal direction."""
    m = _two_channel_model(0.05)
    rd = resonance_data(m, m.clusters[0])
    proj = stationary_projection(m, rd).dense()
    spectrum = eig(m.generator)
    ref = spectrum.projector([spectrum.nearest(rd.energy)])
    proj_err = float(np.abs(proj - ref).max())
    u, _, _ = np.linalg.svd(rd.level_shift.projections[0])
    stable = u[:, 0]
    decaying = np.array([-np.conj(stable[1]), np.conj(stable[0])])
    phi = np.zeros(m.n, complex)
    phi[:2] = decaying
    rate = m.delta ** 2 * float(rd.level_shift.eigenvalues[1].imag)
    ts = np.linspace(2, 0.5 / rate, 400)
    res = expand(m, phi, phi, ts, [rd], spectrum=spectrum)
    stat = res.stationary_value(ts)
    sel = ts > 5
    fitted = fit_decay_rate(ts[sel], res.exact[sel], stat[sel])
    rate_err = abs(fitted - rate) / rate
    thresholds = {"projection_error": 1e-6, "rate_rel_error": 0.05}
    metrics = {"projection_error": proj_err, "rate_rel_error": rate_err, "fitted_rate": fitted,
               "predicted_rate": rate, "classification": rd.classification}
    passed = proj_err < 1e-6 and rate_err <= 0.05 and rd.classification == "partially_stable"
    return CriterionResult(4, "partial stability", passed, metrics, thresholds)


def criterion_5(deltas=(0.01, 0.02, 0.04, 0.08)) -> CriterionResult:
    """O(delta) approach of a_j(e) and Q_j(e) to the level-shift data."""
    grid = uniform_grid(-1, 1, 1000)
    prof = lambda x: np.stack([np.ones_like(x), 0.8 * x + 0.5], axis=1)
    kern = lambda x, y: 0.5 * np.cos(x) * np.cos(y) + 0.3 * x * y
    base = build_friedrichs([(0.0, 2)], [Channel(grid, prof)], continuum_kernel=kern)
    ls = level_shift(base, base.clusters[0])
    dev_a, dev_q = [], []
    for d in deltas:
        rd = resonance_data(base.with_delta(d), base.clusters[0], ls)
        dev_a.append(rd.max_deviation())
        dev_q.append(rd.projection_deviation())
    pa = float(np.polyfit(np.log(deltas), np.log(dev_a), 1)[0])
    pq = float(np.polyfit(np.log(deltas), np.log(dev_q), 1)[0])
    thresholds = {"eigenvalue_exponent": 0.9, "projection_exponent": 0.9}
    metrics = {"eigenvalue_exponent": pa, "projection_exponent": pq}
    return CriterionResult(5, "O(delta) convergence", pa >= 0.9 and pq >= 0.9, metrics, thresholds)


def tau_inverse_oracle(A: float, omega_c: float, beta: float, eps: float, q0: float,
                       horizon: float, dps: int = 30) -> float:
    """High-precision tanh-sinh evaluation of the ohmic relaxation integral,
    split at multiples of pi / max(eps, omega_c, 1)."""
    with mpmath.workdps(dps):
        c = mpmath.mpf(q0) ** 2 / mpmath.pi
        A, wc, eps = mpmath.mpf(A), mpmath.mpf(omega_c), mpmath.mpf(eps)
        x = 1 + 1 / (wc * beta) if np.isfinite(beta) else None

        def k(t):
            q1 = A * mpmath.atan(wc * t)
            q2 = A / 2 * mpmath.log(1 + (wc * t) ** 2)
            if x is not None:
                q2 += 2 * A * (mpmath.loggamma(x) - mpmath.re(mpmath.loggamma(x + 1j * t / beta)))
            return mpmath.cos(eps * t) * mpmath.cos(c * q1) * mpmath.exp(-c * q2)

        step = mpmath.pi / max(float(eps), float(wc), 1.0)
        pts = [step * j for j in range(int(horizon / float(step)) + 2)]
        return float(mpmath.quad(k, pts, method="tanh-sinh"))


def criterion_6() -> CriterionResult:
    """Spin-boson analytics: kernels, relaxation rate, resonance table, Gibbs annihilation."""
    J = SpectralDensity("ohmic", 1.0, 1.0, 1.0)
    ts = np.linspace(0, 50, 101)
    q1_err = max(abs(sb.q1(J, t) - float(sb.q1_ohmic(1.0, 1.0, t))) for t in ts)
    q2_err = max(abs(sb.q2(J, np.inf, t) - float(sb.q2_ohmic(1.0, 1.0, np.inf, t))) for t in ts)
    params = sb.SpinBosonParams(0.1, 0.5, 1.0, 2.0, J)
    relax = sb.relaxation(params)
    oracle = tau_inverse_oracle(1.0, 1.0, 2.0, 0.5, 1.0, relax.horizon)
    tau_err = abs(relax.tau_inv - oracle)
    table = relax.resonances
    zero = table["0"]
    structure = (zero[0] == 0 and zero[1] == 1j * relax.tau_inv
                 and table["+eps"][0].imag == relax.tau_inv / 2
                 and table["-eps"][0].imag == relax.tau_inv / 2
                 and table["+eps"][0].real == -table["-eps"][0].real)
    space = sb.SystemSpace(params.eps, params.beta)
    gibbs = float(np.abs(sb.projections_leading(params)["0"].system_matrix @ space.gibbs_vector).max())
    thresholds = {"q1_error": 1e-8, "q2_error": 1e-8, "tau_error": 1e-6, "gibbs_residual": 1e-10}
    metrics = {"q1_error": q1_err, "q2_error": q2_err, "tau_error": tau_err,
               "tau_inv": relax.tau_inv, "table_structure": structure, "gibbs_residual": gibbs}
    passed = (q1_err < 1e-8 and q2_err < 1e-8 and tau_err < 1e-6 and structure and gibbs < 1e-10)
    return CriterionResult(6, "spin-boson analytics", passed, metrics, thresholds)


def criterion_7(deltas=(0.02, 0.04)) -> CriterionResult:
    """Return-to-equilibrium envelope on the weak-coupling Liouvillean surrogate."""
    J = SpectralDensity("ohmic", A=20.0, s=1.0, omega_c=0.5)
    disc = discretize(J, 1.0, 500, (-4, 4))
    base = build_spinboson_liouvillean_surrogate(1.0, disc)
    lss = [level_shift(base, c) for c in base.clusters]
    tau_inv = float(lss[0].eigenvalues[1].imag)
    psi = np.zeros(base.n, complex)
    psi[:4] = [0.6, 0.4, 0.4j, 0.57]
    psi /= np.linalg.norm(psi)
    consts = []
    for d in deltas:
        m = base.with_delta(d)
        rds = [resonance_data(m, c, ls) for c, ls in zip(m.clusters, lss)]
        spectrum = eig(m.generator)
        ts = np.linspace(1, 0.45 * 2 * np.pi / m.spacing, 1500)
        res = expand(m, psi, psi, ts, rds, spectrum=spectrum)
        dev = np.abs(res.exact - res.stationary_value(ts))
        consts.append(sb.fit_equilibrium_constant(ts, dev, d ** 2 * tau_inv / 2))
    spread = (max(consts) - min(consts)) / np.mean(consts)
    thresholds = {"relative_spread": 0.10}
    metrics = {"constants": consts, "relative_spread": float(spread), "tau_inv": tau_inv}
    return CriterionResult(7, "return to equilibrium", spread <= 0.10, metrics, thresholds)


def fock_gram_oracle(forms: np.ndarray, coefficients, dim: int = 48) -> np.ndarray:
    """Overlaps of Weyl vectors built as displaced vacua in a truncated
    two-mode Fock space (Gram-Schmidt modes of the displacement span)."""
    chol = np.linalg.cholesky(np.asarray(forms, dtype=complex))
    ann = np.diag(np.sqrt(np.arange(1, dim)), 1)
    vac = np.zeros(dim)
    vac[0] = 1.0
    vecs = []
    for c in coefficients:
        coords = chol.conj().T @ np.asarray(c, dtype=complex)
        v = np.ones(1, dtype=complex)
        for ck in coords:
            a = 1j * ck / np.sqrt(2)
            v = np.kron(v, scipy.linalg.expm(a * ann.T - np.conj(a) * ann) @ vac)
        vecs.append(v)
    return np.array([[u.conj() @ v for v in vecs] for u in vecs])


def criterion_8(perturb: float = 0.0) -> CriterionResult:
    """Coherent Gram matrix: positive semidefinite and equal to the Fock-space oracle.

    ``perturb`` scales the displacement forms fed to the CCR route only.
    """
    J = SpectralDensity("ohmic", 1.0, 3.0, 1.0)
    params = sb.SpinBosonParams(0.1, 0.5, 1.2, 2.0, J)
    forms = sb.displacement_forms(params)
    gram = sb.coherent_gram(params, forms * (1 + perturb))
    min_eig = float(np.linalg.eigvalsh(gram).min())
    coeffs = [sb.CoherentVector.from_label(lab).coefficients for lab in sb.LABEL_ORDER]
    oracle = fock_gram_oracle(forms, coeffs)
    err = float(np.abs(gram - oracle).max())
    thresholds = {"min_eigenvalue": -1e-9, "oracle_error": 1e-9}
    metrics = {"min_eigenvalue": min_eig, "oracle_error": err,
               "omega_x0": complex(gram[0, 1]).real}
    return CriterionResult(8, "coherent overlaps", min_eig >= -1e-9 and err < 1e-9, metrics, thresholds)


SUITE = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4,
         5: criterion_5, 6: criterion_6, 7: criterion_7, 8: criterion_8}


def run_criterion(number: int, **kwargs) -> CriterionResult:
    t0 = time.perf_counter()
    result = SUITE[number](**kwargs)
    result.runtime = time.perf_counter() - t0
    return result


def run(selection=None, seed: int = 0, perturb: float = 0.0) -> list[CriterionResult]:
    """Run the selected criteria (all by default) in order."""
    out = []
    for n in sorted(selection or SUITE):
        kwargs = {}
        if n == 1:
            kwargs = {"seed": seed, "perturb": perturb}
        elif n == 8:
            kwargs = {"perturb": perturb}
        out.append(run_criterion(n, **kwargs))
    return out
