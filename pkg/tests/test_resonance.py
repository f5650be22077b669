import numpy as np
import pytest
from hypothesis import given, strategies as st

from reskit.bath import (Channel, SpectralDensity, build_friedrichs,
                         build_spinboson_liouvillean_surrogate, discretize, thermal_density,
                         uniform_grid)
from reskit.errors import (A1Violated, CircleTouchesSpectrum, EmptyResonanceSet, NotSeparating,
                           OutsideWindow)
from reskit.linop import eig, restricted_resolvent
from reskit.model import EigenvalueCluster, Model
from reskit.resonance import (PARTIALLY_STABLE, UNSTABLE, a_z, gaps, level_shift,
                              neville_at_zero, resonance_data, riesz_projection)


def flat_model(n=300, delta=0.1):
    grid = uniform_grid(-1, 1, n)
    return build_friedrichs([(0.0, 1)], [Channel(grid, lambda x: np.ones((len(x), 1)))], delta=delta)


def gapped_model(delta=0.05):
    # coupling vanishes on (-1, 0.3]: the cluster survives as a true eigenvalue
    grid = uniform_grid(-1, 1, 400)
    prof = lambda x: np.clip(x - 0.3, 0, None)[:, None]
    return build_friedrichs([(0.0, 1)], [Channel(grid, prof)], delta=delta)


@pytest.fixture(scope="module")
def surrogate():
    J = SpectralDensity("ohmic", A=20.0, s=1.0, omega_c=0.5)
    disc = discretize(J, 1.0, 500, (-4, 4))
    return build_spinboson_liouvillean_surrogate(1.0, disc), J


def test_neville_recovers_polynomial_at_zero():
    xs = np.array([0.1, 0.2, 0.4, 0.8])
    best, _ = neville_at_zero(xs, 2.0 - 3 * xs + xs ** 3)
    assert abs(best - 2.0) < 1e-12


def test_flat_friedrichs_level_shift_is_i_pi():
    ls = level_shift(flat_model(), flat_model().clusters[0])
    assert abs(ls.eigenvalues[0] - 1j * np.pi) < 1e-6
    assert ls.classification == UNSTABLE


def test_coupling_away_from_e_is_partially_stable():
    m = gapped_model()
    ls = level_shift(m, m.clusters[0])
    assert ls.classification == PARTIALLY_STABLE
    assert ls.eigenvalues[0].imag == 0
    # -int_{0.3}^{1} (x - 0.3)^2 / x dx
    expected = -(0.5 * (1 - 0.09) - 0.6 * 0.7 + 0.09 * np.log(1 / 0.3))
    assert abs(ls.eigenvalues[0].real - expected) < 2e-3


def test_surrogate_system_level_shift(surrogate):
    m, J = surrogate
    ls = level_shift(m, m.clusters[0])
    assert ls.classification == PARTIALLY_STABLE
    lam = ls.eigenvalues
    # golden-rule rate pi rho(eps) (1 + exp(-beta eps)) at eps = beta = 1
    rate = np.pi * thermal_density(J, 1.0, np.array([1.0]))[0] * (1 + np.exp(-1.0))
    assert abs(lam[0]) < 1e-3 * rate
    assert abs(lam[1].imag - rate) < 1e-6 * rate and abs(lam[1].real) < 1e-3 * rate
    gibbs = np.array([np.exp(-0.25), np.exp(0.25)])
    gibbs /= np.linalg.norm(gibbs)
    assert np.abs(ls.projections[0] - np.outer(gibbs, gibbs)).max() < 1e-3


def test_a1_violation_detected():
    l0 = np.diag([0.0, 0.0, 1.0])
    i = np.array([[0, 1, 1], [1, 0, 0], [1, 0, 0]], dtype=float)
    m = Model(l0, i, 0.1, (EigenvalueCluster.on_indices(0.0, [0, 1], 3),), 0.01)
    with pytest.raises(A1Violated):
        level_shift(m, m.clusters[0])


def test_a_z_at_zero_coupling_equals_level_shift():
    m = flat_model(delta=0.0)
    ls = level_shift(m, m.clusters[0])
    assert np.abs(a_z(m, m.clusters[0], 0.0) - ls.matrix).max() < 1e-12


def test_a_z_matches_direct_inversion():
    m = flat_model()
    p = m.clusters[0].projection
    z = -0.01j
    r = restricted_resolvent(m.generator, p, z).embed()
    direct = -p.basis.conj().T @ m.coupling @ r @ m.coupling @ p.basis
    assert np.abs(a_z(m, m.clusters[0], z) - direct).max() < 1e-12


def test_a_z_window_and_half_plane():
    m = flat_model()
    with pytest.raises(OutsideWindow):
        a_z(m, m.clusters[0], 0.1j)
    with pytest.raises(OutsideWindow):
        a_z(m, m.clusters[0], 0.5 - 0.1j, window=0.2)


def test_a_z_deviation_is_linear_in_shift():
    m = flat_model(n=600, delta=0.0)
    ls = level_shift(m, m.clusters[0])
    shifts = np.array([0.02, 0.04, 0.08])
    dev = [np.abs(a_z(m, m.clusters[0], s - 0.2j) - a_z(m, m.clusters[0], -0.2j)).max() for s in shifts]
    slope = np.polyfit(np.log(shifts), np.log(dev), 1)[0]
    assert 0.9 < slope < 1.1
    assert np.isfinite(ls.eigenvalues).all()


def test_riesz_diagonal():
    assert np.allclose(riesz_projection(np.diag([0, 1j]), 0, 0.5), np.diag([1, 0]), atol=1e-12)


def test_riesz_non_normal_matches_eig_projection():
    a = np.array([[0, 1], [0, 1j]])
    sp = eig(a)
    expected = sp.projector([sp.nearest(0)])
    assert np.allclose(riesz_projection(a, 0, 0.5), expected, atol=1e-10)


def test_riesz_full_contour_is_identity():
    assert np.allclose(riesz_projection(np.array([[0, 1], [0, 1j]]), 0.5j, 3), np.eye(2), atol=1e-12)


def test_riesz_rejects_bad_circles():
    with pytest.raises(CircleTouchesSpectrum):
        riesz_projection(np.diag([0, 1.0]), 0, 1.0)
    with pytest.raises(NotSeparating):
        riesz_projection(np.diag([0, 1.0]), 5, 1.0)


def test_stable_energy_matches_eig_oracle():
    m = gapped_model()
    rd = resonance_data(m, m.clusters[0])
    assert rd.energy != 0
    sp = eig(m.generator)
    assert abs(sp.eigenvalues[sp.nearest(rd.energy)] - rd.energy) < 1e-8
    assert abs(rd.a0_at_energy.imag) < 1e-9
    resid = abs(m.clusters[0].e - rd.energy + m.delta ** 2 * rd.a0_at_energy)
    assert resid <= 1e-9


def test_gaps_single_cluster():
    m = flat_model()
    ls = level_shift(m, m.clusters[0])
    object.__setattr__(ls, "eigenvalues", np.array([0, 1j]))
    gd = gaps([ls])
    assert gd.resonance_gap == 1.0 and gd.gamma == 1.0


def test_gaps_two_clusters():
    grid = uniform_grid(-1, 2, 600)
    m = build_friedrichs([(0.0, 1), (1.0, 1)], [Channel(grid, lambda x: np.ones((len(x), 2)))])
    gd = gaps([level_shift(m, c) for c in m.clusters])
    assert abs(gd.eigenvalue_gap - 1.0) < 1e-15
    assert 0 < gd.alpha <= 0.5 * min(gd.c * gd.resonance_gap, gd.eigenvalue_gap)


def test_gaps_need_a_decaying_resonance():
    m = gapped_model()
    with pytest.raises(EmptyResonanceSet):
        gaps([level_shift(m, m.clusters[0])])


def test_surrogate_slowest_rate_is_half_tau_inverse(surrogate):
    m, _ = surrogate
    lss = [level_shift(m, c) for c in m.clusters]
    tau_inv = lss[0].eigenvalues[1].imag
    assert abs(gaps(lss).gamma - tau_inv / 2) < 1e-6 * tau_inv


@given(delta=st.floats(0.01, 0.1), seed=st.integers(0, 1000))
def test_dissipativity_and_resolution_of_identity(delta, seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=(2, 2))
    grid = uniform_grid(-1, 1, 300)
    prof = lambda x: np.stack([c[0, 0] + c[0, 1] * x, c[1, 0] + c[1, 1] * x], axis=1)
    m = build_friedrichs([(0.0, 2)], [Channel(grid, prof)], delta=delta)
    try:
        rd = resonance_data(m, m.clusters[0])
    except Exception as exc:  # degenerate random draws are legitimately rejected
        assert type(exc).__name__ in {"DegenerateLevelShift", "PairingAmbiguous",
                                      "FixedPointDiverged", "NotSeparating",
                                      "CircleTouchesSpectrum"}
        return
    scale = max(1.0, np.abs(rd.eigenvalues).max())
    assert (rd.eigenvalues.imag >= -1e-8 * scale).all()
    assert np.abs(sum(rd.projections) - np.eye(2)).max() < 1e-8
    for q in rd.projections:
        assert np.abs(q @ q - q).max() < 1e-8
