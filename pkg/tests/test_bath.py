import numpy as np
import pytest
import scipy.integrate
from hypothesis import given, strategies as st

from reskit.bath import (Channel, SpectralDensity, build_friedrichs,
                         build_spinboson_liouvillean_surrogate, discretize, thermal_density,
                         uniform_grid)
from reskit.errors import ClusterOutsideContinuum, UnsupportedCoupling, WindowTooNarrow
from reskit.model import Model
from reskit.resonance import PARTIALLY_STABLE, gaps, level_shift

OHMIC = SpectralDensity("ohmic", A=20.0, s=1.0, omega_c=0.5)


@pytest.fixture(scope="module")
def surrogate():
    return build_spinboson_liouvillean_surrogate(1.0, discretize(OHMIC, 1.0, 500, (-4, 4)))


def test_detailed_balance_at_half():
    ratio = thermal_density(OHMIC, 1.0, -0.5) / thermal_density(OHMIC, 1.0, 0.5)
    assert abs(ratio - np.exp(-0.5)) < 1e-12


@given(beta=st.floats(0.1, 10), n=st.integers(50, 400))
def test_detailed_balance_on_symmetric_grid(beta, n):
    d = discretize(OHMIC, beta, 2 * n, (-40, 40))
    g2 = d.couplings ** 2
    neg, pos = g2[:n][::-1], g2[n:]
    assert np.allclose(d.points[:n][::-1], -d.points[n:])
    mask = pos > 1e-300
    assert np.allclose(neg[mask] / pos[mask], np.exp(-beta * d.points[n:][mask]), rtol=1e-10, atol=0)


def test_zero_temperature_has_no_negative_modes():
    d = discretize(OHMIC, np.inf, 400, (-2, 30))
    assert np.all(d.couplings[d.points < 0] == 0)
    assert np.any(d.couplings[d.points > 0] > 0)


def test_total_weight_matches_adaptive_quadrature():
    beta = 1.0
    d = discretize(OHMIC, beta, 1000, (-8, 20))
    f = lambda u: float(thermal_density(OHMIC, beta, u))
    ref = scipy.integrate.quad(f, -8, 0, limit=200)[0] + scipy.integrate.quad(f, 0, 20, limit=200)[0]
    assert abs(np.sum(d.couplings ** 2) - ref) <= 5e-3 * ref


def test_narrow_window_rejected():
    with pytest.raises(WindowTooNarrow):
        discretize(OHMIC, 1.0, 200, (-0.5, 0.5))


def test_discretize_needs_enough_modes():
    with pytest.raises(ValueError):
        discretize(OHMIC, 1.0, 50, (-4, 4))


def test_gauss_scheme_integrates_weights():
    d = uniform_grid(-1, 1, 120, scheme="gauss")
    assert abs(d.weights.sum() - 2) < 1e-13


def test_friedrichs_structure_and_a1():
    m = build_friedrichs([(0.0, 1)], [Channel(uniform_grid(-1, 1, 200), lambda x: np.ones((len(x), 1)))])
    assert m.a1_residual(m.clusters[0]) == 0.0
    assert np.allclose(np.diag(m.l0)[1:].real, uniform_grid(-1, 1, 200).points)


def test_decoupled_direction_is_partially_stable():
    prof = lambda x: np.stack([np.ones_like(x), np.zeros_like(x)], axis=1)
    m = build_friedrichs([(0.0, 2)], [Channel(uniform_grid(-1, 1, 300), prof)])
    ls = level_shift(m, m.clusters[0])
    assert ls.classification == PARTIALLY_STABLE
    assert abs(ls.eigenvalues[0]) < 1e-12


def test_cluster_outside_continuum():
    with pytest.raises(ClusterOutsideContinuum):
        build_friedrichs([(2.0, 1)], [Channel(uniform_grid(-1, 1, 100), lambda x: np.ones((len(x), 1)))])


def test_surrogate_free_spectrum(surrogate):
    grid = surrogate.meta["modes"]
    bohr = np.array([0.0, 1.0, -1.0, 0.0])
    expected = np.sort(np.concatenate([bohr] + [b + discretize(OHMIC, 1.0, 500, (-4, 4)).points
                                                 for b in bohr]))
    assert grid == 500
    assert np.allclose(np.sort(np.diag(surrogate.l0).real), expected)
    assert np.all(surrogate.l0 == np.diag(np.diag(surrogate.l0)))


def test_surrogate_satisfies_a1_exactly(surrogate):
    assert all(surrogate.a1_residual(c) == 0.0 for c in surrogate.clusters)


def test_surrogate_cluster_gap_is_eps(surrogate):
    lss = [level_shift(surrogate, c) for c in surrogate.clusters]
    assert gaps(lss).eigenvalue_gap == 1.0


def test_surrogate_rejects_weyl_coupling_and_larger_sectors():
    d = discretize(OHMIC, 1.0, 200, (-4, 4))
    with pytest.raises(UnsupportedCoupling):
        build_spinboson_liouvillean_surrogate(1.0, d, coupling="weyl")
    with pytest.raises(UnsupportedCoupling):
        build_spinboson_liouvillean_surrogate(1.0, d, truncation=2)


def test_friedrichs_grid_refinement():
    prof = lambda x: np.sqrt(1 + 3 * x ** 4)[:, None]
    out = []
    for n in (2000, 4000):
        m = build_friedrichs([(0.0, 1)], [Channel(uniform_grid(-1, 1, n), prof)])
        out.append(level_shift(m, m.clusters[0]).eigenvalues[0])
    assert abs(out[1] - out[0]) < 1e-3 * abs(out[1])


def test_surrogate_grid_refinement():
    out = []
    for n in (500, 1000):
        m = build_spinboson_liouvillean_surrogate(1.0, discretize(OHMIC, 1.0, n, (-4, 4)))
        out.append(np.concatenate([level_shift(m, c).eigenvalues for c in m.clusters]))
    assert np.abs(out[1] - out[0]).max() < 1e-3 * np.abs(out[1]).max()


def test_model_json_round_trip(surrogate):
    back = Model.from_json(surrogate.to_json())
    assert np.array_equal(back.l0, surrogate.l0) and np.array_equal(back.coupling, surrogate.coupling)
    assert [c.e for c in back.clusters] == [c.e for c in surrogate.clusters]


def test_spectral_density_round_trip():
    for J in (OHMIC, SpectralDensity("table", table_omega=(0.1, 1.0, 2.0), table_values=(0.0, 1.0, 0.0))):
        assert SpectralDensity.from_dict(J.to_dict()) == J
    with pytest.raises(ValueError):
        SpectralDensity("ohmic", A=-1.0)
