import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st

from reskit.errors import DefectiveMatrix, NotSelfAdjoint, SingularShift
from reskit.linop import (OrthProjection, eig, evolve, from_json, propagator_exact,
                          resolvent, restricted_resolvent, to_json)

from conftest import random_hermitian


def test_resolvent_of_diagonal_at_zero():
    # (H - z)^{-1} at z = 0 is H^{-1}
    r = resolvent(np.diag([1.0, 2.0]), 0.0)
    assert np.allclose(r, np.diag([1.0, 0.5]), atol=1e-14)


def test_resolvent_on_spectrum_raises():
    with pytest.raises(SingularShift):
        resolvent(np.diag([1.0, 2.0]), 1.0)


def test_resolvent_matches_two_by_two_inverse():
    h = np.array([[0.0, 1.0], [1.0, 2.0]])
    z = 0.3 - 0.7j
    a = h - z * np.eye(2)
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    expected = np.array([[a[1, 1], -a[0, 1]], [-a[1, 0], a[0, 0]]]) / det
    assert np.allclose(resolvent(h, z), expected, atol=1e-14)


def test_restricted_resolvent_on_coordinate_complement():
    h = np.diag([1.0, 2.0, 3.0])
    q = OrthProjection.coordinate([0], 3)
    r = restricted_resolvent(h, q, 0.0)
    assert np.allclose(r.matrix, np.diag([1 / 2, 1 / 3]))
    assert np.allclose(r.embed(), np.diag([0.0, 1 / 2, 1 / 3]))


def test_eig_orders_and_matches_closed_form():
    sp = eig(np.array([[1.0, 1.0], [1.0, -1.0]]) + np.eye(2))
    assert np.allclose(sp.eigenvalues.real, [1 - np.sqrt(2), 1 + np.sqrt(2)])
    assert sp.hermitian


def test_eig_non_normal_left_vectors_are_biorthogonal():
    h = np.array([[1.0, 2.0], [0.0, 3.0]])
    sp = eig(h)
    assert np.allclose(sp.left.conj().T @ sp.vectors, np.eye(2), atol=1e-12)
    assert np.allclose(sp.projector([0]) + sp.projector([1]), np.eye(2), atol=1e-12)


def test_jordan_block_is_defective():
    with pytest.raises(DefectiveMatrix):
        eig(np.array([[1.0, 1.0], [0.0, 1.0]]))


def test_propagator_at_zero_time_is_inner_product(rng):
    h = random_hermitian(rng, 5)
    phi, psi = rng.normal(size=5) + 0j, rng.normal(size=5) + 1j * rng.normal(size=5)
    assert abs(propagator_exact(h, 0.0, phi, psi) - np.vdot(phi, psi)) < 1e-12


def test_propagator_of_diagonal():
    h = np.diag([0.5, -1.0])
    psi = np.array([1.0, 1.0]) / np.sqrt(2)
    t = np.array([0.0, 1.0, 2.5])
    expected = 0.5 * (np.exp(0.5j * t) + np.exp(-1j * t))
    assert np.allclose(propagator_exact(h, t, psi, psi), expected, atol=1e-14)


def test_propagator_matches_matrix_exponential(rng):
    h = random_hermitian(rng, 6)
    phi, psi = rng.normal(size=6) + 0j, rng.normal(size=6) + 0j
    t = 1.7
    expected = np.vdot(phi, scipy.linalg.expm(1j * t * h) @ psi)
    assert abs(propagator_exact(h, t, phi, psi) - expected) < 1e-12


def test_propagator_rejects_non_hermitian():
    with pytest.raises(NotSelfAdjoint):
        propagator_exact(np.array([[0.0, 1.0], [0.0, 0.0]]), 1.0, [1, 0], [1, 0])


def test_json_round_trip(rng):
    m = rng.normal(size=(3, 4)) + 1j * rng.normal(size=(3, 4))
    assert np.array_equal(from_json(to_json(m)), m)


def test_orthprojection_from_matrix_rejects_non_projection():
    with pytest.raises(ValueError):
        OrthProjection.from_matrix(np.array([[1.0, 1.0], [0.0, 0.0]]))


seeds = st.integers(min_value=0, max_value=2**31 - 1)


@given(seed=seeds, t=st.floats(-20, 20))
def test_evolution_is_unitary(seed, t):
    rng = np.random.default_rng(seed)
    h = random_hermitian(rng, 5)
    psi = rng.normal(size=5) + 1j * rng.normal(size=5)
    assert abs(np.linalg.norm(evolve(h, t, psi)) - np.linalg.norm(psi)) < 1e-10 * np.linalg.norm(psi)


@given(seed=seeds, z1=st.complex_numbers(max_magnitude=3), z2=st.complex_numbers(max_magnitude=3))
def test_resolvent_identity(seed, z1, z2):
    rng = np.random.default_rng(seed)
    h = random_hermitian(rng, 4)
    z1, z2 = z1 + 1.5j, z2 - 1.5j
    lhs = resolvent(h, z1) - resolvent(h, z2)
    rhs = (z1 - z2) * resolvent(h, z1) @ resolvent(h, z2)
    assert np.abs(lhs - rhs).max() < 1e-10 * (1 + abs(z1 - z2))


@given(seed=seeds, rank=st.integers(0, 5))
def test_projection_and_complement_sum_to_identity(seed, rank):
    rng = np.random.default_rng(seed)
    b = rng.normal(size=(5, rank)) + 1j * rng.normal(size=(5, rank))
    q = OrthProjection(np.linalg.qr(b)[0] if rank else np.zeros((5, 0)), 5)
    p = q.matrix + q.complement().matrix
    assert np.abs(p - np.eye(5)).max() < 1e-12
