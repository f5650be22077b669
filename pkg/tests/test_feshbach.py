import numpy as np
import pytest
from hypothesis import given, strategies as st

from reskit.errors import NotInKernel, NotNested, SingularShift
from reskit.feshbach import (block_factors, block_resolvent, feshbach_map, isospectral_check,
                             iterate_feshbach, lift_eigenvector, scaled_det)
from reskit.linop import OrthProjection, resolvent

from conftest import random_hermitian

SQ2 = np.sqrt(2.0)
H2 = np.array([[0.0, 1.0], [1.0, 2.0]])
E1 = OrthProjection.coordinate([0], 2)


def schur_oracle(h, basis, z):
    """Schur complement of H - z on span(basis), by plain solves."""
    n = h.shape[0]
    full = np.linalg.qr(np.hstack([basis, np.random.default_rng(0).normal(size=(n, n))]))[0]
    r = basis.shape[1]
    a = full.conj().T @ (h - z * np.eye(n)) @ full
    return a[:r, :r] - a[:r, r:] @ np.linalg.solve(a[r:, r:], a[r:, :r]), full[:, :r]


def random_projection(rng, n, rank):
    b = rng.normal(size=(n, rank)) + 1j * rng.normal(size=(n, rank))
    return OrthProjection(np.linalg.qr(b)[0], n)


def test_block_diagonal_map_is_shifted_entry():
    fr = feshbach_map(np.diag([1.0, 2.0]), E1, 0.5)
    assert abs(fr.map_matrix[0, 0] - 0.5) < 1e-15


def test_two_by_two_map_value():
    fr = feshbach_map(H2, E1, -1j)
    assert abs(fr.map_matrix[0, 0] - (-0.4 + 1.2j)) < 1e-14


def test_map_vanishes_at_eigenvalue():
    fr = feshbach_map(H2, E1, 1 + SQ2)
    assert abs(fr.map_matrix[0, 0]) < 1e-12


def test_complement_eigenvalue_raises():
    with pytest.raises(SingularShift):
        feshbach_map(H2, E1, 2.0)


def test_block_resolvent_of_block_diagonal():
    h = np.diag([1.0, 2.0, 3.0])
    q = OrthProjection.coordinate([0, 1], 3)
    br = block_resolvent(h, q, 0.5j)
    assert np.abs(br.qp).max() == 0 and np.abs(br.pq).max() == 0
    assert np.allclose(br.qq, np.diag(1 / (np.array([1.0, 2.0]) - 0.5j)))
    assert np.allclose(br.pp, [[1 / (3.0 - 0.5j)]])


def test_block_resolvent_reassembles_random(rng):
    h = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    q = random_projection(rng, 6, 2)
    z = 0.3 - 0.2j
    direct = np.linalg.inv(h - z * np.eye(6))
    assert np.linalg.norm(block_resolvent(h, q, z).assemble() - direct) <= 1e-10 * np.linalg.norm(direct)


def test_block_resolvent_identity_projection(rng):
    h = random_hermitian(rng, 4)
    br = block_resolvent(h, OrthProjection.identity(4), 0.2 + 1j)
    assert np.allclose(br.qq, resolvent(h, 0.2 + 1j), atol=1e-13)


def test_three_factor_product_is_resolvent(rng):
    h = rng.normal(size=(7, 7)) + 1j * rng.normal(size=(7, 7))
    q = OrthProjection.coordinate([0, 1, 2], 7)
    z = 0.1 + 0.4j
    lo, mid, up = block_factors(h, q, z)
    assert np.abs(lo @ mid @ up - np.linalg.inv(h - z * np.eye(7))).max() < 1e-10


def test_map_agrees_with_schur_oracle(rng):
    h = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    q = random_projection(rng, 8, 3)
    z = 0.7 - 0.5j
    oracle, basis = schur_oracle(h, q.basis, z)
    emb = basis @ oracle @ basis.conj().T
    assert np.abs(feshbach_map(h, q, z).embedded() - emb).max() < 1e-10


def test_iterate_with_same_projection():
    h = np.diag([1.0, 2.0, 3.0]) + 0.3 * (np.eye(3, k=1) + np.eye(3, k=-1))
    q = OrthProjection.coordinate([0, 1], 3)
    it = iterate_feshbach(h, q, q, -1j)
    assert np.allclose(it.embedded(), feshbach_map(h, q, -1j).embedded(), atol=1e-12)


def test_iterate_nested_diagonal():
    h = np.diag([1.0, 2.0, 3.0])
    q = OrthProjection.coordinate([0, 1], 3)
    qp = OrthProjection.coordinate([0], 3)
    it = iterate_feshbach(h, q, qp, -1j)
    assert np.allclose(it.embedded(), feshbach_map(h, qp, -1j).embedded(), atol=1e-12)


def test_iterate_nested_random(rng):
    h = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    q = random_projection(rng, 8, 3)
    qp = OrthProjection(q.basis[:, :1], 8)
    z = 0.2 + 0.6j
    it = iterate_feshbach(h, q, qp, z).embedded()
    direct = feshbach_map(h, qp, z).embedded()
    assert np.abs(it - direct).max() <= 1e-10 * max(1.0, np.abs(direct).max())


def test_iterate_rejects_non_nested():
    with pytest.raises(NotNested):
        iterate_feshbach(np.eye(3), OrthProjection.coordinate([0], 3),
                         OrthProjection.coordinate([1], 3), 1j)


def test_lift_block_diagonal():
    psi = lift_eigenvector(np.diag([1.0, 2.0, 3.0]), OrthProjection.coordinate([0, 1], 3), 2.0, [0.0, 1.0])
    assert np.allclose(psi, [0.0, 1.0, 0.0])


def test_lift_two_by_two():
    psi = lift_eigenvector(H2, E1, 1 + SQ2, [1.0])
    assert np.allclose(psi, [1.0, 1 / (SQ2 - 1)], atol=1e-12)


def test_lift_random_hermitian_eigenpair(rng):
    h = random_hermitian(rng, 8)
    w, v = np.linalg.eigh(h)
    q = OrthProjection.coordinate([0, 1], 8)
    psi = lift_eigenvector(h, q, w[3], v[:2, 3])
    assert np.linalg.norm(h @ psi - w[3] * psi) <= 1e-8 * np.linalg.norm(h, 2) * np.linalg.norm(psi)
    overlap = abs(np.vdot(v[:, 3], psi)) / np.linalg.norm(psi)
    assert abs(overlap - 1) < 1e-10


def test_lift_rejects_non_kernel_vector():
    with pytest.raises(NotInKernel):
        lift_eigenvector(H2, E1, 0.5, [1.0])


def test_isospectral_report():
    rep = isospectral_check(H2, E1, z_samples=[0.5j, -1.0])
    assert rep["max_det_at_eigenvalues"] < 1e-12
    assert rep["min_det_elsewhere"] > 1e-3


def test_scaled_det_of_singular_matrix_is_zero():
    assert scaled_det(np.array([[1.0, 2.0], [2.0, 4.0]])) < 1e-15
    assert abs(scaled_det(np.eye(3)) - 1) < 1e-15


@given(seed=st.integers(0, 2**31 - 1))
def test_isospectrality_on_random_matrices(seed):
    rng = np.random.default_rng(seed)
    h = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    rep = isospectral_check(h, random_projection(rng, 8, 2))
    assert rep["max_det_at_eigenvalues"] < 1e-8


@given(seed=st.integers(0, 2**31 - 1))
def test_weak_feshbach_consistency(seed):
    rng = np.random.default_rng(seed)
    h = random_hermitian(rng, 6)
    w, v = np.linalg.eigh(h)
    q = random_projection(rng, 6, 2)
    comp = q.complement_basis
    cw = np.linalg.eigvalsh(comp.conj().T @ h @ comp)
    k = int(np.argmax([np.min(np.abs(cw - e)) for e in w]))
    if np.min(np.abs(cw - w[k])) < 1e-3:
        return
    coords = q.basis.conj().T @ v[:, k]
    if np.linalg.norm(coords) < 1e-6:
        return
    fr = feshbach_map(h, q, w[k])
    assert np.linalg.norm(fr.map_matrix @ coords) < 1e-9 * max(1.0, np.linalg.norm(h, 2))
