"""Feshbach (Schur complement) map and the exact identities built on it.

For an orthogonal projection Q with orthonormal range basis V and complement
basis W, every operator is handled in the block coordinates (V, W):

    F_z = V*HV - z - V*HW (W*HW - z)^{-1} W*HV
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from reskit.errors import NotInKernel, NotNested, SingularShift
from reskit.linop import (
    DEFAULT_TOL,
    OrthProjection,
    Tolerances,
    as_cmatrix,
    eig,
    opnorm,
    resolvent,
)


@dataclass(frozen=True)
class FeshbachResult:
    map_matrix: np.ndarray
    z: complex
    projection: OrthProjection = field(repr=False)
    # Q H Q^perp R^Q_z  (rank x (n - rank)) and R^Q_z Q^perp H Q ((n - rank) x rank)
    left_dressing: np.ndarray = field(repr=False)
    right_dressing: np.ndarray = field(repr=False)
    complement_resolvent: np.ndarray = field(repr=False)
    basis: np.ndarray = field(repr=False)

    @property
    def rank(self) -> int:
        return self.map_matrix.shape[0]

    def embedded(self) -> np.ndarray:
        """The map as an operator on the ambient space (zero off Ran Q)."""
        return self.basis @ self.map_matrix @ self.basis.conj().T

    def inverse(self) -> np.ndarray:
        try:
            return scipy.linalg.inv(self.map_matrix)
        except np.linalg.LinAlgError as exc:
            raise SingularShift(f"z={self.z} is an eigenvalue of H") from exc


def scaled_det(m: np.ndarray, scale: float = 0.0) -> float:
    """|det m| divided by the product of its row norms (Hadamard ratio, in [0, 1]).

    Each row norm is floored at ``scale`` so that a matrix that is small
    compared with the operator it came from reads as (nearly) singular.
    Computed from the LU factors so the raw determinant never under/overflows.
    """
    m = np.asarray(m, dtype=complex)
    if m.shape[0] == 0:
        return 1.0
    rows = np.maximum(np.linalg.norm(m, axis=1), scale)
    if np.any(rows == 0):
        return 0.0
    with warnings.catch_warnings():
        # an exactly singular factor is a legitimate answer (determinant 0)
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, _ = scipy.linalg.lu_factor(m / rows[:, None], check_finite=False)
    return float(np.prod(np.abs(np.diag(lu))))


def feshbach_map(h, q: OrthProjection, z: complex,
                 tol: Tolerances = DEFAULT_TOL) -> FeshbachResult:
    """Feshbach map of ``H - z`` onto Ran Q.

    Raises SingularShift when z lies (within ``tol.shift``) on the spectrum of
    the compressed complement.
    """
    h = as_cmatrix(h, square=True)
    v, w = q.basis, q.complement_basis
    hqq = v.conj().T @ h @ v
    hqw = v.conj().T @ h @ w
    hwq = w.conj().T @ h @ v
    hww = w.conj().T @ h @ w
    rw = resolvent(hww, z, tol)
    left = hqw @ rw
    right = rw @ hwq
    fmap = hqq - z * np.eye(q.rank) - hqw @ right
    return FeshbachResult(fmap, complex(z), q, left, right, rw, v)


@dataclass(frozen=True)
class BlockResolvent:
    qq: np.ndarray
    qp: np.ndarray
    pq: np.ndarray
    pp: np.ndarray
    range_basis: np.ndarray = field(repr=False)
    complement_basis: np.ndarray = field(repr=False)

    def assemble(self) -> np.ndarray:
        v, w = self.range_basis, self.complement_basis
        vh, wh = v.conj().T, w.conj().T
        return v @ self.qq @ vh + v @ self.qp @ wh + w @ self.pq @ vh + w @ self.pp @ wh


def block_resolvent(h, q: OrthProjection, z: complex,
                    tol: Tolerances = DEFAULT_TOL) -> BlockResolvent:
    """The four blocks of ``R_z`` from the Feshbach map and its dressings."""
    fr = feshbach_map(h, q, z, tol)
    finv = fr.inverse()
    return BlockResolvent(
        qq=finv,
        qp=-finv @ fr.left_dressing,
        pq=-fr.right_dressing @ finv,
        pp=fr.complement_resolvent + fr.right_dressing @ finv @ fr.left_dressing,
        range_basis=q.basis,
        complement_basis=q.complement_basis,
    )


def block_factors(h, q: OrthProjection, z: complex,
                  tol: Tolerances = DEFAULT_TOL) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lower-unipotent, block-diagonal and upper-unipotent factors of ``R_z``
    in block coordinates; their product is the resolvent."""
    fr = feshbach_map(h, q, z, tol)
    r, m = q.rank, q.n - q.rank
    lower = np.eye(q.n, dtype=complex)
    lower[r:, :r] = -fr.right_dressing
    middle = np.zeros((q.n, q.n), dtype=complex)
    middle[:r, :r] = fr.inverse()
    middle[r:, r:] = fr.complement_resolvent
    upper = np.eye(q.n, dtype=complex)
    upper[:r, r:] = -fr.left_dressing
    return lower, middle, upper


def iterate_feshbach(h, q: OrthProjection, q_inner: OrthProjection, z: complex,
                     tol: Tolerances = DEFAULT_TOL) -> FeshbachResult:
    """Feshbach map of ``F(H - z; Q)`` onto Ran Q' (Q' nested in Q).

    The returned result lives on Ran Q'; its ``basis`` is expressed in the
    ambient space so ``embedded()`` compares directly with
    ``feshbach_map(h, q_inner, z).embedded()``.
    """
    qq = q.matrix
    qp = q_inner.matrix
    scale = max(1.0, opnorm(qq))
    if (np.abs(qp @ qq - qp).max(initial=0.0) > 1e-10 * scale
            or np.abs(qq @ qp - qp).max(initial=0.0) > 1e-10 * scale):
        raise NotNested("Q' Q = Q' = Q Q' does not hold")
    outer = feshbach_map(h, q, z, tol)
    coords = q.basis.conj().T @ q_inner.basis
    inner_proj = OrthProjection(coords, q.rank)
    second = feshbach_map(outer.map_matrix, inner_proj, 0.0, tol)
    return FeshbachResult(
        second.map_matrix, complex(z), q_inner, second.left_dressing,
        second.right_dressing, second.complement_resolvent,
        q.basis @ inner_proj.basis,
    )


def lift_eigenvector(h, q: OrthProjection, energy: complex, phi,
                     tol: float = 1e-8) -> np.ndarray:
    """Lift a kernel vector of ``F(H - E; Q)`` to an eigenvector of H.

    ``phi`` is given either in Ran Q coordinates (length rank Q) or as an
    ambient vector in Ran Q. The returned ambient vector psi has Q psi = phi.
    """
    h = as_cmatrix(h, square=True)
    phi = np.asarray(phi, dtype=complex).ravel()
    coords = phi if phi.size == q.rank else q.basis.conj().T @ phi
    fr = feshbach_map(h, q, energy)
    resid = np.linalg.norm(fr.map_matrix @ coords)
    scale = max(1.0, opnorm(h)) * max(np.linalg.norm(coords), 1e-300)
    if resid > tol * scale:
        raise NotInKernel(f"||F phi|| = {resid:.3e} exceeds tolerance")
    return q.basis @ coords - q.complement_basis @ (fr.right_dressing @ coords)


def isospectral_check(h, q: OrthProjection, z_samples=(), min_distance: float = 0.1,
                      tol: Tolerances = DEFAULT_TOL) -> dict:
    """Scaled determinant of the Feshbach map at eigenvalues of H and at
    extra sample points.

    Eigenvalues closer than ``min_distance`` to the spectrum of the compressed
    complement are skipped (the map is not defined there).
    """
    h = as_cmatrix(h, square=True)
    hnorm = max(1.0, opnorm(h))
    spectrum = eig(h, tol).eigenvalues
    w = q.complement_basis
    comp = eig(w.conj().T @ h @ w, tol).eigenvalues if w.shape[1] else np.zeros(0)
    rows = []
    for lam in spectrum:
        dist = float(np.min(np.abs(comp - lam))) if comp.size else np.inf
        if dist <= min_distance:
            continue
        fr = feshbach_map(h, q, lam, tol)
        rows.append({"z": complex(lam), "eigenvalue": True, "complement_distance": dist,
                     "scaled_det": scaled_det(fr.map_matrix, hnorm + abs(lam))})
    for z in z_samples:
        dist_h = float(np.min(np.abs(spectrum - z)))
        dist = float(np.min(np.abs(comp - z))) if comp.size else np.inf
        if dist <= min_distance:
            continue
        fr = feshbach_map(h, q, z, tol)
        rows.append({"z": complex(z), "eigenvalue": False, "spectrum_distance": dist_h,
                     "complement_distance": dist,
                     "scaled_det": scaled_det(fr.map_matrix, hnorm + abs(z))})
    eig_dets = [r["scaled_det"] for r in rows if r["eigenvalue"]]
    other = [r["scaled_det"] for r in rows if not r["eigenvalue"]]
    return {
        "rows": rows,
        "max_det_at_eigenvalues": max(eig_dets, default=0.0),
        "min_det_elsewhere": min(other, default=np.inf),
    }
