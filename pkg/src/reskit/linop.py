"""Dense complex linear algebra used throughout the package.

Inner products are antilinear in the first slot, ``<phi, psi> = phi^* psi``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from reskit.errors import DefectiveMatrix, NotSelfAdjoint, SingularShift


@dataclass(frozen=True)
class Tolerances:
    structural: float = 1e-12
    solve: float = 1e-10
    shift: float = 1e-8
    defective_cond: float = 1e10

    def to_dict(self) -> dict:
        return {
            "structural": self.structural,
            "solve": self.solve,
            "shift": self.shift,
            "defective_cond": self.defective_cond,
        }


DEFAULT_TOL = Tolerances()


def as_cmatrix(a, square: bool = False) -> np.ndarray:
    """Return ``a`` as a 2-D complex array, rejecting NaN/Inf."""
    m = np.atleast_2d(np.asarray(a, dtype=complex))
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    if square and m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    return m


def is_hermitian(h: np.ndarray, tol: float = DEFAULT_TOL.structural) -> bool:
    scale = max(1.0, np.abs(h).max(initial=0.0))
    return bool(np.abs(h - h.conj().T).max(initial=0.0) <= tol * scale)


def opnorm(h: np.ndarray) -> float:
    return float(np.linalg.norm(h, 2)) if h.size else 0.0


def _orthonormal_complement(basis: np.ndarray, n: int) -> np.ndarray:
    if basis.shape[1] == 0:
        return np.eye(n, dtype=complex)
    if basis.shape[1] == n:
        return np.zeros((n, 0), dtype=complex)
    return scipy.linalg.null_space(basis.conj().T).astype(complex)


class OrthProjection:
    """Orthogonal projection carried together with orthonormal bases of its
    range and of the range of its complement."""

    def __init__(self, basis, n: int | None = None):
        b = np.asarray(basis, dtype=complex)
        if b.ndim == 1:
            b = b[:, None]
        if n is None:
            n = b.shape[0]
        if b.shape[0] != n:
            raise ValueError("basis rows must equal the space dimension")
        gram_err = np.abs(b.conj().T @ b - np.eye(b.shape[1])).max(initial=0.0)
        if b.shape[1] and gram_err > 1e-13:
            # re-orthonormalise; keeps the span, fixes round-off
            q, r = np.linalg.qr(b)
            keep = np.abs(np.diag(r)) > 1e-12 * max(1.0, np.abs(r).max())
            b = q[:, keep]
        self.n = n
        self.basis = b
        self.rank = b.shape[1]
        self._matrix = None
        self._complement_basis = None
        self.indices = None

    @classmethod
    def from_matrix(cls, p, tol: float = DEFAULT_TOL.structural) -> "OrthProjection":
        p = as_cmatrix(p, square=True)
        scale = max(1.0, opnorm(p))
        if np.abs(p @ p - p).max(initial=0.0) > tol * scale * 10 or not is_hermitian(p, tol * 10):
            raise ValueError("matrix is not an orthogonal projection")
        w, v = np.linalg.eigh((p + p.conj().T) / 2)
        return cls(v[:, w > 0.5], p.shape[0])

    @classmethod
    def coordinate(cls, indices, n: int) -> "OrthProjection":
        """Projection onto the span of the given standard basis vectors."""
        b = np.zeros((n, len(indices)), dtype=complex)
        for col, i in enumerate(indices):
            b[i, col] = 1.0
        proj = cls.__new__(cls)
        proj.n, proj.basis, proj.rank = n, b, len(indices)
        proj._matrix = None
        proj._complement_basis = None
        proj.indices = list(indices)
        return proj

    @classmethod
    def zero(cls, n: int) -> "OrthProjection":
        return cls.coordinate([], n)

    @classmethod
    def identity(cls, n: int) -> "OrthProjection":
        return cls.coordinate(list(range(n)), n)

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = self.basis @ self.basis.conj().T
        return self._matrix

    @property
    def complement_basis(self) -> np.ndarray:
        if self._complement_basis is None:
            if self.indices is not None:
                rest = self.complement_indices()
                c = np.zeros((self.n, len(rest)), dtype=complex)
                c[rest, np.arange(len(rest))] = 1.0
                self._complement_basis = c
            else:
                self._complement_basis = _orthonormal_complement(self.basis, self.n)
        return self._complement_basis

    def complement(self) -> "OrthProjection":
        comp = OrthProjection.__new__(OrthProjection)
        comp.n = self.n
        comp.basis = self.complement_basis
        comp.rank = comp.basis.shape[1]
        comp._matrix = None
        comp._complement_basis = self.basis
        comp.indices = None if self.indices is None else self.complement_indices()
        return comp

    def complement_indices(self) -> list:
        """Coordinates outside a coordinate projection."""
        taken = set(self.indices)
        return [i for i in range(self.n) if i not in taken]

    def contains(self, other: "OrthProjection", tol: float = 1e-10) -> bool:
        """True if Ran other is a subspace of Ran self."""
        resid = other.basis - self.matrix @ other.basis
        return bool(np.abs(resid).max(initial=0.0) <= tol)

    def __repr__(self) -> str:
        return f"OrthProjection(n={self.n}, rank={self.rank})"


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray
    vectors: np.ndarray
    left: np.ndarray | None = None
    hermitian: bool = False

    def projector(self, indices) -> np.ndarray:
        """Spectral (Riesz) projection onto the listed eigenvalues."""
        idx = np.atleast_1d(indices)
        v = self.vectors[:, idx]
        if self.hermitian:
            return v @ v.conj().T
        return v @ self.left[:, idx].conj().T

    def nearest(self, z: complex) -> int:
        return int(np.argmin(np.abs(self.eigenvalues - z)))


def _fix_phases(v: np.ndarray) -> np.ndarray:
    v = v.copy()
    for k in range(v.shape[1]):
        col = v[:, k]
        j = int(np.argmax(np.abs(col)))
        if np.abs(col[j]) > 0:
            v[:, k] = col * (np.abs(col[j]) / col[j])
    return v


def _sort_key(w: np.ndarray) -> np.ndarray:
    return np.lexsort((np.round(w.imag, 12), np.round(w.real, 12)))


def eig(h, tol: Tolerances = DEFAULT_TOL) -> Spectrum:
    """Eigendecomposition with deterministic ordering and phase convention.

    Hermitian input goes through ``eigh``; otherwise the left eigenvectors are
    taken from the inverse of the right eigenvector matrix so that
    ``left^* right = 1``.
    """
    h = as_cmatrix(h, square=True)
    if is_hermitian(h, tol.structural):
        w, v = scipy.linalg.eigh((h + h.conj().T) / 2)
        return Spectrum(w.astype(complex), _fix_phases(v.astype(complex)), None, True)
    w, v = scipy.linalg.eig(h)
    order = _sort_key(w)
    w, v = w[order], v[:, order]
    v = v / np.linalg.norm(v, axis=0)
    v = _fix_phases(v)
    if not np.all(np.isfinite(v)) or np.linalg.cond(v) > tol.defective_cond:
        raise DefectiveMatrix("eigenvector matrix is (numerically) singular")
    left = np.linalg.inv(v).conj().T
    return Spectrum(w, v, left, False)


def resolvent(h, z: complex, tol: Tolerances = DEFAULT_TOL) -> np.ndarray:
    """``(H - z)^{-1}``; raises SingularShift when z sits on the spectrum."""
    h = as_cmatrix(h, square=True)
    n = h.shape[0]
    if n == 0:
        return np.zeros((0, 0), dtype=complex)
    a = h - z * np.eye(n)
    try:
        with np.errstate(all="ignore"):
            inv = scipy.linalg.inv(a, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularShift(f"z={z} is an eigenvalue") from exc
    scale = max(1.0, np.abs(h).max())
    if not np.all(np.isfinite(inv)) or np.linalg.norm(inv, 1) * scale * tol.shift > 1.0:
        raise SingularShift(f"z={z} is within {tol.shift:g} of the spectrum")
    return inv


@dataclass(frozen=True)
class RestrictedOperator:
    """Operator on Ran Q^perp stored in the orthonormal complement basis."""

    matrix: np.ndarray
    basis: np.ndarray = field(repr=False)

    def embed(self) -> np.ndarray:
        return self.basis @ self.matrix @ self.basis.conj().T


def compress(h, q: OrthProjection) -> np.ndarray:
    """``Q^perp H Q^perp`` written in the complement basis."""
    v = q.complement_basis
    return v.conj().T @ h @ v


def restricted_resolvent(h, q: OrthProjection, z: complex,
                         tol: Tolerances = DEFAULT_TOL) -> RestrictedOperator:
    h = as_cmatrix(h, square=True)
    return RestrictedOperator(resolvent(compress(h, q), z, tol), q.complement_basis)


def propagator_exact(h, t, phi, psi, spectrum: Spectrum | None = None,
                     tol: Tolerances = DEFAULT_TOL):
    """``<phi, exp(itH) psi>`` from the orthonormal eigenbasis of Hermitian H.

    ``t`` may be a scalar or an array; the result has the same shape.
    """
    if spectrum is None:
        h = as_cmatrix(h, square=True)
        if not is_hermitian(h, tol.structural):
            raise NotSelfAdjoint("propagator_exact needs a self-adjoint generator")
        spectrum = eig(h, tol)
    elif not spectrum.hermitian:
        raise NotSelfAdjoint("propagator_exact needs a self-adjoint generator")
    v = spectrum.vectors
    weights = (v.conj().T @ np.asarray(phi, dtype=complex)).conj() * (v.conj().T @ np.asarray(psi, dtype=complex))
    lam = spectrum.eigenvalues.real
    t_arr = np.asarray(t, dtype=float)
    out = np.exp(1j * np.multiply.outer(t_arr, lam)) @ weights
    return complex(out) if t_arr.ndim == 0 else out


def evolve(h, t: float, psi) -> np.ndarray:
    """``exp(itH) psi`` by Pade scaling-and-squaring (no eigendecomposition)."""
    h = as_cmatrix(h, square=True)
    return scipy.linalg.expm(1j * t * h) @ np.asarray(psi, dtype=complex)


def to_json(m) -> dict:
    m = as_cmatrix(m)
    return {
        "rows": int(m.shape[0]),
        "cols": int(m.shape[1]),
        "re": m.real.ravel().tolist(),
        "im": m.imag.ravel().tolist(),
    }


def from_json(d: dict) -> np.ndarray:
    rows, cols = int(d["rows"]), int(d["cols"])
    re = np.asarray(d["re"], dtype=float)
    im = np.asarray(d.get("im", np.zeros_like(re)), dtype=float)
    if re.size != rows * cols or im.size != rows * cols:
        raise ValueError("matrix JSON has inconsistent sizes")
    return (re + 1j * im).reshape(rows, cols)
