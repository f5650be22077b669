"""Finite surrogate models ``L = L0 + delta * I`` with embedded eigenvalue clusters."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from reskit.errors import A1Violated, NotSelfAdjoint
from reskit.linop import OrthProjection, as_cmatrix, from_json, is_hermitian, to_json


@dataclass(frozen=True, eq=False)
class EigenvalueCluster:
    """Eigenvalue ``e`` of L0 with multiplicity ``rank(projection)``."""

    e: float
    projection: OrthProjection

    @property
    def multiplicity(self) -> int:
        return self.projection.rank

    @classmethod
    def on_indices(cls, e: float, indices, n: int) -> "EigenvalueCluster":
        return cls(float(e), OrthProjection.coordinate(list(indices), n))


@dataclass(frozen=True, eq=False)
class Model:
    """Self-adjoint surrogate generator.

    Parameters
    ----------
    l0 : (n, n) array
        Free generator; every cluster range must be an eigenspace of it.
    coupling : (n, n) array
        The interaction I (self-adjoint).
    delta : float
        Coupling constant.
    clusters : tuple of EigenvalueCluster
    spacing : float
        Level spacing of the quasi-continuum. Sets the smallest admissible
        imaginary shift when limits onto the real axis are taken.
    meta : dict
        Free-form JSON-serialisable description (builder name, parameters).
    """

    l0: np.ndarray
    coupling: np.ndarray
    delta: float
    clusters: tuple
    spacing: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        l0 = as_cmatrix(self.l0, square=True)
        i = as_cmatrix(self.coupling, square=True)
        if l0.shape != i.shape:
            raise ValueError("L0 and I must have the same shape")
        if not (is_hermitian(l0) and is_hermitian(i)):
            raise NotSelfAdjoint("L0 and I must be self-adjoint")
        object.__setattr__(self, "l0", l0)
        object.__setattr__(self, "coupling", i)
        object.__setattr__(self, "clusters", tuple(self.clusters))
        for c in self.clusters:
            v = c.projection.basis
            if np.abs(l0 @ v - c.e * v).max(initial=0.0) > 1e-10 * max(1.0, np.abs(l0).max()):
                raise ValueError(f"cluster range is not an eigenspace of L0 at e={c.e}")

    @property
    def n(self) -> int:
        return self.l0.shape[0]

    @cached_property
    def generator(self) -> np.ndarray:
        return self.l0 + self.delta * self.coupling

    def with_delta(self, delta: float) -> "Model":
        return replace(self, delta=float(delta))

    def a1_residual(self, cluster: EigenvalueCluster) -> float:
        v = cluster.projection.basis
        return float(np.abs(v.conj().T @ self.coupling @ v).max(initial=0.0))

    def check_a1(self, tol: float = 1e-12) -> None:
        scale = max(1.0, np.abs(self.coupling).max(initial=0.0))
        for c in self.clusters:
            res = self.a1_residual(c)
            if res > tol * scale:
                raise A1Violated(f"PₑIPₑ ≠ 0 at e={c.e:g} (max entry {res:.3e})")

    def to_json(self) -> dict:
        return {
            "L0": to_json(self.l0),
            "I": to_json(self.coupling),
            "delta": self.delta,
            "spacing": self.spacing,
            "clusters": [{"e": c.e, "basis": to_json(c.projection.basis)} for c in self.clusters],
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Model":
        l0 = from_json(d["L0"])
        n = l0.shape[0]
        clusters = []
        for c in d["clusters"]:
            if "indices" in c:
                clusters.append(EigenvalueCluster.on_indices(c["e"], c["indices"], n))
            else:
                clusters.append(EigenvalueCluster(float(c["e"]), OrthProjection(from_json(c["basis"]), n)))
        return cls(l0, from_json(d["I"]), float(d.get("delta", 0.0)), tuple(clusters),
                   float(d.get("spacing", 1e-3)), dict(d.get("meta", {})))
