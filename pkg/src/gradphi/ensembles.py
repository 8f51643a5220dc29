"""Energies and forces of the two Gibbs families.

``DirichletEnsemble`` is the measure on zero-boundary fields with weight
``exp(-sum_e V(p(e) + grad phi(e)))``; its state vector holds the values at the
interior vertices only.  ``NeumannEnsemble`` is the measure on mean-zero fields
with weight ``exp(-sum_e (V(grad psi(e)) - q(e) grad psi(e)))``; its state
vector holds all vertex values.  The constant field of a vector ``p`` takes the
value ``p_i`` on a bond oriented along ``+e_i``.

All array methods accept a leading batch axis, so a ``(C, N)`` array of ``C``
chain states returns ``C`` energies or a ``(C, N)`` array of forces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence, Union

import numpy as np
import scipy.sparse as sp

from .lattice import Field, Region
from .potentials import Potential, Quadratic

__all__ = [
    "DirichletEnsemble",
    "NeumannEnsemble",
    "EnsembleError",
    "energy_dirichlet",
    "energy_neumann",
    "force",
]

PotentialLike = Union[Potential, Sequence[Potential]]


class EnsembleError(ValueError):
    """Inadmissible state for an ensemble."""


def _per_axis(region: Region, potential: PotentialLike, g: np.ndarray, method: str) -> np.ndarray:
    if isinstance(potential, Potential):
        return getattr(potential, method)(g)
    out = np.empty_like(g)
    for axis, sl in enumerate(region.axis_slices):
        out[..., sl] = getattr(potential[axis], method)(g[..., sl])
    return out


def _check_potential(region: Region, potential: PotentialLike) -> PotentialLike:
    if isinstance(potential, Potential):
        return potential
    potential = tuple(potential)
    if len(potential) != region.d or not all(isinstance(v, Potential) for v in potential):
        raise EnsembleError(f"need one potential per axis ({region.d})")
    return potential


def _tilt_vector(region: Region, v: Sequence[float]) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape != (region.d,):
        raise EnsembleError(f"tilt must have {region.d} components")
    return v


class _Ensemble:
    region: Region
    potential: PotentialLike

    @property
    def d(self) -> int:
        return self.region.d

    @property
    def volume(self) -> int:
        return self.region.size

    @property
    def is_quadratic(self) -> bool:
        pots = (self.potential,) if isinstance(self.potential, Potential) else self.potential
        return all(isinstance(v, Quadratic) for v in pots)

    @property
    def lam(self) -> float:
        pots = (self.potential,) if isinstance(self.potential, Potential) else self.potential
        return min(v.lam for v in pots)

    def bond_values(self, vertex_values: np.ndarray) -> np.ndarray:
        """Gradients of full vertex fields, one value per bond."""
        return self.region.grad(vertex_values)

    def _potential_terms(self, g: np.ndarray) -> np.ndarray:
        return _per_axis(self.region, self.potential, g, "eval")

    def _potential_derivs(self, g: np.ndarray) -> np.ndarray:
        return _per_axis(self.region, self.potential, g, "deriv")

    def with_potential(self, potential: PotentialLike):
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class DirichletEnsemble(_Ensemble):
    """Zero-boundary fields on ``region`` with constant tilt ``p``."""

    region: Region
    p: np.ndarray
    potential: PotentialLike

    def __post_init__(self):
        object.__setattr__(self, "p", _tilt_vector(self.region, self.p))
        object.__setattr__(self, "potential", _check_potential(self.region, self.potential))
        if len(self.region.interior_indices) == 0:
            raise EnsembleError("region has no interior vertex")

    @property
    def free(self) -> np.ndarray:
        return self.region.interior_indices

    @property
    def dim(self) -> int:
        return len(self.free)

    @cached_property
    def tilt_on_bonds(self) -> np.ndarray:
        return self.p[self.region.bond_axes]

    @cached_property
    def reduced_incidence(self) -> sp.csr_matrix:
        """Incidence restricted to interior columns: ``grad(embed(u)) = D_I u``."""
        return self.region.incidence[:, self.free].tocsr()

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        """Dirichlet Laplacian ``A`` with ``u^T A u = sum_e |grad embed(u)|^2``."""
        D = self.reduced_incidence
        return (D.T @ D).tocsr()

    @cached_property
    def _reduced_incidence_t(self) -> sp.csr_matrix:
        return self.reduced_incidence.T.tocsr()

    def embed(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        full = np.zeros(u.shape[:-1] + (self.region.size,))
        full[..., self.free] = u
        return full

    def restrict(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if np.any(values[..., self.region.boundary_mask] != 0):
            raise EnsembleError("field does not vanish on the boundary")
        return values[..., self.free]

    def gradients(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return (self.reduced_incidence @ u.reshape(-1, self.dim).T).T.reshape(u.shape[:-1] + (-1,))

    def energies(self, u: np.ndarray) -> np.ndarray:
        g = self.gradients(u) + self.tilt_on_bonds
        return np.sum(self._potential_terms(g), axis=-1)

    def energy(self, u: np.ndarray) -> float:
        g = self.gradients(np.asarray(u, dtype=float).reshape(-1)) + self.tilt_on_bonds
        return math.fsum(self._potential_terms(g))

    def forces(self, u: np.ndarray) -> np.ndarray:
        """Negative energy gradient with respect to the interior values."""
        u = np.asarray(u, dtype=float)
        w = self._potential_derivs(self.gradients(u) + self.tilt_on_bonds)
        out = -(self._reduced_incidence_t @ w.reshape(-1, self.region.n_bonds).T).T
        return np.asarray(out).reshape(u.shape)

    def energies_and_forces(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        g = self.gradients(u) + self.tilt_on_bonds
        e = np.sum(self._potential_terms(g), axis=-1)
        w = self._potential_derivs(g)
        f = -(self._reduced_incidence_t @ w.reshape(-1, self.region.n_bonds).T).T
        return e, np.asarray(f).reshape(np.shape(u))

    def tilted_gradients(self, u: np.ndarray) -> np.ndarray:
        """``p(e) + grad phi(e)`` on every bond."""
        return self.gradients(u) + self.tilt_on_bonds

    def with_potential(self, potential: PotentialLike) -> "DirichletEnsemble":
        return DirichletEnsemble(self.region, self.p, potential)

    def with_tilt(self, p) -> "DirichletEnsemble":
        return DirichletEnsemble(self.region, p, self.potential)


@dataclass(frozen=True, eq=False)
class NeumannEnsemble(_Ensemble):
    """Mean-zero fields on ``region`` with linear tilt ``q``."""

    region: Region
    q: np.ndarray
    potential: PotentialLike

    def __post_init__(self):
        object.__setattr__(self, "q", _tilt_vector(self.region, self.q))
        object.__setattr__(self, "potential", _check_potential(self.region, self.potential))

    @property
    def dim(self) -> int:
        return self.region.size

    @cached_property
    def tilt_on_bonds(self) -> np.ndarray:
        return self.q[self.region.bond_axes]

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        """Neumann (graph) Laplacian ``L = D^T D``."""
        D = self.region.incidence
        return (D.T @ D).tocsr()

    @cached_property
    def tilt_functional(self) -> np.ndarray:
        """Vertex vector ``b`` with ``b . psi = sum_e q(e) grad psi(e)``."""
        return np.asarray(self.region.incidence.T @ self.tilt_on_bonds).ravel()

    def embed(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u, dtype=float)

    @staticmethod
    def project(u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return u - u.mean(axis=-1, keepdims=True)

    def check_mean_zero(self, u: np.ndarray, tol: float = 1e-9):
        u = np.asarray(u, dtype=float)
        if np.any(np.abs(u.mean(axis=-1)) > tol * np.maximum(1.0, np.abs(u).mean(axis=-1))):
            raise EnsembleError("state is not mean-zero")

    def gradients(self, u: np.ndarray) -> np.ndarray:
        return self.region.grad(u)

    def energies(self, u: np.ndarray) -> np.ndarray:
        g = self.gradients(u)
        return np.sum(self._potential_terms(g) - self.tilt_on_bonds * g, axis=-1)

    def energy(self, u: np.ndarray) -> float:
        u = np.asarray(u, dtype=float).reshape(-1)
        self.check_mean_zero(u)
        g = self.gradients(u)
        return math.fsum(np.concatenate([self._potential_terms(g), -self.tilt_on_bonds * g]))

    def forces(self, u: np.ndarray) -> np.ndarray:
        """Negative energy gradient, projected onto the mean-zero subspace."""
        g = self.gradients(u)
        w = self._potential_derivs(g) - self.tilt_on_bonds
        return self.project(self.region.div(w))

    def energies_and_forces(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        g = self.gradients(u)
        e = np.sum(self._potential_terms(g) - self.tilt_on_bonds * g, axis=-1)
        w = self._potential_derivs(g) - self.tilt_on_bonds
        return e, self.project(self.region.div(w))

    def with_potential(self, potential: PotentialLike) -> "NeumannEnsemble":
        return NeumannEnsemble(self.region, self.q, potential)

    def with_tilt(self, q) -> "NeumannEnsemble":
        return NeumannEnsemble(self.region, q, self.potential)


def energy_dirichlet(ens: DirichletEnsemble, phi: Field | np.ndarray) -> float:
    """``sum_e V(p(e) + grad phi(e))`` for a zero-boundary field ``phi``."""
    values = phi.values if isinstance(phi, Field) else np.asarray(phi, dtype=float)
    if values.shape[-1] == ens.region.size:
        values = ens.restrict(values)
    return ens.energy(values)


def energy_neumann(ens: NeumannEnsemble, psi: Field | np.ndarray) -> float:
    """``sum_e (V(grad psi(e)) - q(e) grad psi(e))`` for a mean-zero field ``psi``."""
    values = psi.values if isinstance(psi, Field) else np.asarray(psi, dtype=float)
    return ens.energy(values)


def force(ens: DirichletEnsemble | NeumannEnsemble, state: Field | np.ndarray) -> Field:
    """Drift of the Langevin dynamics as a field on the ensemble's region."""
    values = state.values if isinstance(state, Field) else np.asarray(state, dtype=float)
    if isinstance(ens, DirichletEnsemble):
        if values.shape[-1] == ens.region.size:
            values = ens.restrict(values)
        return Field(ens.region, ens.embed(ens.forces(values)))
    ens.check_mean_zero(values)
    return Field(ens.region, ens.forces(values))
