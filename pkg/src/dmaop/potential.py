"""Piecewise-affine convex potential reconstruction and its derivative
fields.

The potential is the max of the N affine pieces a_j(x) = psi_j +
<eta_j, x - x_j>, shifted by an offset so it vanishes at the origin.  The
gradient field interpolates the vertex subgradients barycentrically over
each simplex; its symmetrized per-simplex Jacobian reproduces the discrete
Jacobians of the objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discretization import DecisionVector, discrete_jacobians
from .errors import InputError
from .mesh import Mesh, barycentric_coordinates, locate

ACTIVE_SET_TOL = 1e-10


@dataclass(frozen=True)
class OptimizationPotential:
    """Convex potential b + max_j [psi_j + <eta_j, x - x_j>], with b chosen
    so the value at the origin is zero.  Defined on all of R^n."""

    anchors: np.ndarray  # x_j, (N, n)
    values: np.ndarray  # psi_j, (N,)
    slopes: np.ndarray  # eta_j, (N, n)
    b_offset: float

    def piece_values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.values + (self.slopes * (x - self.anchors)).sum(axis=1)

    def __call__(self, x) -> float:
        return self.b_offset + float(self.piece_values(x).max())

    def eval_many(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        base = self.values - (self.slopes * self.anchors).sum(axis=1)
        return self.b_offset + (base[None, :] + pts @ self.slopes.T).max(axis=1)

    def subgradient(self, x):
        """Slope of the lowest-index maximizing piece and the active set.

        The active set contains every piece within ACTIVE_SET_TOL of the
        max; the convex hull of their slopes is the full subdifferential.
        """
        vals = self.piece_values(x)
        top = vals.max()
        active = np.flatnonzero(vals >= top - ACTIVE_SET_TOL)
        return self.slopes[active[0]].copy(), active


def build_potential(mesh: Mesh, dv: DecisionVector) -> OptimizationPotential:
    """Potential from a decision vector, normalized to vanish at 0."""
    origin = np.zeros(mesh.dim)
    base = dv.psi + (dv.eta * (origin - mesh.vertices)).sum(axis=1)
    return OptimizationPotential(
        anchors=mesh.vertices.copy(),
        values=dv.psi.copy(),
        slopes=dv.eta.copy(),
        b_offset=-float(base.max()),
    )


@dataclass(frozen=True)
class GradientField:
    """Per-simplex affine interpolation of the vertex subgradients."""

    mesh: Mesh
    eta: np.ndarray
    jacobians: np.ndarray  # J_i = A_i^{-1} B_i, (M, n, n)

    def __call__(self, x, simplex: int | None = None) -> np.ndarray:
        i = locate(self.mesh, x) if simplex is None else simplex
        if i is None:
            raise InputError("point is not covered by the triangulation")
        lam = barycentric_coordinates(self.mesh, i, x)
        return lam @ self.eta[self.mesh.simplices[i]]


@dataclass(frozen=True)
class HessianField:
    """Locally constant symmetrized Jacobian per simplex."""

    mesh: Mesh
    matrices: np.ndarray  # (M, n, n)

    def __call__(self, x, simplex: int | None = None) -> np.ndarray:
        i = locate(self.mesh, x) if simplex is None else simplex
        if i is None:
            raise InputError("point is not covered by the triangulation")
        return self.matrices[i]


def gradient_field(mesh: Mesh, dv: DecisionVector) -> GradientField:
    Ainv = mesh.edge_inverses()
    u = dv.eta[mesh.simplices]
    B = u[:, 1:, :] - u[:, :1, :]
    return GradientField(mesh=mesh, eta=dv.eta.copy(), jacobians=Ainv @ B)


def hessian_field(mesh: Mesh, dv: DecisionVector) -> HessianField:
    return HessianField(mesh=mesh, matrices=discrete_jacobians(mesh, dv.eta))
