"""Discrete Monge-Ampere machinery: per-simplex Jacobians, penalties,
objective and constraint residuals.

The per-simplex Jacobian is the symmetrized matrix sym(A_i^{-1} B_i) built
from the edge matrix of the simplex and the matching differences of the
vertex subgradients.  The objective is the volume-weighted sum of one-sided
penalties; two variants are supported:

* ``ldmaop`` -- max{0, -log det H_i - log g(eta_bar) + log f(x_bar)}
* ``dmaop``  -- max{0, -(det H_i)^(1/n) + (f(x_bar)/g(eta_bar))^(1/n)}

with x_bar the simplex barycenter and eta_bar the vertex average of the
subgradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BarrierDomainError, DegenerateSimplexError
from .mesh import Mesh

PSD_CLAMP = 1e-10

VARIANTS = ("dmaop", "ldmaop")


@dataclass(frozen=True)
class DecisionVector:
    """Potential values psi (N,) and subgradients eta (N, n) at vertices."""

    psi: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=float)
        eta = np.asarray(self.eta, dtype=float)
        if psi.ndim != 1 or eta.ndim != 2 or len(psi) != len(eta):
            raise ValueError("psi must be (N,), eta (N, n)")
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "eta", eta)


@dataclass(frozen=True)
class ConstraintResiduals:
    """Worst-case constraint violations of a decision vector.

    hyperplane_max <= 0 and target_max = 0 mean feasible; min_eig_H is the
    smallest eigenvalue over all per-simplex Jacobians.
    """

    hyperplane_max: float
    target_max: float
    min_eig_H: float

    def within(self, tol: float) -> bool:
        return (
            self.hyperplane_max <= tol
            and self.target_max <= tol
            and self.min_eig_H >= -tol
        )


def discrete_jacobians(mesh: Mesh, eta: np.ndarray) -> np.ndarray:
    """All per-simplex Jacobians sym(A_i^{-1} B_i), stacked (M, n, n)."""
    eta = np.asarray(eta, dtype=float)
    Ainv = mesh.edge_inverses()
    u = eta[mesh.simplices]  # (M, n+1, n)
    B = u[:, 1:, :] - u[:, :1, :]
    J = Ainv @ B
    return 0.5 * (J + np.transpose(J, (0, 2, 1)))


def discrete_jacobian(mesh: Mesh, i: int, eta: np.ndarray) -> np.ndarray:
    """Per-simplex Jacobian of simplex i."""
    A = mesh.edge_matrices()[i]
    if abs(np.linalg.det(A)) < 1e-14:
        raise DegenerateSimplexError(i, "cannot form discrete Jacobian")
    eta = np.asarray(eta, dtype=float)
    u = eta[mesh.simplices[i]]
    B = u[1:] - u[0]
    J = np.linalg.solve(A, B)
    return 0.5 * (J + J.T)


def _clamped_dets(H: np.ndarray, context: str):
    """Determinants from eigenvalues with the PSD clamp of the DMAOP.

    Eigenvalues in (-PSD_CLAMP, 0) are floating-point noise and are treated
    as 0; materially negative eigenvalues are a domain error.
    """
    eigs = np.linalg.eigvalsh(H)
    bad = np.flatnonzero(eigs[:, 0] < -PSD_CLAMP)
    if bad.size:
        raise BarrierDomainError(
            int(bad[0]), f"{context}: H not PSD (min eig {eigs[bad[0], 0]:.3e})"
        )
    return np.clip(eigs, 0.0, None).prod(axis=1)


def penalty_arguments(mesh: Mesh, eta: np.ndarray, f, g, variant: str) -> np.ndarray:
    """Signed per-simplex penalty arguments p_i (before the max with 0)."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    n = mesh.dim
    H = discrete_jacobians(mesh, eta)
    x_bar = mesh.barycenters()
    eta_bar = np.asarray(eta, dtype=float)[mesh.simplices].mean(axis=1)
    f_vals = f.eval_many(x_bar)
    g_vals = g.eval_many(eta_bar)
    if variant == "ldmaop":
        det = np.linalg.det(H)
        bad = np.flatnonzero(det <= 0)
        if bad.size:
            raise BarrierDomainError(
                int(bad[0]), f"det H = {det[bad[0]]:.3e} <= 0 in log penalty"
            )
        return -np.log(det) - np.log(g_vals) + np.log(f_vals)
    det = _clamped_dets(H, "dmaop penalty")
    return -(det ** (1.0 / n)) + (f_vals / g_vals) ** (1.0 / n)


def penalty(mesh: Mesh, i: int, eta: np.ndarray, f, g, variant: str) -> float:
    """One-sided penalty max{0, p_i} of simplex i."""
    p = penalty_arguments(mesh, eta, f, g, variant)
    return float(max(0.0, p[i]))


def objective(mesh: Mesh, eta: np.ndarray, f, g, variant: str) -> float:
    """Volume-weighted objective sum_i V_i max{0, p_i}.

    Summed with pairwise (tree) reduction so the value is independent of
    any parallel chunking of the simplices.
    """
    p = penalty_arguments(mesh, eta, f, g, variant)
    return float(np.sum(mesh.volumes() * np.maximum(0.0, p)))


def hyperplane_matrix(mesh: Mesh, dv: DecisionVector) -> np.ndarray:
    """All N^2 hyperplane residuals: entry (i, j) is
    psi_i + <eta_i, x_j - x_i> - psi_j (<= 0 when feasible; diagonal 0)."""
    X = mesh.vertices
    psi, eta = dv.psi, dv.eta
    E = eta @ X.T  # (i, j) -> <eta_i, x_j>
    d = (eta * X).sum(axis=1)
    return psi[:, None] + E - d[:, None] - psi[None, :]


def residuals(mesh: Mesh, dv: DecisionVector, target=None) -> ConstraintResiduals:
    """Constraint residuals of a decision vector against the full
    N^2 hyperplane set, the target membership and the PSD constraints.

    With ``target=None`` the membership residual is reported as 0."""
    S = hyperplane_matrix(mesh, dv)
    hyperplane_max = float(S.max())
    target_max = 0.0 if target is None else float(target.violation_many(dv.eta).max())
    H = discrete_jacobians(mesh, dv.eta)
    min_eig = float(np.linalg.eigvalsh(H)[:, 0].min())
    return ConstraintResiduals(hyperplane_max, target_max, min_eig)


def restriction_cost(mesh: Mesh, phi_exact, f, g, variant: str) -> float:
    """Objective evaluated at the restriction of an exact potential.

    ``phi_exact`` must provide ``value(x)`` and ``gradient(x)`` on the mesh
    vertices, with gradients inside the closed target.
    """
    X = mesh.vertices
    eta = np.asarray([phi_exact.gradient(x) for x in X], dtype=float)
    return objective(mesh, eta, f, g, variant)


def decision_from_potential(mesh: Mesh, phi_exact) -> DecisionVector:
    """Decision vector {phi(x_j), grad phi(x_j)} from an exact potential."""
    X = mesh.vertices
    psi = np.asarray([phi_exact.value(x) for x in X], dtype=float)
    eta = np.asarray([phi_exact.gradient(x) for x in X], dtype=float)
    return DecisionVector(psi=psi, eta=eta)


def worst_target_vertex(target, eta: np.ndarray) -> tuple[int, float]:
    """Vertex index with the largest target violation and its value."""
    v = target.violation_many(np.asarray(eta, dtype=float))
    j = int(np.argmax(v))
    return j, float(v[j])
