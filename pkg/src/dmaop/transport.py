"""Transport maps, optimality oracles and the convergence-study harness.

A solved instance pairs every source vertex x_j with a target point
eta_j; this module turns those pairs into displacement interpolations,
checks discrete optimality (exhaustive assignment for tiny instances,
sampled cyclical monotonicity otherwise), computes the two-sided cost
diagnostic and drives mesh-refinement studies.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np
from shapely.geometry import Point as ShapelyPoint
from shapely.geometry import Polygon as ShapelyPolygon

from .discretization import DecisionVector, penalty_arguments
from .errors import InputError
from .mesh import Mesh, triangulate_polygon
from .problem import instance_from_config
from .solver import SolverOptions, solve

EXHAUSTIVE_LIMIT = 9


@dataclass(frozen=True)
class DiscreteMap:
    """Vertex-to-target assignment x_j -> eta_j of a solved instance."""

    sources: np.ndarray  # (N, n)
    targets: np.ndarray  # (N, n)

    def __post_init__(self):
        s = np.asarray(self.sources, dtype=float)
        t = np.asarray(self.targets, dtype=float)
        if s.shape != t.shape or s.ndim != 2:
            raise InputError("source and target point arrays must match in shape")
        object.__setattr__(self, "sources", s)
        object.__setattr__(self, "targets", t)

    @property
    def pairs(self):
        return list(zip(self.sources, self.targets))

    def __len__(self):
        return len(self.sources)


def discrete_map(mesh: Mesh, dv: DecisionVector, target=None, tol: float = 1e-8):
    """Pair mesh vertices with their images; optionally verify membership."""
    if target is not None:
        worst = float(target.violation_many(dv.eta).max())
        if worst > tol:
            raise InputError(
                f"map image leaves the target domain by {worst:.3e} (> {tol:g})"
            )
    return DiscreteMap(sources=mesh.vertices.copy(), targets=dv.eta.copy())


def displacement(mesh: Mesh, dv: DecisionVector, t: float) -> np.ndarray:
    """Straight-line interpolation (1-t) x_j + t eta_j of every vertex."""
    if not 0.0 <= t <= 1.0:
        raise InputError(f"interpolation time {t} outside [0, 1]")
    if t == 0.0:
        return mesh.vertices.copy()
    if t == 1.0:
        return dv.eta.copy()
    return (1.0 - t) * mesh.vertices + t * dv.eta


def two_sided_cost(mesh: Mesh, dv: DecisionVector, f, g) -> float:
    """Volume-weighted absolute penalty sum V_i |-(det H_i)^{1/n} +
    (f(xbar_i)/g(etabar_i))^{1/n}|; penalizes expansion and compression
    alike, so it dominates the one-sided objective on identical data."""
    p = penalty_arguments(mesh, dv.eta, f, g, "dmaop")
    return float((mesh.volumes() * np.abs(p)).sum())


def assignment_oracle(dmap: DiscreteMap, tol: float = 1e-12) -> dict:
    """Exhaustively test whether the identity assignment is a quadratic-cost
    minimum over all permutations of the targets.

    Returns {"optimal", "best_cost", "identity_cost"}; ties count as
    optimal.  Instances above the exhaustive limit must use
    ``cyclical_check`` instead.
    """
    N = len(dmap)
    if N > EXHAUSTIVE_LIMIT:
        raise InputError(
            f"{N} pairs exceed the exhaustive limit ({EXHAUSTIVE_LIMIT}); "
            "use cyclical_check for sampled certification"
        )
    X, Y = dmap.sources, dmap.targets
    identity_cost = float(((X - Y) ** 2).sum())
    best_cost = identity_cost
    for sigma in itertools.permutations(range(N)):
        c = float(((X - Y[list(sigma)]) ** 2).sum())
        if c < best_cost:
            best_cost = c
    return {
        "optimal": identity_cost <= best_cost + tol,
        "best_cost": best_cost,
        "identity_cost": identity_cost,
    }


def cyclical_check(
    dmap: DiscreteMap, max_len: int = 5, trials: int = 10_000, seed: int = 0
) -> float:
    """Worst sampled cycle sum max over cycles of
    sum_k <eta_{j_k}, x_{j_{k+1}} - x_{j_k}>.

    A value <= tol certifies cyclical monotonicity on the sampled cycles
    (every cycle sum of a subgradient set is nonpositive).
    """
    if max_len < 2:
        raise InputError("max_len must be >= 2")
    N = len(dmap)
    if N < 2:
        return 0.0
    X, Y = dmap.sources, dmap.targets
    rng = np.random.default_rng(seed)
    top = min(max_len, N)
    per_len = max(1, trials // (top - 1))
    worst = 0.0
    for m in range(2, top + 1):
        idx = np.argsort(rng.random((per_len, N)), axis=1)[:, :m]
        x = X[idx]  # (trials, m, n)
        e = Y[idx]
        sums = (e * (np.roll(x, -1, axis=1) - x)).sum(axis=(1, 2))
        worst = max(worst, float(sums.max()))
    return worst


# ---------------------------------------------------------------------------
# analytic reference problems


@dataclass(frozen=True)
class QuadraticReference:
    """Closed-form convex potential phi(x) = x'Mx/2 + <v, x> with map
    x -> Mx + v; covers the identity, anisotropic scaling and translation
    families used as convergence references."""

    matrix: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=float)
        v = np.asarray(self.shift, dtype=float)
        eigs = np.linalg.eigvalsh(0.5 * (M + M.T))
        if eigs.min() <= 0:
            raise InputError("reference matrix must be symmetric positive definite")
        object.__setattr__(self, "matrix", 0.5 * (M + M.T))
        object.__setattr__(self, "shift", v)

    def potential(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return 0.5 * np.einsum("ja,ab,jb->j", pts, self.matrix, pts) + pts @ self.shift

    def map(self, pts: np.ndarray) -> np.ndarray:
        return np.atleast_2d(pts) @ self.matrix.T + self.shift

    def value(self, x) -> float:
        return float(self.potential(np.asarray(x, dtype=float))[0])

    def gradient(self, x) -> np.ndarray:
        return self.map(np.asarray(x, dtype=float))[0]

    def density_ratio(self) -> float:
        """f/g of a compatible uniform pair: det of the map's Jacobian."""
        return float(np.linalg.det(self.matrix))


def identity_reference(dim: int = 2) -> QuadraticReference:
    return QuadraticReference(matrix=np.eye(dim), shift=np.zeros(dim))


def scaling_reference(a: float, b: float) -> QuadraticReference:
    return QuadraticReference(matrix=np.diag([a, b]), shift=np.zeros(2))


def translation_reference(v) -> QuadraticReference:
    v = np.asarray(v, dtype=float)
    return QuadraticReference(matrix=np.eye(len(v)), shift=v)


# ---------------------------------------------------------------------------
# convergence study


@dataclass(frozen=True)
class StudyRow:
    """One mesh level of a refinement study."""

    N: int
    h: float
    cost: float
    two_sided: float
    sup_err: float | None
    runtime_s: float

    def __post_init__(self):
        if min(self.N, self.h, self.cost, self.two_sided, self.runtime_s) < 0:
            raise InputError("study row fields must be nonnegative")
        if self.sup_err is not None and self.sup_err < 0:
            raise InputError("study row fields must be nonnegative")


@dataclass(frozen=True)
class StudyResult:
    rows: tuple
    slope: float | None  # log-log slope of cost vs N; None if cost ~ 0
    complete: bool


def _evaluation_grid(polygon: np.ndarray, k: int = 50) -> np.ndarray:
    """Fixed k x k grid restricted to the interior of the source domain."""
    shape = ShapelyPolygon(polygon)
    xmin, ymin, xmax, ymax = shape.bounds
    xs = np.linspace(xmin, xmax, k)
    ys = np.linspace(ymin, ymax, k)
    pts = np.stack(np.meshgrid(xs, ys), axis=-1).reshape(-1, 2)
    keep = [shape.covers(ShapelyPoint(p)) for p in pts]
    return pts[np.asarray(keep)]


def sup_potential_error(phi, reference: QuadraticReference, grid: np.ndarray) -> float:
    """Sup-norm gap between two potentials, both shifted to vanish at 0."""
    ours = phi.eval_many(grid) - phi.eval_many(np.zeros((1, grid.shape[1])))[0]
    zero = reference.potential(np.zeros((1, grid.shape[1])))[0]
    theirs = reference.potential(grid) - zero
    return float(np.abs(ours - theirs).max())


def convergence_study(
    config: dict,
    h_list,
    reference: QuadraticReference | None = None,
    solver_options: SolverOptions | None = None,
) -> StudyResult:
    """Solve the configured problem on a sequence of refined meshes.

    Records N, cost, two-sided cost, optional sup-norm potential error
    against an analytic reference, and wall time per level, plus the
    least-squares log-log slope of cost against N (None when some cost is
    numerically zero).  A solve failure stops the study; collected rows
    are returned with ``complete=False``.
    """
    from .potential import build_potential

    h_list = [float(h) for h in h_list]
    if len(h_list) < 3 or any(b >= a for a, b in zip(h_list, h_list[1:])):
        raise InputError("h_list must be strictly decreasing with >= 3 entries")
    if "domain" not in config or "polygon" not in config.get("domain", {}):
        raise InputError("config is missing required field 'domain.polygon'")
    polygon = np.asarray(config["domain"]["polygon"], dtype=float)
    grid = _evaluation_grid(polygon) if reference is not None else None

    rows = []
    complete = True
    for h in h_list:
        t0 = time.perf_counter()
        try:
            mesh = triangulate_polygon(polygon, h)
            instance = instance_from_config(config, mesh)
            opts = solver_options or SolverOptions(variant=instance.variant)
            sol, report = solve(instance, opts)
        except Exception:
            complete = False
            break
        sup_err = None
        if reference is not None:
            phi = build_potential(mesh, sol.dv)
            sup_err = sup_potential_error(phi, reference, grid)
        rows.append(
            StudyRow(
                N=mesh.num_vertices,
                h=h,
                cost=max(sol.cost, 0.0),
                two_sided=two_sided_cost(mesh, sol.dv, instance.f, instance.g),
                sup_err=sup_err,
                runtime_s=time.perf_counter() - t0,
            )
        )
    slope = fit_cost_slope(rows)
    return StudyResult(rows=tuple(rows), slope=slope, complete=complete)


def fit_cost_slope(rows, zero_tol: float = 1e-7) -> float | None:
    """Least-squares slope of log cost against log N; None when undefined
    (fewer than two rows, or a cost at numerical zero — below the solver's
    default cost tolerance)."""
    if len(rows) < 2 or any(r.cost <= zero_tol for r in rows):
        return None
    ln = np.log([r.N for r in rows])
    lc = np.log([r.cost for r in rows])
    return float(np.polyfit(ln, lc, 1)[0])
