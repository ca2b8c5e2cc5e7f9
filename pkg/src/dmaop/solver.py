"""Interior-point solver for the discrete Monge-Ampere program.

The nonsmooth objective sum_i V_i max{0, p_i(eta)} is lifted to an epigraph
form with one slack per simplex (minimize sum_i V_i t_i subject to
t_i >= p_i(eta) and a small lower shift on t_i), and the whole constraint
set (full N^2 hyperplane constraints, target membership, positive-definite
discrete Jacobians) is handled by a primal log barrier with damped Newton
steps and Armijo backtracking.  The slack block of the Newton system is
diagonal and is eliminated by a Schur complement, so each step solves a
dense system in the psi/eta variables only.

A projected-subgradient fallback with feasibility repair handles the rare
case where Newton stalls (and non-log-concave target densities, for which
no optimality claim is made).
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .discretization import (
    ConstraintResiduals,
    DecisionVector,
    hyperplane_matrix,
    objective,
    penalty_arguments,
    residuals,
)
from .errors import InputError
from .mesh import mesh_from_dict, mesh_to_dict, quality
from .problem import ProblemInstance

log = logging.getLogger(__name__)

ARMIJO_SLOPE = 0.01
GAUGE_WEIGHT = 1.0
NEWTON_DECREMENT_TOL = 1e-7
# a barrier stage that exhausts its Newton budget while the decrement is
# still above this value is treated as stalled (degenerate optimal face);
# the subgradient fallback then polishes the incumbent
STALL_DECREMENT = 1e-4


@dataclass(frozen=True)
class SolverOptions:
    """Knobs of the barrier solver; all tolerances are absolute."""

    variant: str = "dmaop"
    max_outer: int = 30
    max_newton: int = 50
    barrier_mu: float = 5.0
    tol_cost: float = 1e-7
    tol_feas: float = 1e-8
    fallback: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.tol_cost <= 0 or self.tol_feas <= 0:
            raise InputError("tolerances must be > 0")
        if self.barrier_mu <= 1:
            raise InputError("barrier_mu must be > 1")


@dataclass(frozen=True)
class Solution:
    dv: DecisionVector
    b_offset: float
    cost: float
    variant: str


@dataclass
class SolveReport:
    cost: float
    initial_cost: float
    residuals: ConstraintResiduals
    outer_iters: int = 0
    newton_iters: int = 0
    subgrad_iters: int = 0
    wall_time_s: float = 0.0
    converged: bool = False
    reason: str = ""
    trace: list = field(default_factory=list)


def feasible_init(instance: ProblemInstance) -> DecisionVector:
    """Strictly feasible start from a strongly convex quadratic minorant.

    With y0 an interior target point of inradius r and
    beta = r / (2 max_j |x_j|), the quadratic
    <y0, x> + (beta/2)|x|^2 yields psi_j and eta_j = y0 + beta x_j that
    satisfy every hyperplane constraint strictly, keep all eta_j strictly
    inside the target, and make every discrete Jacobian equal to beta I.
    """
    X = instance.mesh.vertices
    y0 = instance.target.interior_point()
    r = instance.target.inradius()
    if r <= 0:
        raise InputError("target domain has no interior (inradius 0)")
    xmax = float(np.linalg.norm(X, axis=1).max())
    if xmax == 0:
        raise InputError("mesh vertices are all at the origin")
    beta = r / (2.0 * xmax)
    psi = X @ y0 + 0.5 * beta * (X**2).sum(axis=1)
    eta = y0[None, :] + beta * X
    return DecisionVector(psi=psi, eta=eta)


class EpigraphProgram:
    """Smooth barrier description of the epigraph reformulation.

    Catalogues the slack variables, the constraint counts and the analytic
    gradients/Hessians of every barrier term; consumed by the Newton loop
    and directly testable against finite differences.
    """

    def __init__(
        self,
        instance: ProblemInstance,
        tol_cost: float = 1e-7,
        hyperplane_mask: np.ndarray | None = None,
    ):
        mesh = instance.mesh
        self.instance = instance
        self.variant = instance.variant
        self.n = mesh.dim
        self.N = mesh.num_vertices
        self.M = mesh.num_simplices
        self.K = (self.n + 1) * self.n  # local eta dof per simplex
        self.eps_t = tol_cost

        self.X = mesh.vertices
        self.tri = mesh.simplices
        self.V = mesh.volumes()
        Ainv = mesh.edge_inverses()
        # coefficient of B-row r in d(eta at slot j): -1 for slot 0, e_r else
        R = np.vstack([-np.ones(self.n), np.eye(self.n)])  # (n+1, n)
        self.w = np.einsum("mab,jb->mja", Ainv, R)  # (M, n+1, n)

        self.log_f = np.log(instance.f.eval_many(mesh.barycenters()))
        self.f_vals = instance.f.eval_many(mesh.barycenters())
        self.D = self.X[None, :, :] - self.X[:, None, :]  # x_j - x_i

        # global z-indices of each simplex's eta dof, and of its slack
        base = self.N + self.tri * self.n  # (M, n+1)
        self.eta_idx = (
            base[:, :, None] + np.arange(self.n)[None, None, :]
        ).reshape(self.M, self.K)
        self.dim_z = self.N * (1 + self.n)
        self.dim = self.dim_z + self.M

        self.n_slack = self.M
        self.n_epigraph = self.M
        self.n_hyperplane = self.N * self.N - self.N
        if instance.target.kind == "disc":
            self.n_target = self.N
        else:
            self.n_target = self.N * len(instance.target.halfspaces[0])
        self.n_constraints = (
            self.n_hyperplane + self.n_epigraph + self.n_slack + self.n_target
        )

        # barrier working set: all N^2 hyperplane constraints are part of the
        # program and are verified post-solve, but only a local subset carries
        # a barrier term (distant pairs are far from active for monotone
        # maps); violated pairs found afterwards are added and re-solved
        if hyperplane_mask is not None:
            self.hp_mask = hyperplane_mask.copy()
            np.fill_diagonal(self.hp_mask, False)
        else:
            self.hp_mask = _default_hyperplane_mask(mesh)
        self.n_active_hyperplane = int(self.hp_mask.sum())
        self.gap_constraints = (
            self.n_active_hyperplane + self.n_epigraph + self.n_slack + self.n_target
        )

    # -- packing ----------------------------------------------------------

    def pack(self, dv: DecisionVector, t: np.ndarray) -> np.ndarray:
        return np.concatenate([dv.psi, dv.eta.ravel(), t])

    def unpack(self, z: np.ndarray):
        N, n = self.N, self.n
        psi = z[:N]
        eta = z[N : N + N * n].reshape(N, n)
        t = z[N + N * n :]
        return psi, eta, t

    # -- penalty terms -----------------------------------------------------

    def penalty_terms(self, eta: np.ndarray, want_hess: bool = True):
        """Signed penalty arguments p_i with analytic derivatives.

        Returns (p, grad, hess, ok): grad is (M, K) over the simplex-local
        eta dof, hess is (M, K, K) or None, ok is False when some discrete
        Jacobian is not strictly positive definite.
        """
        n, M, K = self.n, self.M, self.K
        u = eta[self.tri]  # (M, n+1, n)
        B = u[:, 1:, :] - u[:, :1, :]
        Ainv = self.instance.mesh.edge_inverses()
        J = Ainv @ B
        H = 0.5 * (J + np.transpose(J, (0, 2, 1)))
        eigs = np.linalg.eigvalsh(H)
        if eigs[:, 0].min() <= 0:
            return None, None, None, False
        det = np.prod(eigs, axis=1)
        Hinv = np.linalg.inv(H)

        Q = np.einsum("mab,mjb->mja", Hinv, self.w)  # grad of log det
        Qf = Q.reshape(M, K)
        eta_bar = u.mean(axis=1)
        g_dens = self.instance.g
        log_g = np.log(g_dens.eval_many(eta_bar))
        glog = g_dens.log_grad_many(eta_bar)  # (M, n)
        ghess = g_dens.log_hess_many(eta_bar) if want_hess else None

        D2 = None
        if want_hess:
            R2m = np.einsum("mja,mab,mJb->mjJ", self.w, Hinv, self.w)
            D2 = 0.5 * (
                np.einsum("mJc,mjC->mjcJC", Q, Q)
                + np.einsum("mcC,mjJ->mjcJC", Hinv, R2m)
            ).reshape(M, K, K)

        share = 1.0 / (n + 1)
        if self.variant == "ldmaop":
            p = -np.log(det) - log_g + self.log_f
            grad = -Qf - share * np.tile(glog, (1, n + 1))
            hess = None
            if want_hess:
                hess = D2 - share**2 * np.tile(ghess, (1, n + 1, n + 1))
        else:
            s = det ** (1.0 / n)
            rho = np.exp((self.log_f - log_g) / n)
            p = -s + rho
            grad = (
                -(s / n)[:, None] * Qf
                - (rho / n)[:, None] * share * np.tile(glog, (1, n + 1))
            )
            hess = None
            if want_hess:
                hess = (s / n)[:, None, None] * D2 - (s / n**2)[
                    :, None, None
                ] * np.einsum("mk,ml->mkl", Qf, Qf)
                rh = (
                    np.einsum("ma,mb->mab", glog, glog) / n**2 - ghess / n
                ) * rho[:, None, None]
                hess += share**2 * np.tile(rh, (1, n + 1, n + 1))
        return p, grad, hess, True

    # -- barrier slacks -----------------------------------------------------

    def hyperplane_slacks(self, psi: np.ndarray, eta: np.ndarray) -> np.ndarray:
        """s_ij = psi_j - psi_i - <eta_i, x_j - x_i>; diagonal set to inf."""
        E = eta @ self.X.T
        d = (eta * self.X).sum(axis=1)
        S = psi[None, :] - psi[:, None] - E + d[:, None]
        np.fill_diagonal(S, np.inf)
        return S

    def target_slacks(self, eta: np.ndarray):
        tgt = self.instance.target
        if tgt.kind == "disc":
            v = eta - np.asarray(tgt.center)
            return tgt.radius**2 - (v**2).sum(axis=1)
        a, b = tgt.halfspaces
        return (b[None, :] - eta @ a.T).ravel()

    def init_slack(self, eta: np.ndarray) -> np.ndarray:
        p, _, _, ok = self.penalty_terms(eta, want_hess=False)
        if not ok:
            raise InputError("initial point has a non-PD discrete Jacobian")
        return np.maximum(p, 0.0) + 1.0

    # -- potential ----------------------------------------------------------

    def potential(self, z: np.ndarray, t_obj: float) -> float:
        """Barrier potential; +inf outside the domain."""
        psi, eta, t = self.unpack(z)
        S = self.hyperplane_slacks(psi, eta)
        if S[self.hp_mask].min() <= 0:
            return np.inf
        ts = self.target_slacks(eta)
        if ts.min() <= 0:
            return np.inf
        if (t + self.eps_t).min() <= 0:
            return np.inf
        p, _, _, ok = self.penalty_terms(eta, want_hess=False)
        if not ok:
            return np.inf
        w_epi = t - p
        if w_epi.min() <= 0:
            return np.inf
        val = t_obj * float(self.V @ t)
        val += 0.5 * GAUGE_WEIGHT * float(psi.sum()) ** 2
        val -= float(np.log(S[self.hp_mask]).sum())
        val -= float(np.log(ts).sum())
        val -= float(np.log(t + self.eps_t).sum())
        val -= float(np.log(w_epi).sum())
        return val

    def gradient(self, z: np.ndarray, t_obj: float) -> np.ndarray:
        """Analytic gradient of the barrier potential (for tests and the
        Newton loop; must match finite differences)."""
        g, *_ = self._derivatives(z, t_obj, want_hess=False)
        return g

    # -- Newton system -------------------------------------------------------

    def _derivatives(self, z: np.ndarray, t_obj: float, want_hess: bool = True):
        N, n, M = self.N, self.n, self.M
        psi, eta, t = self.unpack(z)
        dim_z = self.dim_z

        g = np.zeros(self.dim)
        Hzz = np.zeros((dim_z, dim_z)) if want_hess else None
        d_t = np.zeros(M)
        Hte = np.zeros((M, self.K)) if want_hess else None

        # objective + psi gauge
        g[dim_z:] += t_obj * self.V
        g[:N] += GAUGE_WEIGHT * psi.sum()
        if want_hess:
            Hzz[:N, :N] += GAUGE_WEIGHT

        # hyperplane barrier (working set only)
        S = self.hyperplane_slacks(psi, eta)
        with np.errstate(divide="ignore"):
            R1 = np.where(self.hp_mask, 1.0 / S, 0.0)
        R2 = R1**2
        g[:N] += -R1.sum(axis=0) + R1.sum(axis=1)
        g_eta = np.einsum("ij,ija->ia", R1, self.D)
        g[N:dim_z] += g_eta.ravel()
        if want_hess:
            Hpp = -(R2 + R2.T)
            np.fill_diagonal(Hpp, R2.sum(axis=0) + R2.sum(axis=1))
            Hzz[:N, :N] += Hpp
            Hpe = -np.einsum("ik,ika->kia", R2, self.D)
            diag_pe = np.einsum("ij,ija->ia", R2, self.D)
            ii = np.arange(N)
            Hpe[ii, ii, :] += diag_pe
            Hzz[:N, N:dim_z] += Hpe.reshape(N, N * n)
            Hzz[N:dim_z, :N] += Hpe.reshape(N, N * n).T
            Hee = np.einsum("ij,ija,ijb->iab", R2, self.D, self.D)
            rows = (N + ii[:, None] * n + np.arange(n)[None, :]).reshape(N, n)
            for a in range(n):
                for b in range(n):
                    Hzz[rows[:, a], rows[:, b]] += Hee[:, a, b]

        # target barrier
        tgt = self.instance.target
        if tgt.kind == "disc":
            v = eta - np.asarray(tgt.center)
            c = tgt.radius**2 - (v**2).sum(axis=1)
            g[N:dim_z] += (2.0 * v / c[:, None]).ravel()
            if want_hess:
                blocks = 4.0 * np.einsum("ja,jb->jab", v, v) / (c**2)[:, None, None]
                blocks += (2.0 / c)[:, None, None] * np.eye(n)
                ii = np.arange(N)
                rows = (N + ii[:, None] * n + np.arange(n)[None, :]).reshape(N, n)
                for a in range(n):
                    for b in range(n):
                        Hzz[rows[:, a], rows[:, b]] += blocks[:, a, b]
        else:
            a_m, b_m = tgt.halfspaces
            s = b_m[None, :] - eta @ a_m.T  # (N, m)
            g[N:dim_z] += ((1.0 / s) @ a_m).ravel()
            if want_hess:
                blocks = np.einsum("jm,ma,mb->jab", 1.0 / s**2, a_m, a_m)
                ii = np.arange(N)
                rows = (N + ii[:, None] * n + np.arange(n)[None, :]).reshape(N, n)
                for aa in range(n):
                    for bb in range(n):
                        Hzz[rows[:, aa], rows[:, bb]] += blocks[:, aa, bb]

        # slack lower bound
        g[dim_z:] += -1.0 / (t + self.eps_t)
        d_t += 1.0 / (t + self.eps_t) ** 2

        # epigraph constraints t_i >= p_i(eta)
        p, gp, hp, ok = self.penalty_terms(eta, want_hess=want_hess)
        if not ok:
            raise FloatingPointError("Newton iterate left the PD domain")
        w_epi = t - p
        g[dim_z:] += -1.0 / w_epi
        np.add.at(g, self.eta_idx, gp / w_epi[:, None])
        d_t += 1.0 / w_epi**2
        if want_hess:
            Hte[:] = -gp / (w_epi**2)[:, None]
            blocks = (
                np.einsum("mk,ml->mkl", gp, gp) / (w_epi**2)[:, None, None]
                + hp / w_epi[:, None, None]
            )
            np.add.at(
                Hzz, (self.eta_idx[:, :, None], self.eta_idx[:, None, :]), blocks
            )

        return g, Hzz, d_t, Hte

    def newton_step(self, z: np.ndarray, t_obj: float):
        """Damped Newton direction via Schur elimination of the slack block.

        Returns (dz, decrement_sq, grad).
        """
        g, Hzz, d_t, Hte = self._derivatives(z, t_obj, want_hess=True)
        dim_z = self.dim_z
        gz = g[:dim_z].copy()
        gt = g[dim_z:]

        # Schur complement onto the psi/eta block
        scale = 1.0 / d_t
        blocks = -np.einsum("mk,ml->mkl", Hte, Hte) * scale[:, None, None]
        np.add.at(Hzz, (self.eta_idx[:, :, None], self.eta_idx[:, None, :]), blocks)
        np.add.at(gz, self.eta_idx, -Hte * (gt * scale)[:, None])

        dz_z = _solve_spd(Hzz, -gz)
        coupled = (Hte * dz_z[self.eta_idx]).sum(axis=1)
        dz_t = (-gt - coupled) * scale
        dz = np.concatenate([dz_z, dz_t])
        lam_sq = float(-(g @ dz))
        return dz, lam_sq, g


def _offdiag_max(S: np.ndarray) -> float:
    """Largest off-diagonal entry (the diagonal is identically zero up to
    summation-order noise)."""
    S = S.copy()
    np.fill_diagonal(S, -np.inf)
    return float(S.max())


def _default_hyperplane_mask(mesh, knn: int = 16, full_below: int = 200) -> np.ndarray:
    """Symmetric boolean working set: all pairs for small meshes, otherwise
    mesh-edge pairs plus the k nearest neighbours of every vertex."""
    N = mesh.num_vertices
    mask = np.zeros((N, N), dtype=bool)
    if N <= full_below:
        mask[:] = True
        np.fill_diagonal(mask, False)
        return mask
    X = mesh.vertices
    d2 = ((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2)
    order = np.argsort(d2, axis=1, kind="stable")[:, 1 : knn + 1]
    rows = np.repeat(np.arange(N), order.shape[1])
    mask[rows, order.ravel()] = True
    for tri in mesh.simplices:
        for a in tri:
            for b in tri:
                if a != b:
                    mask[a, b] = True
    mask |= mask.T
    np.fill_diagonal(mask, False)
    return mask


def _solve_spd(H: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Cholesky solve with escalating jitter; falls back to lstsq."""
    jitter = 0.0
    scale = max(np.abs(np.diag(H)).max(), 1.0)
    for _ in range(6):
        try:
            c = scipy.linalg.cho_factor(
                H + jitter * scale * np.eye(len(H)), lower=True, check_finite=False
            )
            return scipy.linalg.cho_solve(c, rhs, check_finite=False)
        except np.linalg.LinAlgError:
            jitter = max(jitter * 100.0, 1e-14)
        except scipy.linalg.LinAlgError:
            jitter = max(jitter * 100.0, 1e-14)
    return np.linalg.lstsq(H, rhs, rcond=None)[0]


def epigraph_assemble(instance: ProblemInstance, tol_cost: float = 1e-7) -> EpigraphProgram:
    """Smooth program description: slack count, constraint catalogue and
    analytic derivative oracles for the barrier solver."""
    return EpigraphProgram(instance, tol_cost=tol_cost)


def solve(instance: ProblemInstance, opts: SolverOptions | None = None):
    """Minimize the (L)DMAOP objective; returns (Solution, SolveReport).

    The returned decision vector satisfies all constraints within
    ``opts.tol_feas`` (strictly, for the interior-point path).  The cost
    trace records the best objective seen at the end of each barrier stage.
    """
    opts = opts or SolverOptions(variant=instance.variant)
    if opts.variant != instance.variant:
        instance = ProblemInstance(
            mesh=instance.mesh,
            target=instance.target,
            f=instance.f,
            g=instance.g,
            variant=opts.variant,
        )
    q = quality(instance.mesh)
    if q.r_min <= 0:
        raise InputError("mesh contains a degenerate simplex (R_min = 0)")

    t_start = time.perf_counter()
    rng = np.random.default_rng(opts.seed)
    _ = rng  # reserved for randomized perturbations; none used by default

    dv0 = feasible_init(instance)
    f_dens, g_dens = instance.f, instance.g
    mesh = instance.mesh

    initial_cost = objective(mesh, dv0.eta, f_dens, g_dens, instance.variant)
    best_cost = initial_cost
    best_dv = dv0
    trace = []
    outer = newton_total = 0
    converged = False
    reason = "iteration cap reached"
    stalled = False
    mask = None
    prog = None
    z = None

    for _round in range(4):
        prog = EpigraphProgram(instance, tol_cost=opts.tol_cost, hyperplane_mask=mask)
        z0 = prog.pack(dv0, prog.init_slack(dv0.eta))
        if z is None or not np.isfinite(prog.potential(z, 1.0)):
            z = z0
        t_obj = 1.0
        stalled = False

        while outer < opts.max_outer:
            outer += 1
            fails = 0
            steps = 0
            lam_sq = np.inf
            for _ in range(opts.max_newton):
                try:
                    dz, lam_sq, _ = prog.newton_step(z, t_obj)
                except FloatingPointError:
                    fails = 2
                    break
                newton_total += 1
                steps += 1
                if lam_sq / 2.0 <= NEWTON_DECREMENT_TOL:
                    break
                alpha, phi0 = 1.0, prog.potential(z, t_obj)
                ok = False
                for _bt in range(60):
                    cand = z + alpha * dz
                    val = prog.potential(cand, t_obj)
                    if np.isfinite(val) and val <= phi0 - ARMIJO_SLOPE * alpha * lam_sq:
                        z = cand
                        ok = True
                        break
                    alpha *= 0.5
                if not ok:
                    fails += 1
                    if fails >= 2:
                        break
            log.debug(
                "stage %d: t_obj=%.3e, %d newton steps, final decrement^2 %.3e",
                outer, t_obj, steps, lam_sq,
            )
            psi_cur, eta_cur, _ = prog.unpack(z)
            dv_cur = DecisionVector(psi=psi_cur.copy(), eta=eta_cur.copy())
            cost_cur = objective(mesh, eta_cur, f_dens, g_dens, instance.variant)
            # the incumbent must be feasible for the full N^2 constraint set,
            # not just the barrier working set
            if cost_cur < best_cost and _offdiag_max(
                hyperplane_matrix(mesh, dv_cur)
            ) <= 0:
                best_cost = cost_cur
                best_dv = dv_cur
            trace.append(best_cost)
            if fails >= 2:
                stalled = True
                reason = "newton line search stalled"
                break
            if steps >= opts.max_newton and lam_sq / 2.0 > STALL_DECREMENT:
                stalled = True
                reason = "newton centering stalled near a degenerate face"
                break
            if prog.gap_constraints / t_obj < opts.tol_cost:
                converged = True
                reason = "duality-gap surrogate below tol_cost"
                break
            t_obj *= opts.barrier_mu

        # admit any constraints the relaxed solve pushed against
        psi_cur, eta_cur, _ = prog.unpack(z)
        S_res = hyperplane_matrix(
            mesh, DecisionVector(psi=psi_cur, eta=eta_cur)
        )
        violated = S_res > -1e-12
        np.fill_diagonal(violated, False)
        new_pairs = violated & ~prog.hp_mask
        if not new_pairs.any():
            break
        mask = prog.hp_mask | new_pairs | new_pairs.T
        log.debug("round added %d hyperplane pairs", int(new_pairs.sum()))

    dv = best_dv
    subgrad_iters = 0

    if stalled and opts.fallback:
        dv_fb, cost_fb, subgrad_iters = _subgradient_fallback(
            instance, prog, dv, best_cost, opts
        )
        # the lift cannot certify feasibility for arbitrary eta fields;
        # keep the strictly feasible barrier incumbent if the polish broke it
        if residuals(mesh, dv_fb, instance.target).within(opts.tol_feas):
            dv, best_cost = dv_fb, cost_fb
        reason += "; finished by projected subgradient"
        converged = True

    res = residuals(mesh, dv, instance.target)
    if not res.within(opts.tol_feas):
        raise AssertionError(
            f"solver returned an infeasible point: {res} (internal error)"
        )

    from .potential import build_potential  # local import to avoid a cycle

    phi = build_potential(mesh, dv)
    sol = Solution(
        dv=dv, b_offset=phi.b_offset, cost=best_cost, variant=instance.variant
    )
    report = SolveReport(
        cost=best_cost,
        initial_cost=initial_cost,
        residuals=res,
        outer_iters=outer,
        newton_iters=newton_total,
        subgrad_iters=subgrad_iters,
        wall_time_s=time.perf_counter() - t_start,
        converged=converged,
        reason=reason,
        trace=trace,
    )
    return sol, report


def _psi_lift(mesh, psi: np.ndarray, eta: np.ndarray, max_passes: int = 200):
    """Repair the hyperplane constraints by raising psi to the affine
    envelope psi_j <- max_i (psi_i + <eta_i, x_j - x_i>); leaves the cost
    unchanged since the objective ignores psi."""
    X = mesh.vertices
    E = eta @ X.T
    d = (eta * X).sum(axis=1)
    for _ in range(max_passes):
        lifted = (psi[:, None] + E - d[:, None]).max(axis=0)
        new = np.maximum(psi, lifted)
        if np.allclose(new, psi, rtol=0, atol=1e-15):
            return new
        psi = new
    return psi


def _subgradient_fallback(
    instance: ProblemInstance, prog: EpigraphProgram, dv: DecisionVector, best_cost, opts
):
    """Projected subgradient on the original nonsmooth objective with
    feasibility restored by target projection plus the psi lift."""
    mesh = instance.mesh
    V = mesh.volumes()
    eta = dv.eta.copy()
    psi = dv.psi.copy()
    best_eta, best_psi = eta.copy(), psi.copy()
    iters = 200
    for k in range(iters):
        p = penalty_arguments(mesh, eta, instance.f, instance.g, instance.variant)
        grad = _objective_subgradient(prog, eta, p, V)
        norm = np.linalg.norm(grad)
        if norm == 0:
            break
        step = 0.1 / ((1 + k) ** 0.5 * norm)
        eta = eta - step * grad
        for j in range(len(eta)):  # project back into the target
            eta[j] = instance.target.project(eta[j])
        eta = _repair_pd(mesh, eta, dv.eta)
        psi = _psi_lift(mesh, psi, eta)
        cost = float((V * np.maximum(0.0, penalty_arguments(
            mesh, eta, instance.f, instance.g, instance.variant))).sum())
        if cost < best_cost:
            best_cost = cost
            best_eta, best_psi = eta.copy(), psi.copy()
    dv = DecisionVector(psi=_psi_lift(mesh, best_psi, best_eta), eta=best_eta)
    return dv, best_cost, iters


def _objective_subgradient(prog: EpigraphProgram, eta, p, V):
    """A subgradient of the objective in eta (active simplices only)."""
    _, gp, _, ok = prog.penalty_terms(eta, want_hess=False)
    if not ok:
        return np.zeros_like(eta)
    grad = np.zeros_like(eta)
    active = p > 0
    contrib = V[active, None] * gp[active]
    np.add.at(grad.reshape(-1), prog.eta_idx[active] - prog.N, contrib)
    return grad


def _repair_pd(mesh, eta, fallback_eta, max_blend: int = 30):
    """Blend back toward a PD-feasible field until all Jacobians are PSD."""
    from .discretization import discrete_jacobians

    lam = 1.0
    for _ in range(max_blend):
        cand = lam * eta + (1 - lam) * fallback_eta
        eigs = np.linalg.eigvalsh(discrete_jacobians(mesh, cand))
        if eigs[:, 0].min() > -1e-12:
            return cand
        lam *= 0.7
    return fallback_eta


# ---------------------------------------------------------------------------
# solution file I/O


def solution_to_dict(sol: Solution, report: SolveReport, mesh, mesh_h: float) -> dict:
    return {
        "variant": sol.variant,
        "N": len(sol.dv.psi),
        "psi": sol.dv.psi.tolist(),
        "eta": sol.dv.eta.tolist(),
        "b": sol.b_offset,
        "cost": sol.cost,
        "residuals": {
            "hyperplane_max": report.residuals.hyperplane_max,
            "target_max": report.residuals.target_max,
            "min_eig_H": report.residuals.min_eig_H,
        },
        "mesh_h": mesh_h,
        "report": {
            "outer_iters": report.outer_iters,
            "newton_iters": report.newton_iters,
            "subgrad_iters": report.subgrad_iters,
            "wall_time_s": report.wall_time_s,
            "converged": report.converged,
            "reason": report.reason,
            "trace": report.trace,
        },
        "mesh": mesh_to_dict(mesh),
    }


def save_solution(path, sol: Solution, report: SolveReport, mesh, mesh_h: float):
    with open(path, "w") as fh:
        json.dump(solution_to_dict(sol, report, mesh, mesh_h), fh)


def load_solution(path):
    """Returns (Solution, mesh, raw dict)."""
    with open(path) as fh:
        d = json.load(fh)
    try:
        dv = DecisionVector(
            psi=np.asarray(d["psi"], dtype=float),
            eta=np.asarray(d["eta"], dtype=float),
        )
        sol = Solution(
            dv=dv, b_offset=float(d["b"]), cost=float(d["cost"]), variant=d["variant"]
        )
        mesh = mesh_from_dict(d["mesh"])
    except KeyError as exc:
        raise InputError(f"solution file missing field {exc}") from exc
    return sol, mesh, d
