"""Command-line front end: mesh / solve / verify / study / render / eval.

All artifacts (mesh JSON, solution JSON, study CSV, SVG frames) are
deterministic for a fixed config and seed.  Exit codes: 0 success /
converged, 2 solver hit its iteration cap, 1 invalid input.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .discretization import residuals, worst_target_vertex
from .errors import InputError
from .mesh import load_mesh, quality, save_mesh, triangulate_polygon
from .potential import build_potential
from .problem import instance_from_config
from .solver import (
    SolverOptions,
    load_solution,
    save_solution,
    solve,
)
from .transport import (
    DiscreteMap,
    assignment_oracle,
    convergence_study,
    cyclical_check,
    displacement,
    identity_reference,
    scaling_reference,
    translation_reference,
    EXHAUSTIVE_LIMIT,
)

DEFAULT_TIMES = (0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0)


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise InputError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"config {path}: invalid JSON at line {exc.lineno}") from exc


def _domain_polygon(cfg: dict) -> np.ndarray:
    if "domain" not in cfg or "polygon" not in cfg.get("domain", {}):
        raise InputError("config is missing required field 'domain.polygon'")
    return np.asarray(cfg["domain"]["polygon"], dtype=float)


def _mesh_scale(cfg: dict, override) -> float:
    if override is not None:
        return float(override)
    try:
        return float(cfg["mesh"]["h"])
    except (KeyError, TypeError) as exc:
        raise InputError("config is missing required field 'mesh.h'") from exc


def _solver_options(cfg: dict, args) -> SolverOptions:
    kw = dict(cfg.get("solver", {}))
    kw.setdefault("variant", cfg.get("variant", "dmaop"))
    if args.seed is not None:
        kw["seed"] = args.seed
    try:
        return SolverOptions(**kw)
    except TypeError as exc:
        raise InputError(f"config field 'solver': {exc}") from exc


# ---------------------------------------------------------------------------
# subcommands


def cmd_mesh(args) -> int:
    cfg = _load_config(args.config)
    mesh = triangulate_polygon(_domain_polygon(cfg), _mesh_scale(cfg, args.h))
    out = Path(args.out_dir) / (args.out or "mesh.json")
    save_mesh(mesh, out)
    q = quality(mesh)
    print(
        f"mesh: N={mesh.num_vertices} M={mesh.num_simplices} "
        f"h_max={q.h_max:.4g} R_min={q.r_min:.4g} "
        f"coverage_gap={q.coverage_gap:.3g} -> {out}"
    )
    return 0


def cmd_solve(args) -> int:
    cfg = _load_config(args.config)
    out_dir = Path(args.out_dir)
    if args.mesh_in:
        mesh = load_mesh(args.mesh_in)
        if mesh.dim != _domain_polygon(cfg).shape[1]:
            raise InputError(
                f"mesh dimension {mesh.dim} does not match the config domain"
            )
        mesh_h = quality(mesh).h_max
    else:
        mesh_h = _mesh_scale(cfg, args.h)
        mesh = triangulate_polygon(_domain_polygon(cfg), mesh_h)
        save_mesh(mesh, out_dir / "mesh.json")
    instance = instance_from_config(cfg, mesh)
    opts = _solver_options(cfg, args)
    sol, report = solve(instance, opts)
    save_solution(out_dir / "solution.json", sol, report, mesh, mesh_h)
    r = report.residuals
    print(
        f"cost={sol.cost:.6e} (initial {report.initial_cost:.6e}) "
        f"variant={sol.variant} N={mesh.num_vertices}"
    )
    print(
        f"residuals: hyperplane={r.hyperplane_max:.3e} "
        f"target={r.target_max:.3e} min_eig_H={r.min_eig_H:.3e}"
    )
    print(
        f"{report.outer_iters} barrier stages, {report.newton_iters} Newton steps, "
        f"{report.wall_time_s:.2f}s: {report.reason}"
    )
    return 0 if report.converged else 2


def cmd_verify(args) -> int:
    sol, mesh, _ = load_solution(args.solution)
    target = None
    if args.config:
        from .problem import target_from_config

        cfg = _load_config(args.config)
        if "target" not in cfg:
            raise InputError("config is missing required field 'target'")
        target = target_from_config(cfg["target"])
    res = residuals(mesh, sol.dv, target=target)
    print(
        f"residuals: hyperplane={res.hyperplane_max:.3e} "
        f"target={res.target_max:.3e} min_eig_H={res.min_eig_H:.3e}"
    )
    dmap = DiscreteMap(sources=mesh.vertices, targets=sol.dv.eta)
    worst_cycle = cyclical_check(dmap, max_len=5, trials=10_000, seed=args.seed or 0)
    print(f"worst sampled cycle sum: {worst_cycle:.3e}")
    if len(dmap) <= EXHAUSTIVE_LIMIT:
        verdict = assignment_oracle(dmap)
        print(
            f"assignment oracle: optimal={verdict['optimal']} "
            f"identity_cost={verdict['identity_cost']:.6e} "
            f"best_cost={verdict['best_cost']:.6e}"
        )
        if not verdict["optimal"]:
            return 1
    if target is not None and res.target_max > args.tol:
        j, v = worst_target_vertex(target, sol.dv.eta)
        print(f"infeasible: worst vertex {j} leaves the target by {v:.3e}")
        return 1
    if res.hyperplane_max > args.tol or worst_cycle > args.tol:
        print("infeasible: hyperplane or monotonicity residual above tolerance")
        return 1
    print("feasible")
    return 0


def cmd_study(args) -> int:
    cfg = _load_config(args.config)
    h_list = [float(t) for t in args.h.split(",")]
    reference = _parse_reference(args.reference) if args.reference else None
    result = convergence_study(cfg, h_list, reference=reference)
    out = Path(args.out_dir) / (args.out or "study.csv")
    with open(out, "w") as fh:
        fh.write("N,h,cost,two_sided,sup_err,runtime_s\n")
        for r in result.rows:
            sup = "" if r.sup_err is None else f"{r.sup_err:.9e}"
            fh.write(
                f"{r.N},{r.h:.9g},{r.cost:.9e},{r.two_sided:.9e},{sup},"
                f"{r.runtime_s:.3f}\n"
            )
    slope = "undefined (cost at numerical zero)" if result.slope is None else f"{result.slope:.4f}"
    print(f"{len(result.rows)} rows -> {out}")
    print(f"log-log slope of cost vs N: {slope}")
    if not result.complete:
        print("study incomplete: a solve failed; partial rows written")
        return 2
    return 0


def _parse_reference(spec: str):
    name, _, params = spec.partition(":")
    if name == "identity":
        return identity_reference()
    if name == "scaling":
        a, b = (float(t) for t in params.split(","))
        return scaling_reference(a, b)
    if name == "translation":
        return translation_reference([float(t) for t in params.split(",")])
    raise InputError(f"unknown reference {spec!r}")


def cmd_render(args) -> int:
    sol, mesh, raw = load_solution(args.solution)
    times = (
        [float(t) for t in args.times.split(",")] if args.times else list(DEFAULT_TIMES)
    )
    if any(not 0 <= t <= 1 for t in times):
        raise InputError("render times must lie in [0, 1]")
    if args.config:
        from .problem import target_from_config

        cfg = _load_config(args.config)
        target_loop = target_from_config(cfg.get("target", {})).boundary_loop()
    else:
        target_loop = _target_loop_from_raw(raw)
    out_dir = Path(args.out_dir)
    for k, t in enumerate(times):
        svg = render_frame(mesh, sol.dv, t, target_loop)
        path = out_dir / f"frame_{k:02d}.svg"
        path.write_text(svg)
        print(f"t={t:.4f} -> {path}")
    return 0


def _target_loop_from_raw(raw: dict) -> np.ndarray | None:
    # the solution file does not store the target; outline the convex hull
    # of the eta points as a faithful stand-in when no config is given
    eta = np.asarray(raw["eta"], dtype=float)
    from scipy.spatial import ConvexHull

    if len(eta) < 3:
        return None
    hull = ConvexHull(eta)
    return eta[hull.vertices]


def cmd_eval(args) -> int:
    sol, mesh, _ = load_solution(args.solution)
    phi = build_potential(mesh, sol.dv)
    pts = np.asarray(
        [[float(c) for c in chunk.split(",")] for chunk in args.points.split(";")]
    )
    print("x,y,phi,grad_x,grad_y")
    for p in pts:
        grad, _ = phi.subgradient(p)
        print(f"{p[0]:.9g},{p[1]:.9g},{phi(p):.9e},{grad[0]:.9e},{grad[1]:.9e}")
    return 0


# ---------------------------------------------------------------------------
# SVG rendering


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def render_frame(mesh, dv, t: float, target_loop=None, size: int = 500) -> str:
    """One displacement-interpolation frame as an SVG string.

    Triangles (shaded by relative simplex volume) are drawn only at t=0;
    every frame scatters the displaced vertices and overlays the target
    outline when one is supplied.  Output is byte-deterministic.
    """
    pts = displacement(mesh, dv, t)
    clouds = [mesh.vertices, dv.eta]
    if target_loop is not None:
        clouds.append(np.asarray(target_loop))
    allpts = np.vstack(clouds)
    lo = allpts.min(axis=0)
    hi = allpts.max(axis=0)
    span = max((hi - lo).max(), 1e-9)
    pad = 0.05 * span

    def to_px(p):
        q = (p - lo + pad) / (span + 2 * pad) * size
        return q[0], size - q[1]  # SVG y grows downward

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    if t == 0.0:
        V = mesh.volumes()
        vmax = V.max() if V.max() > 0 else 1.0
        for i, tri in enumerate(mesh.simplices):
            coords = " ".join(
                f"{_fmt(px)},{_fmt(py)}" for px, py in (to_px(p) for p in mesh.vertices[tri])
            )
            opacity = 0.15 + 0.35 * float(V[i] / vmax)
            lines.append(
                f'<polygon points="{coords}" fill="steelblue" '
                f'fill-opacity="{opacity:.3f}" stroke="navy" stroke-width="0.6"/>'
            )
    if target_loop is not None:
        coords = " ".join(
            f"{_fmt(px)},{_fmt(py)}" for px, py in (to_px(p) for p in np.asarray(target_loop))
        )
        lines.append(
            f'<polygon points="{coords}" fill="none" stroke="darkred" stroke-width="1.2"/>'
        )
    for p in pts:
        px, py = to_px(p)
        lines.append(f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="2.2" fill="black"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dmaop",
        description="Optimal-transport solver over triangulated domains",
    )
    p.add_argument("--seed", type=int, default=None, help="deterministic RNG seed")
    p.add_argument("--threads", type=int, default=None, help="BLAS thread cap")
    p.add_argument("--out-dir", default=".", help="directory for output artifacts")
    sub = p.add_subparsers(dest="command", required=True)

    pm = sub.add_parser("mesh", help="triangulate the configured source domain")
    pm.add_argument("--config", required=True)
    pm.add_argument("--h", type=float, default=None)
    pm.add_argument("--out", default=None)
    pm.set_defaults(func=cmd_mesh)

    ps = sub.add_parser("solve", help="solve the configured transport problem")
    ps.add_argument("--config", required=True)
    ps.add_argument("--mesh-in", default=None)
    ps.add_argument("--h", type=float, default=None)
    ps.set_defaults(func=cmd_solve)

    pv = sub.add_parser("verify", help="re-check feasibility and optimality oracles")
    pv.add_argument("--solution", required=True)
    pv.add_argument("--config", default=None, help="re-check target membership too")
    pv.add_argument("--tol", type=float, default=1e-8)
    pv.set_defaults(func=cmd_verify)

    pt = sub.add_parser("study", help="mesh-refinement convergence study")
    pt.add_argument("--config", required=True)
    pt.add_argument("--h", required=True, help="comma-separated decreasing scales")
    pt.add_argument("--out", default=None)
    pt.add_argument(
        "--reference",
        default=None,
        help="identity | scaling:a,b | translation:vx,vy",
    )
    pt.set_defaults(func=cmd_study)

    pr = sub.add_parser("render", help="SVG displacement-interpolation frames")
    pr.add_argument("--solution", required=True)
    pr.add_argument("--config", default=None, help="draw the true target outline")
    pr.add_argument("--times", default=None, help="comma-separated times in [0,1]")
    pr.set_defaults(func=cmd_render)

    pe = sub.add_parser("eval", help="evaluate the potential and its gradient")
    pe.add_argument("--solution", required=True)
    pe.add_argument("--points", required=True, help="x,y[;x,y...]")
    pe.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        Path(args.out_dir).mkdir(parents=True, exist_ok=True)
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
