"""Source/target data of a transport problem: densities, target geometry,
mass balance.

Densities are strictly positive and bounded; the gaussian and grid kinds are
floored away from zero.  Target domains are bounded convex sets (disc or
convex polygon) with membership, violation distance and Euclidean projection
queries.  All types are immutable after :func:`mass_normalize`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InputError
from .mesh import Mesh

log = logging.getLogger(__name__)

DEFAULT_FLOOR = 1e-3


# ---------------------------------------------------------------------------
# densities


@dataclass(frozen=True)
class UniformDensity:
    """Constant density of height ``scale``."""

    scale: float = 1.0
    kind = "uniform"

    def eval_many(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.full(len(pts), self.scale)

    def log_grad_many(self, pts: np.ndarray) -> np.ndarray:
        return np.zeros_like(np.atleast_2d(pts), dtype=float)

    def log_hess_many(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        n = pts.shape[1]
        return np.zeros((len(pts), n, n))

    def scaled(self, factor: float) -> "UniformDensity":
        return replace(self, scale=self.scale * factor)


@dataclass(frozen=True)
class GaussianFlooredDensity:
    """Gaussian bump of peak ``scale`` with diagonal covariance, floored at
    ``floor`` times the peak so the density stays bounded away from zero."""

    center: tuple
    cov_diag: tuple
    floor: float = DEFAULT_FLOOR
    scale: float = 1.0
    kind = "gaussian_floored"

    def __post_init__(self):
        if self.floor <= 0:
            raise InputError("gaussian floor must be > 0")
        if any(v <= 0 for v in self.cov_diag):
            raise InputError("covariance diagonal must be positive")

    def _bump(self, pts: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center, dtype=float)
        s = np.asarray(self.cov_diag, dtype=float)
        return np.exp(-0.5 * ((pts - c) ** 2 / s).sum(axis=1))

    def eval_many(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return self.scale * np.maximum(self._bump(pts), self.floor)

    def log_grad_many(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        c = np.asarray(self.center, dtype=float)
        s = np.asarray(self.cov_diag, dtype=float)
        grad = -(pts - c) / s
        grad[self._bump(pts) <= self.floor] = 0.0  # flat on the floor
        return grad

    def log_hess_many(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        s = np.asarray(self.cov_diag, dtype=float)
        hess = np.tile(np.diag(-1.0 / s), (len(pts), 1, 1))
        hess[self._bump(pts) <= self.floor] = 0.0
        return hess

    def scaled(self, factor: float) -> "GaussianFlooredDensity":
        return replace(self, scale=self.scale * factor)


@dataclass(frozen=True)
class GridDensity:
    """Axis-aligned sample lattice with bilinear interpolation.

    ``values`` is (ny, nx) row-major over [xmin, xmax] x [ymin, ymax];
    samples are floored at ``floor`` times the peak at load time.  Queries
    outside the lattice bounding box are rejected.
    """

    bounds: tuple  # (xmin, xmax, ymin, ymax)
    values: np.ndarray
    floor: float = DEFAULT_FLOOR
    scale: float = 1.0
    kind = "grid"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[0] < 2 or vals.shape[1] < 2:
            raise InputError("grid density needs a (ny>=2, nx>=2) lattice")
        peak = vals.max()
        if peak <= 0:
            raise InputError("grid density has no positive samples")
        object.__setattr__(self, "values", np.maximum(vals, self.floor * peak))
        xmin, xmax, ymin, ymax = self.bounds
        if not (xmax > xmin and ymax > ymin):
            raise InputError("grid density bounds are degenerate")

    def eval_many(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        xmin, xmax, ymin, ymax = self.bounds
        ny, nx = self.values.shape
        tol = 1e-12 * max(xmax - xmin, ymax - ymin)
        if (
            pts[:, 0].min() < xmin - tol
            or pts[:, 0].max() > xmax + tol
            or pts[:, 1].min() < ymin - tol
            or pts[:, 1].max() > ymax + tol
        ):
            raise InputError("grid density query outside lattice bounding box")
        u = np.clip((pts[:, 0] - xmin) / (xmax - xmin) * (nx - 1), 0, nx - 1)
        v = np.clip((pts[:, 1] - ymin) / (ymax - ymin) * (ny - 1), 0, ny - 1)
        i0 = np.clip(u.astype(int), 0, nx - 2)
        j0 = np.clip(v.astype(int), 0, ny - 2)
        a, b = u - i0, v - j0
        z = self.values
        val = (
            z[j0, i0] * (1 - a) * (1 - b)
            + z[j0, i0 + 1] * a * (1 - b)
            + z[j0 + 1, i0] * (1 - a) * b
            + z[j0 + 1, i0 + 1] * a * b
        )
        return self.scale * val

    def log_grad_many(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        xmin, xmax, ymin, ymax = self.bounds
        ny, nx = self.values.shape
        hx = (xmax - xmin) / (nx - 1)
        hy = (ymax - ymin) / (ny - 1)
        u = np.clip((pts[:, 0] - xmin) / hx, 0, nx - 1)
        v = np.clip((pts[:, 1] - ymin) / hy, 0, ny - 1)
        i0 = np.clip(u.astype(int), 0, nx - 2)
        j0 = np.clip(v.astype(int), 0, ny - 2)
        a, b = u - i0, v - j0
        z = self.values
        dvdx = ((z[j0, i0 + 1] - z[j0, i0]) * (1 - b) + (z[j0 + 1, i0 + 1] - z[j0 + 1, i0]) * b) / hx
        dvdy = ((z[j0 + 1, i0] - z[j0, i0]) * (1 - a) + (z[j0 + 1, i0 + 1] - z[j0, i0 + 1]) * a) / hy
        val = self.eval_many(pts) / self.scale
        return np.stack([dvdx, dvdy], axis=1) / val[:, None]

    def log_hess_many(self, pts: np.ndarray) -> np.ndarray:
        # bilinear patches are curvature-free along axes; treated as flat
        pts = np.atleast_2d(pts)
        return np.zeros((len(pts), 2, 2))

    def scaled(self, factor: float) -> "GridDensity":
        d = GridDensity.__new__(GridDensity)
        object.__setattr__(d, "bounds", self.bounds)
        object.__setattr__(d, "values", self.values)
        object.__setattr__(d, "floor", self.floor)
        object.__setattr__(d, "scale", self.scale * factor)
        return d


def density_eval(d, x) -> float:
    """Density value at a single point (> 0)."""
    return float(d.eval_many(np.atleast_2d(np.asarray(x, dtype=float)))[0])


def density_log_eval(d, x) -> float:
    """log of the density value at a single point."""
    return math.log(density_eval(d, x))


# ---------------------------------------------------------------------------
# target domains


@dataclass(frozen=True)
class DiscTarget:
    """Closed disc target domain."""

    center: tuple = (0.0, 0.0)
    radius: float = 1.0
    kind = "disc"

    def __post_init__(self):
        if self.radius <= 0:
            raise InputError("disc radius must be > 0")

    def violation_many(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        dist = np.linalg.norm(pts - np.asarray(self.center), axis=1)
        return np.maximum(0.0, dist - self.radius)

    def project(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        c = np.asarray(self.center, dtype=float)
        dist = np.linalg.norm(y - c)
        if dist <= self.radius:
            return y.copy()
        return c + (y - c) * (self.radius / dist)

    def interior_point(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)

    def inradius(self) -> float:
        return self.radius

    def area(self) -> float:
        return math.pi * self.radius**2

    def boundary_loop(self, k: int = 128) -> np.ndarray:
        t = np.linspace(0, 2 * math.pi, k, endpoint=False)
        c = np.asarray(self.center)
        return c + self.radius * np.stack([np.cos(t), np.sin(t)], axis=1)


@dataclass(frozen=True)
class PolygonTarget:
    """Convex polygon target, stored with unit-normal half-spaces a.y <= b."""

    vertices: np.ndarray
    kind = "polygon"

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise InputError("polygon target needs >= 3 planar vertices")
        # orient counter-clockwise
        e1, e2 = v[:-1] - v[0], v[1:] - v[0]
        area2 = (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]).sum()
        if area2 < 0:
            v = v[::-1].copy()
        edges = np.roll(v, -1, axis=0) - v
        normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
        lens = np.linalg.norm(normals, axis=1)
        if lens.min() < 1e-14:
            raise InputError("polygon target has a zero-length edge")
        normals /= lens[:, None]
        offs = (normals * v).sum(axis=1)
        # convexity: every vertex on the inner side of every half-space
        if ((v @ normals.T - offs) > 1e-9).any():
            raise InputError("polygon target is not convex")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "_normals", normals)
        object.__setattr__(self, "_offsets", offs)

    @property
    def halfspaces(self):
        """(a_m, b_m) with |a_m| = 1 describing the polygon as a.y <= b."""
        return self._normals, self._offsets

    def violation_many(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        s = pts @ self._normals.T - self._offsets
        return np.maximum(0.0, s.max(axis=1))

    def project(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.violation_many(y[None])[0] <= 0:
            return y.copy()
        best, best_d = None, np.inf
        v = self.vertices
        for a, b in zip(v, np.roll(v, -1, axis=0)):
            e = b - a
            t = np.clip(np.dot(y - a, e) / np.dot(e, e), 0.0, 1.0)
            p = a + t * e
            d = np.linalg.norm(y - p)
            if d < best_d:
                best, best_d = p, d
        return best

    def interior_point(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def inradius(self) -> float:
        y0 = self.interior_point()
        return float((self._offsets - self._normals @ y0).min())

    def area(self) -> float:
        v = self.vertices
        w = np.roll(v, -1, axis=0)
        return 0.5 * abs((v[:, 0] * w[:, 1] - v[:, 1] * w[:, 0]).sum())

    def boundary_loop(self, k: int = 0) -> np.ndarray:
        return self.vertices


def target_violation(target, y) -> float:
    """0 iff y is in the closed target; otherwise the worst signed distance."""
    return float(target.violation_many(np.atleast_2d(np.asarray(y, dtype=float)))[0])


def target_projection(target, y) -> np.ndarray:
    """Euclidean projection onto the closed target domain."""
    return target.project(y)


# ---------------------------------------------------------------------------
# problem instance and mass balance

QUAD_RESOLUTION = 512


@dataclass(frozen=True)
class ProblemInstance:
    """Full data tuple of a discretized transport problem."""

    mesh: Mesh
    target: object
    f: object
    g: object
    variant: str = "dmaop"

    def __post_init__(self):
        if self.variant not in ("dmaop", "ldmaop"):
            raise InputError(f"unknown variant {self.variant!r}")
        if self.g.kind == "grid":
            log.warning(
                "grid target density: convexity of g^(-1/n) is unknown; "
                "the problem may not be convex"
            )


def source_mass(mesh: Mesh, f) -> float:
    """Per-simplex midpoint quadrature of the source density.

    Uses the barycenter value on each simplex, matching the evaluation points
    of the objective; first-order accurate.
    """
    return float((mesh.volumes() * f.eval_many(mesh.barycenters())).sum())


def target_mass(target, g) -> float:
    """Integral of g over the target: closed form when uniform, midpoint
    quadrature on a fine tensor grid with an inside test otherwise."""
    if g.kind == "uniform":
        return g.scale * target.area()
    pts_min, pts_max = _target_bbox(target)
    k = QUAD_RESOLUTION
    xs = np.linspace(pts_min[0], pts_max[0], k, endpoint=False) + (
        pts_max[0] - pts_min[0]
    ) / (2 * k)
    ys = np.linspace(pts_min[1], pts_max[1], k, endpoint=False) + (
        pts_max[1] - pts_min[1]
    ) / (2 * k)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    inside = target.violation_many(pts) <= 0
    cell = (pts_max[0] - pts_min[0]) * (pts_max[1] - pts_min[1]) / k**2
    vals = np.zeros(len(pts))
    vals[inside] = g.eval_many(pts[inside])
    return float(vals.sum() * cell)


def _target_bbox(target):
    if target.kind == "disc":
        c = np.asarray(target.center)
        r = target.radius
        return c - r, c + r
    return target.vertices.min(axis=0), target.vertices.max(axis=0)


def mass_normalize(instance: ProblemInstance) -> ProblemInstance:
    """Rescale g so that the two total masses agree.

    Returns a new instance whose g is multiplied by (integral of f) /
    (integral of g); idempotent up to rounding.
    """
    mf = source_mass(instance.mesh, instance.f)
    mg = target_mass(instance.target, instance.g)
    if not (mf > 0 and mg > 0 and np.isfinite(mf) and np.isfinite(mg)):
        raise InputError("non-positive or non-finite density mass")
    return replace(instance, g=instance.g.scaled(mf / mg))


# ---------------------------------------------------------------------------
# config parsing


def density_from_config(cfg: dict, name: str):
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise InputError(f"density {name!r} must be an object with a 'kind'")
    kind = cfg["kind"]
    scale = float(cfg.get("scale", 1.0))
    if scale <= 0:
        raise InputError(f"density {name!r} scale must be > 0")
    if kind == "uniform":
        return UniformDensity(scale=scale)
    if kind == "gaussian_floored":
        return GaussianFlooredDensity(
            center=tuple(cfg["center"]),
            cov_diag=tuple(cfg["cov_diag"]),
            floor=float(cfg.get("floor", DEFAULT_FLOOR)),
            scale=scale,
        )
    if kind == "grid":
        if "csv" in cfg:
            bounds, values = load_grid_csv(cfg["csv"])
        else:
            bounds, values = tuple(cfg["bounds"]), np.asarray(cfg["values"], float)
        return GridDensity(
            bounds=bounds,
            values=values,
            floor=float(cfg.get("floor", DEFAULT_FLOOR)),
            scale=scale,
        )
    raise InputError(f"density {name!r}: unknown kind {kind!r}")


def target_from_config(cfg: dict):
    if not isinstance(cfg, dict):
        raise InputError("config field 'target' must be an object")
    if "disc" in cfg:
        d = cfg["disc"]
        return DiscTarget(center=tuple(d.get("center", (0, 0))), radius=float(d["radius"]))
    if "polygon" in cfg:
        return PolygonTarget(vertices=np.asarray(cfg["polygon"], dtype=float))
    raise InputError("config field 'target' needs 'disc' or 'polygon'")


def instance_from_config(cfg: dict, mesh: Mesh, normalize: bool = True) -> ProblemInstance:
    """Build a ProblemInstance from a config dict and an already-built mesh.

    Required fields: 'target', 'f', 'g'; optional 'variant' (default
    'dmaop').  Missing fields are named in the error message.  With
    ``normalize`` the target density is rescaled to match the source mass.
    """
    if not isinstance(cfg, dict):
        raise InputError("config must be a JSON object")
    for name in ("target", "f", "g"):
        if name not in cfg:
            raise InputError(f"config is missing required field {name!r}")
    variant = cfg.get("variant", "dmaop")
    instance = ProblemInstance(
        mesh=mesh,
        target=target_from_config(cfg["target"]),
        f=density_from_config(cfg["f"], "f"),
        g=density_from_config(cfg["g"], "g"),
        variant=variant,
    )
    return mass_normalize(instance) if normalize else instance


def load_grid_csv(path):
    """Grid density CSV: header line 'xmin,xmax,ymin,ymax', then row-major
    sample rows."""
    with open(path) as fh:
        header = fh.readline().strip().lstrip("#").strip()
        bounds = tuple(float(t) for t in header.split(","))
        if len(bounds) != 4:
            raise InputError("grid CSV header must be xmin,xmax,ymin,ymax")
        rows = [
            [float(t) for t in line.strip().split(",")]
            for line in fh
            if line.strip()
        ]
    return bounds, np.asarray(rows, dtype=float)
