"""Collocation point generation: blue-noise static sets, uniform
mini-batches, and evaluation grids.

Poisson-disk sets come from dart throwing against the already accepted
points.  The initial radius targets the requested count through a packing
density argument (hexagonal in 2-d, FCC in 3-d); if saturation leaves the
set short, the radius shrinks gently and throwing continues, so the
minimum-distance property always holds at the returned radius.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .domains import Domain, DomainError, TimeSlab

__all__ = ["PointSet", "SamplerError", "poisson_disk", "poisson_disk_cube",
           "minibatch", "eval_grid"]


class SamplerError(RuntimeError):
    """Requested density or counts could not be realized."""


@dataclass
class PointSet:
    """Interior / boundary / initial collocation points for one problem."""

    interior: np.ndarray
    boundary: list[tuple[str, np.ndarray, np.ndarray]] = field(default_factory=list)
    initial: np.ndarray | None = None
    seed: int | None = None
    radius: float | None = None

    def to_csv(self, path) -> None:
        dim = self.interior.shape[1] if self.interior.size else 0
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            cols = [f"x{i}" for i in range(dim)] + [f"n{i}" for i in range(dim)]
            w.writerow(["region"] + cols)
            blank = [""] * dim
            for p in self.interior:
                w.writerow(["interior"] + list(p) + blank)
            for label, pts, normals in self.boundary:
                for p, nv in zip(pts, normals):
                    w.writerow([f"boundary:{label}"] + list(p) + list(nv))
            if self.initial is not None:
                for p in self.initial:
                    w.writerow(["initial"] + list(p) + blank)


def _uniform_interior(domain: Domain, n: int, rng) -> np.ndarray:
    if isinstance(domain, TimeSlab):
        t = rng.uniform(domain.t0, domain.t1, n)
        x = rng.uniform(domain.x_lo, domain.x_hi, n)
        return np.column_stack([t, x])
    lo, hi = domain.bbox()
    kind = type(domain).__name__
    if kind == "Box2d":
        return rng.uniform(lo, hi, (n, 2))
    if kind == "Annulus2d":
        u = rng.uniform(0, 1, n)
        rr = np.sqrt(domain.r_in**2 + u * (domain.r_out**2 - domain.r_in**2))
        th = rng.uniform(0, 2 * np.pi, n)
        return np.column_stack([rr * np.cos(th), rr * np.sin(th)])
    if kind == "ExtrudedAnnulus3d":
        u = rng.uniform(0, 1, n)
        rr = np.sqrt(domain.r_in**2 + u * (domain.r_out**2 - domain.r_in**2))
        th = rng.uniform(0, 2 * np.pi, n)
        z = rng.uniform(domain.z_lo, domain.z_hi, n)
        return np.column_stack([rr * np.cos(th), rr * np.sin(th), z])
    raise DomainError(f"no uniform sampler for domain {kind}")


def _initial_radius(measure: float, target: int, dim: int) -> float:
    if dim == 2:
        return np.sqrt(measure / (target * 2.0 / np.sqrt(3.0)))
    if dim == 3:
        return (measure / (target * np.sqrt(2.0))) ** (1.0 / 3.0)
    return (measure / target) ** (1.0 / dim)


def _dart_throw(draw, target: int, r0: float, rng, exact: bool,
                dim: int, max_shrinks: int = 80):
    """Accept draws at pairwise distance >= r, shrinking r if saturation
    leaves the set short.  Returns (points, final radius)."""
    lo_count = target if exact else int(np.ceil(0.9 * target))
    hi_count = target if exact else int(np.floor(1.1 * target))
    streak_limit = max(250, 30 * int(np.sqrt(target)))
    pts = np.empty((0, dim))
    r = float(r0)
    streak = 0
    shrinks = 0
    while pts.shape[0] < hi_count:
        c = draw(rng)
        if pts.shape[0]:
            d2 = np.min(np.sum((pts - c) ** 2, axis=1))
            ok = d2 >= r * r
        else:
            ok = True
        if ok:
            pts = np.vstack([pts, c])
            streak = 0
            continue
        streak += 1
        if streak > streak_limit:
            if pts.shape[0] >= lo_count:
                break
            shrinks += 1
            if shrinks > max_shrinks:
                raise SamplerError(
                    f"could not reach {lo_count} points after {max_shrinks} "
                    f"radius reductions (have {pts.shape[0]})"
                )
            r *= 0.92
            streak = 0
    return pts, r


def poisson_disk(domain: Domain, target_count: int, seed: int,
                 boundary_count: int | None = None,
                 initial_count: int | None = None) -> PointSet:
    """Static blue-noise training set for one problem.

    Interior points satisfy the minimum-distance property at the returned
    radius and land within about 10% of ``target_count``.  Boundary (and,
    for time-dependent domains, initial) points are uniform per part,
    apportioned by part measure.
    """
    if target_count < 1:
        raise SamplerError("target_count must be >= 1")
    rng = np.random.default_rng(seed)
    r0 = _initial_radius(domain.measure(), target_count, domain.dim)
    draw = lambda g: _uniform_interior(domain, 1, g)[0]  # noqa: E731
    interior, radius = _dart_throw(draw, target_count, r0, rng,
                                   exact=False, dim=domain.dim)

    if boundary_count is None:
        boundary_count = max(32, target_count // 4)
    parts = domain.boundary_parts()
    measures = np.array([domain.part_measure(p) for p in parts])
    weights = measures / measures.sum()
    boundary = []
    for label, w in zip(parts, weights):
        n = max(1, int(round(boundary_count * w)))
        pts, normals = domain.sample_boundary(label, n, rng)
        boundary.append((label, pts, normals))

    initial = None
    if domain.time_dependent:
        if initial_count is None:
            initial_count = max(32, target_count // 4)
        initial = domain.sample_initial(initial_count, rng)

    return PointSet(interior=interior, boundary=boundary, initial=initial,
                    seed=seed, radius=radius)


def poisson_disk_cube(n: int, dim: int, rng) -> tuple[np.ndarray, float]:
    """Exactly ``n`` blue-noise points in [-1, 1]^dim; returns the radius.

    Used for RBF center layout.  The radius starts generously and shrinks
    until the count is reached, so the final value tracks the achievable
    packing distance in the given dimension.
    """
    if n < 1:
        raise SamplerError("center count must be >= 1")
    r0 = 2.0 * (2.0**dim / n) ** (1.0 / dim)
    draw = lambda g: g.uniform(-1.0, 1.0, dim)  # noqa: E731
    pts, radius = _dart_throw(draw, n, r0, rng, exact=True, dim=dim)
    return pts[:n], radius


def minibatch(domain: Domain, counts: dict, rng) -> PointSet:
    """Uniform i.i.d. batch; identical generator state gives the identical
    batch, advancing it gives a fresh one."""
    n_r = int(counts.get("interior", 0))
    n_b = int(counts.get("boundary", 0))
    n_ic = int(counts.get("initial", 0))
    if min(n_r, n_b, n_ic) < 0:
        raise SamplerError("counts must be nonnegative")
    interior = _uniform_interior(domain, n_r, rng) if n_r else np.empty((0, domain.dim))
    boundary = []
    if n_b:
        parts = domain.boundary_parts()
        measures = np.array([domain.part_measure(p) for p in parts])
        weights = measures / measures.sum()
        for label, w in zip(parts, weights):
            n = max(1, int(round(n_b * w)))
            pts, normals = domain.sample_boundary(label, n, rng)
            boundary.append((label, pts, normals))
    initial = None
    if n_ic:
        if not domain.time_dependent:
            raise SamplerError("initial points requested for a static domain")
        initial = domain.sample_initial(n_ic, rng)
    return PointSet(interior=interior, boundary=boundary, initial=initial)


def eval_grid(domain: Domain, resolution) -> np.ndarray:
    """Deterministic tensor-product grid over the domain.

    Boxes and time slabs use cartesian grids including the endpoints;
    annular domains use polar grids (radii inclusive, angles periodic).
    """
    if np.isscalar(resolution):
        resolution = (int(resolution),) * domain.dim
    if any(r < 2 for r in resolution):
        raise SamplerError("resolution must be >= 2 per axis")
    kind = type(domain).__name__
    if kind == "TimeSlab":
        t = np.linspace(domain.t0, domain.t1, resolution[0])
        x = np.linspace(domain.x_lo, domain.x_hi, resolution[1])
        tt, xx = np.meshgrid(t, x, indexing="ij")
        return np.column_stack([tt.ravel(), xx.ravel()])
    if kind == "Box2d":
        x = np.linspace(domain.x_lo, domain.x_hi, resolution[0])
        y = np.linspace(domain.y_lo, domain.y_hi, resolution[1])
        xx, yy = np.meshgrid(x, y, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])
    if kind == "Annulus2d":
        rr = np.linspace(domain.r_in, domain.r_out, resolution[0])
        th = np.linspace(0, 2 * np.pi, resolution[1], endpoint=False)
        rg, tg = np.meshgrid(rr, th, indexing="ij")
        return np.column_stack([(rg * np.cos(tg)).ravel(),
                                (rg * np.sin(tg)).ravel()])
    if kind == "ExtrudedAnnulus3d":
        rr = np.linspace(domain.r_in, domain.r_out, resolution[0])
        th = np.linspace(0, 2 * np.pi, resolution[1], endpoint=False)
        z = np.linspace(domain.z_lo, domain.z_hi, resolution[2])
        rg, tg, zg = np.meshgrid(rr, th, z, indexing="ij")
        return np.column_stack([(rg * np.cos(tg)).ravel(),
                                (rg * np.sin(tg)).ravel(), zg.ravel()])
    raise DomainError(f"no evaluation grid for domain {kind}")
