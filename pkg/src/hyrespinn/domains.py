"""Problem geometry: interior membership, boundary parts, and normals.

Boundary parts are labeled and disjoint; ``classify_boundary`` assigns every
boundary point to exactly one part (fixed priority order breaks ties on
corners and edges).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DomainError",
    "Domain",
    "TimeSlab",
    "Box2d",
    "Annulus2d",
    "ExtrudedAnnulus3d",
]

_TOL = 1e-10


class DomainError(ValueError):
    """Point sets inconsistent with the domain geometry."""


class Domain:
    """Common interface for the benchmark geometries."""

    dim: int
    time_dependent: bool = False

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def measure(self) -> float:
        raise NotImplementedError

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """Strict interior membership mask."""
        raise NotImplementedError

    def boundary_parts(self) -> list[str]:
        raise NotImplementedError

    def part_measure(self, label: str) -> float:
        raise NotImplementedError

    def sample_boundary(self, label: str, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        """Uniform points on one boundary part plus outward unit normals."""
        raise NotImplementedError

    def classify_boundary(self, pts: np.ndarray) -> list[str]:
        labels = []
        for p in np.atleast_2d(pts):
            found = None
            for lab in self.boundary_parts():
                if self._on_part(lab, p):
                    found = lab
                    break
            if found is None:
                raise DomainError(f"point {p} is not on the boundary")
            labels.append(found)
        return labels

    def _on_part(self, label: str, p: np.ndarray) -> bool:
        raise NotImplementedError


@dataclass(frozen=True)
class TimeSlab(Domain):
    """Space-time rectangle [t0, t1] x [x_lo, x_hi] with coordinates (t, x)."""

    t0: float = 0.0
    t1: float = 1.0
    x_lo: float = -1.0
    x_hi: float = 1.0

    dim = 2
    time_dependent = True

    def bbox(self):
        return (np.array([self.t0, self.x_lo]), np.array([self.t1, self.x_hi]))

    def measure(self):
        return (self.t1 - self.t0) * (self.x_hi - self.x_lo)

    def contains(self, pts):
        pts = np.atleast_2d(pts)
        return (
            (pts[:, 0] > self.t0 - _TOL)
            & (pts[:, 0] < self.t1 + _TOL)
            & (pts[:, 1] > self.x_lo)
            & (pts[:, 1] < self.x_hi)
        )

    def boundary_parts(self):
        return ["x-min", "x-max"]

    def part_measure(self, label):
        return self.t1 - self.t0

    def sample_boundary(self, label, n, rng):
        t = rng.uniform(self.t0, self.t1, n)
        if label == "x-min":
            x = np.full(n, self.x_lo)
            normal = np.array([0.0, -1.0])
        elif label == "x-max":
            x = np.full(n, self.x_hi)
            normal = np.array([0.0, 1.0])
        else:
            raise DomainError(f"unknown boundary part {label!r}")
        pts = np.column_stack([t, x])
        return pts, np.tile(normal, (n, 1))

    def sample_initial(self, n, rng):
        x = rng.uniform(self.x_lo, self.x_hi, n)
        return np.column_stack([np.full(n, self.t0), x])

    def _on_part(self, label, p):
        if label == "x-min":
            return abs(p[1] - self.x_lo) <= _TOL
        if label == "x-max":
            return abs(p[1] - self.x_hi) <= _TOL
        return False


@dataclass(frozen=True)
class Box2d(Domain):
    """Axis-aligned rectangle with coordinates (x, y)."""

    x_lo: float = 0.0
    x_hi: float = 1.0
    y_lo: float = 0.0
    y_hi: float = 1.0

    dim = 2

    def bbox(self):
        return (np.array([self.x_lo, self.y_lo]), np.array([self.x_hi, self.y_hi]))

    def measure(self):
        return (self.x_hi - self.x_lo) * (self.y_hi - self.y_lo)

    def contains(self, pts):
        pts = np.atleast_2d(pts)
        return (
            (pts[:, 0] > self.x_lo)
            & (pts[:, 0] < self.x_hi)
            & (pts[:, 1] > self.y_lo)
            & (pts[:, 1] < self.y_hi)
        )

    def boundary_parts(self):
        return ["left", "right", "bottom", "top"]

    def part_measure(self, label):
        if label in ("left", "right"):
            return self.y_hi - self.y_lo
        if label in ("bottom", "top"):
            return self.x_hi - self.x_lo
        raise DomainError(f"unknown boundary part {label!r}")

    def sample_boundary(self, label, n, rng):
        if label == "left":
            pts = np.column_stack([np.full(n, self.x_lo),
                                   rng.uniform(self.y_lo, self.y_hi, n)])
            normal = np.array([-1.0, 0.0])
        elif label == "right":
            pts = np.column_stack([np.full(n, self.x_hi),
                                   rng.uniform(self.y_lo, self.y_hi, n)])
            normal = np.array([1.0, 0.0])
        elif label == "bottom":
            pts = np.column_stack([rng.uniform(self.x_lo, self.x_hi, n),
                                   np.full(n, self.y_lo)])
            normal = np.array([0.0, -1.0])
        elif label == "top":
            pts = np.column_stack([rng.uniform(self.x_lo, self.x_hi, n),
                                   np.full(n, self.y_hi)])
            normal = np.array([0.0, 1.0])
        else:
            raise DomainError(f"unknown boundary part {label!r}")
        return pts, np.tile(normal, (n, 1))

    def _on_part(self, label, p):
        x, y = p[0], p[1]
        inside_y = self.y_lo - _TOL <= y <= self.y_hi + _TOL
        inside_x = self.x_lo - _TOL <= x <= self.x_hi + _TOL
        if label == "left":
            return abs(x - self.x_lo) <= _TOL and inside_y
        if label == "right":
            return abs(x - self.x_hi) <= _TOL and inside_y
        if label == "bottom":
            return abs(y - self.y_lo) <= _TOL and inside_x
        if label == "top":
            return abs(y - self.y_hi) <= _TOL and inside_x
        return False


@dataclass(frozen=True)
class Annulus2d(Domain):
    """Ring 'r_in <= |x| <= r_out' centered at the origin."""

    r_in: float = 1.0
    r_out: float = 2.0

    dim = 2

    def __post_init__(self):
        if not 0 < self.r_in < self.r_out:
            raise DomainError(
                f"annulus radii must satisfy 0 < r_in < r_out, "
                f"got {self.r_in}, {self.r_out}"
            )

    def bbox(self):
        r = self.r_out
        return (np.array([-r, -r]), np.array([r, r]))

    def measure(self):
        return np.pi * (self.r_out**2 - self.r_in**2)

    def contains(self, pts):
        pts = np.atleast_2d(pts)
        rr = np.hypot(pts[:, 0], pts[:, 1])
        return (rr > self.r_in) & (rr < self.r_out)

    def boundary_parts(self):
        return ["inner", "outer"]

    def part_measure(self, label):
        if label == "inner":
            return 2 * np.pi * self.r_in
        if label == "outer":
            return 2 * np.pi * self.r_out
        raise DomainError(f"unknown boundary part {label!r}")

    def sample_boundary(self, label, n, rng):
        theta = rng.uniform(0, 2 * np.pi, n)
        radial = np.column_stack([np.cos(theta), np.sin(theta)])
        if label == "inner":
            return self.r_in * radial, -radial
        if label == "outer":
            return self.r_out * radial, radial
        raise DomainError(f"unknown boundary part {label!r}")

    def _on_part(self, label, p):
        rr = float(np.hypot(p[0], p[1]))
        if label == "inner":
            return abs(rr - self.r_in) <= _TOL
        if label == "outer":
            return abs(rr - self.r_out) <= _TOL
        return False


@dataclass(frozen=True)
class ExtrudedAnnulus3d(Domain):
    """2-d annulus extruded along z, coordinates (x, y, z)."""

    r_in: float = 1.0
    r_out: float = 2.0
    z_lo: float = 0.0
    z_hi: float = 1.0

    dim = 3

    def __post_init__(self):
        if not 0 < self.r_in < self.r_out:
            raise DomainError(
                f"annulus radii must satisfy 0 < r_in < r_out, "
                f"got {self.r_in}, {self.r_out}"
            )

    def bbox(self):
        r = self.r_out
        return (np.array([-r, -r, self.z_lo]), np.array([r, r, self.z_hi]))

    def measure(self):
        return np.pi * (self.r_out**2 - self.r_in**2) * (self.z_hi - self.z_lo)

    def contains(self, pts):
        pts = np.atleast_2d(pts)
        rr = np.hypot(pts[:, 0], pts[:, 1])
        return (
            (rr > self.r_in)
            & (rr < self.r_out)
            & (pts[:, 2] > self.z_lo)
            & (pts[:, 2] < self.z_hi)
        )

    def boundary_parts(self):
        # bottom/top first so lateral surfaces do not claim rim points.
        return ["bottom", "top", "inner", "outer"]

    def part_measure(self, label):
        h = self.z_hi - self.z_lo
        if label == "inner":
            return 2 * np.pi * self.r_in * h
        if label == "outer":
            return 2 * np.pi * self.r_out * h
        if label in ("bottom", "top"):
            return np.pi * (self.r_out**2 - self.r_in**2)
        raise DomainError(f"unknown boundary part {label!r}")

    def sample_boundary(self, label, n, rng):
        if label in ("inner", "outer"):
            theta = rng.uniform(0, 2 * np.pi, n)
            z = rng.uniform(self.z_lo, self.z_hi, n)
            radial = np.column_stack([np.cos(theta), np.sin(theta), np.zeros(n)])
            rr = self.r_in if label == "inner" else self.r_out
            pts = rr * radial + np.column_stack([np.zeros(n), np.zeros(n), z])
            return pts, (-radial if label == "inner" else radial)
        if label in ("bottom", "top"):
            # Uniform on the annular disk via inverse-cdf radius.
            u = rng.uniform(0, 1, n)
            rr = np.sqrt(self.r_in**2 + u * (self.r_out**2 - self.r_in**2))
            theta = rng.uniform(0, 2 * np.pi, n)
            z = self.z_lo if label == "bottom" else self.z_hi
            pts = np.column_stack([rr * np.cos(theta), rr * np.sin(theta),
                                   np.full(n, z)])
            nz = -1.0 if label == "bottom" else 1.0
            normals = np.tile([0.0, 0.0, nz], (n, 1))
            return pts, normals
        raise DomainError(f"unknown boundary part {label!r}")

    def _on_part(self, label, p):
        rr = float(np.hypot(p[0], p[1]))
        in_ring = self.r_in - _TOL <= rr <= self.r_out + _TOL
        if label == "bottom":
            return abs(p[2] - self.z_lo) <= _TOL and in_ring
        if label == "top":
            return abs(p[2] - self.z_hi) <= _TOL and in_ring
        in_z = self.z_lo - _TOL <= p[2] <= self.z_hi + _TOL
        if label == "inner":
            return abs(rr - self.r_in) <= _TOL and in_z
        if label == "outer":
            return abs(rr - self.r_out) <= _TOL and in_z
        return False
