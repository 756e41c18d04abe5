"""Box domains, optional terrain bottoms, and collocation center generation.

Centers live on a boundary-inclusive tensor-product grid. With a terrain
bottom, the vertical coordinate is stretched column by column,

    z -> z_b(x, y) + (z - z_lo) * (z_hi - z_b(x, y)) / (z_hi - z_lo),

so the lowest grid layer lies on the terrain while node counts stay n^3.
Every node carries exactly one face label; nodes on edges and corners are
resolved by the fixed priority bottom > top > xmin > xmax > ymin > ymax.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Callable

import numpy as np

from .errors import ConfigurationError, ContractError, DomainError

__all__ = [
    "FaceLabel",
    "BoxDomain",
    "Topography",
    "NodeSet",
    "grid_centers",
    "classify",
    "as_points",
]


def as_points(pts) -> tuple[np.ndarray, bool]:
    """Normalize a (3,) or (m, 3) input to (m, 3); second value flags single-point input."""
    p = np.asarray(pts, dtype=float)
    if p.ndim == 1:
        return p.reshape(1, 3), True
    if p.ndim != 2 or p.shape[1] != 3:
        raise DomainError(f"expected points of shape (3,) or (m, 3), got {p.shape}")
    return p, False


class FaceLabel(IntEnum):
    """Face membership of a node; the enum order is the edge/corner tie-break priority."""

    INTERIOR = 0
    BOTTOM = 1
    TOP = 2
    XMIN = 3
    XMAX = 4
    YMIN = 5
    YMAX = 6


# Outward unit normals of the five flat faces (bottom is terrain-dependent).
_FLAT_NORMALS = {
    FaceLabel.TOP: np.array([0.0, 0.0, 1.0]),
    FaceLabel.XMIN: np.array([-1.0, 0.0, 0.0]),
    FaceLabel.XMAX: np.array([1.0, 0.0, 0.0]),
    FaceLabel.YMIN: np.array([0.0, -1.0, 0.0]),
    FaceLabel.YMAX: np.array([0.0, 1.0, 0.0]),
}


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box; bounds are (lower, upper) per axis."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float
    zmin: float
    zmax: float

    def __post_init__(self):
        for lo, hi, ax in (
            (self.xmin, self.xmax, "x"),
            (self.ymin, self.ymax, "y"),
            (self.zmin, self.zmax, "z"),
        ):
            if not lo < hi:
                raise ConfigurationError(f"{ax} bounds must satisfy lower < upper, got ({lo}, {hi})")

    @property
    def lo(self) -> np.ndarray:
        return np.array([self.xmin, self.ymin, self.zmin])

    @property
    def hi(self) -> np.ndarray:
        return np.array([self.xmax, self.ymax, self.zmax])

    @property
    def bounds(self) -> tuple[float, ...]:
        return (self.xmin, self.xmax, self.ymin, self.ymax, self.zmin, self.zmax)

    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def contains(self, pts, tol: float = 0.0) -> np.ndarray:
        """Elementwise membership in the closed box (flat bottom only)."""
        p, single = as_points(pts)
        inside = np.all((p >= self.lo - tol) & (p <= self.hi + tol), axis=1)
        return bool(inside[0]) if single else inside


@dataclass(frozen=True)
class Topography:
    """Terrain bottom z = height(x, y) over the horizontal footprint.

    ``grad`` returns (dz/dx, dz/dy) stacked on the last axis; when omitted it
    is approximated by central differences, which only matters for the exact
    surface normal.
    """

    height: Callable[[np.ndarray, np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None

    def slope(self, x: np.ndarray, y: np.ndarray, h: float = 1e-6) -> np.ndarray:
        if self.grad is not None:
            return np.asarray(self.grad(x, y), dtype=float)
        gx = (self.height(x + h, y) - self.height(x - h, y)) / (2 * h)
        gy = (self.height(x, y + h) - self.height(x, y - h)) / (2 * h)
        return np.stack([gx, gy], axis=-1)

    def normal(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Outward (downward-pointing) unit normal of the surface z = height(x, y)."""
        g = np.atleast_2d(self.slope(np.asarray(x, float), np.asarray(y, float)))
        n = np.column_stack([g[:, 0], g[:, 1], -np.ones(len(g))])
        return n / np.linalg.norm(n, axis=1, keepdims=True)


@dataclass(frozen=True)
class NodeSet:
    """Collocation centers with face labels and outward unit normals.

    ``normals`` has NaN rows at interior nodes. Arrays are frozen so a
    NodeSet can be shared across threads.
    """

    points: np.ndarray
    labels: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        n = len(self.points)
        if self.points.shape != (n, 3) or self.labels.shape != (n,) or self.normals.shape != (n, 3):
            raise ContractError(
                f"inconsistent NodeSet arrays: points {self.points.shape}, "
                f"labels {self.labels.shape}, normals {self.normals.shape}"
            )
        bnd = self.labels != FaceLabel.INTERIOR
        norms = np.linalg.norm(self.normals[bnd], axis=1)
        if bnd.any() and np.max(np.abs(norms - 1.0)) > 1e-12:
            raise DomainError("boundary normals must be unit vectors")
        if (~bnd).any() and not np.all(np.isnan(self.normals[~bnd])):
            raise DomainError("interior nodes must not carry normals")
        for arr in (self.points, self.labels, self.normals):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(self.labels == FaceLabel.INTERIOR)

    @property
    def boundary(self) -> np.ndarray:
        return np.flatnonzero(self.labels != FaceLabel.INTERIOR)


def _bottom_height(box: BoxDomain, topo: Topography | None, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if topo is None:
        return np.full(np.shape(x), box.zmin, dtype=float)
    zb = np.asarray(topo.height(x, y), dtype=float)
    if np.any(zb >= box.zmax):
        raise DomainError("terrain height reaches or exceeds the top of the box")
    return zb


def _classify_arrays(
    pts: np.ndarray, box: BoxDomain, topo: Topography | None, tol: float
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized face classification; returns (labels, normals-with-NaN)."""
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    zb = _bottom_height(box, topo, x, y)

    outside = (
        (x < box.xmin - tol)
        | (x > box.xmax + tol)
        | (y < box.ymin - tol)
        | (y > box.ymax + tol)
        | (z < zb - tol)
        | (z > box.zmax + tol)
    )
    if np.any(outside):
        raise DomainError(f"{int(outside.sum())} point(s) outside the closed domain")

    labels = np.full(len(pts), int(FaceLabel.INTERIOR))
    normals = np.full((len(pts), 3), np.nan)

    face_tests = [
        (FaceLabel.BOTTOM, np.abs(z - zb) <= tol),
        (FaceLabel.TOP, np.abs(z - box.zmax) <= tol),
        (FaceLabel.XMIN, np.abs(x - box.xmin) <= tol),
        (FaceLabel.XMAX, np.abs(x - box.xmax) <= tol),
        (FaceLabel.YMIN, np.abs(y - box.ymin) <= tol),
        (FaceLabel.YMAX, np.abs(y - box.ymax) <= tol),
    ]
    unassigned = np.ones(len(pts), dtype=bool)
    for label, mask in face_tests:
        pick = mask & unassigned
        if not pick.any():
            continue
        labels[pick] = int(label)
        if label is FaceLabel.BOTTOM:
            if topo is None:
                normals[pick] = np.array([0.0, 0.0, -1.0])
            else:
                normals[pick] = topo.normal(x[pick], y[pick])
        else:
            normals[pick] = _FLAT_NORMALS[label]
        unassigned &= ~pick
    return labels, normals


def classify(node, box: BoxDomain, topo: Topography | None = None):
    """Classify one point of the closed domain.

    Returns ``(FaceLabel, outward unit normal)`` for boundary points and
    ``(FaceLabel.INTERIOR, None)`` for interior points. Points outside the
    closed domain raise :class:`DomainError`.
    """
    p, _ = as_points(node)
    tol = 1e-12 * max(1.0, box.diameter())
    labels, normals = _classify_arrays(p, box, topo, tol)
    label = FaceLabel(labels[0])
    return label, (None if label is FaceLabel.INTERIOR else normals[0])


def grid_centers(box: BoxDomain, n_per_axis: int, topo: Topography | None = None) -> NodeSet:
    """Boundary-inclusive equidistant tensor grid of n^3 centers.

    Ordering is lexicographic with z slowest and x fastest, so identical
    inputs always produce identical node orderings. With a terrain bottom
    the vertical coordinate is stretched per column (see module docstring).
    """
    if n_per_axis < 2:
        raise ConfigurationError(f"n_per_axis must be at least 2, got {n_per_axis}")
    n = int(n_per_axis)
    xs = np.linspace(box.xmin, box.xmax, n)
    ys = np.linspace(box.ymin, box.ymax, n)
    zs = np.linspace(box.zmin, box.zmax, n)
    zg, yg, xg = np.meshgrid(zs, ys, xs, indexing="ij")
    pts = np.column_stack([xg.ravel(), yg.ravel(), zg.ravel()])

    if topo is not None:
        zb = _bottom_height(box, topo, pts[:, 0], pts[:, 1])
        pts[:, 2] = zb + (pts[:, 2] - box.zmin) * (box.zmax - zb) / (box.zmax - box.zmin)

    tol = 1e-12 * max(1.0, box.diameter())
    labels, normals = _classify_arrays(pts, box, topo, tol)
    return NodeSet(points=pts, labels=labels, normals=normals)
