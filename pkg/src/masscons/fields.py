"""Vector fields, the horizontal observation operator, and weighted integrals.

Fields are thin wrappers around vectorized evaluators: a Field3 maps (m, 3)
points to (m, 3) values, a Field2 to (m, 2) horizontal values. Both accept a
single (3,) point as well. A field may carry an analytic divergence (``div``)
and the divergence of its horizontal part (``hdiv``); when absent, callers
fall back to the central-difference oracle :func:`divergence_fd`.

The observation operator drops the vertical component, M u = (u1, u2); its
adjoint pads a zero, M* U = (U1, U2, 0). Weighted L2 inner products are
realized by tensor-product midpoint quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigurationError, ContractError, DomainError
from .geometry import BoxDomain, Topography, as_points

__all__ = [
    "Field3",
    "Field2",
    "Quadrature",
    "observe",
    "inject",
    "zero3",
    "constant3",
    "add_scaled",
    "subtract",
    "validate_weights",
    "midpoint_rule",
    "face_rule",
    "weighted_ip",
    "l2_ip",
    "objective",
    "objective_full",
    "divergence_fd",
    "ExampleCase",
    "example_field",
]

ScalarField = Callable[[np.ndarray], np.ndarray]


def _wrap_eval(fn, width: int):
    def call(pts):
        p, single = as_points(pts)
        vals = np.asarray(fn(p), dtype=float)
        if vals.shape != (len(p), width):
            raise ContractError(f"evaluator returned shape {vals.shape}, expected ({len(p)}, {width})")
        return vals[0] if single else vals

    return call


@dataclass(frozen=True)
class Field3:
    """3D vector field; optional analytic divergence and horizontal divergence."""

    fn: Callable[[np.ndarray], np.ndarray]
    div: ScalarField | None = None
    hdiv: ScalarField | None = None

    def __call__(self, pts):
        return _wrap_eval(self.fn, 3)(pts)

    def divergence(self, pts):
        if self.div is None:
            raise ContractError("field has no analytic divergence")
        p, single = as_points(pts)
        vals = np.asarray(self.div(p), dtype=float)
        return float(vals[0]) if single else vals


@dataclass(frozen=True)
class Field2:
    """Horizontal 2-component field evaluated at 3D positions."""

    fn: Callable[[np.ndarray], np.ndarray]
    hdiv: ScalarField | None = None

    def __call__(self, pts):
        return _wrap_eval(self.fn, 2)(pts)


def observe(u: Field3) -> Field2:
    """Observation operator M: keep the horizontal components."""
    return Field2(fn=lambda pts: u.fn(pts)[:, :2], hdiv=u.hdiv)


def inject(data: Field2) -> Field3:
    """Adjoint M*: pad a zero vertical component."""

    def fn(pts):
        vals = data.fn(pts)
        out = np.zeros((len(pts), 3))
        out[:, :2] = vals
        return out

    return Field3(fn=fn, div=data.hdiv, hdiv=data.hdiv)


def zero3() -> Field3:
    zero = lambda pts: np.zeros(len(pts))
    return Field3(fn=lambda pts: np.zeros((len(pts), 3)), div=zero, hdiv=zero)


def constant3(v) -> Field3:
    v = np.asarray(v, dtype=float)
    zero = lambda pts: np.zeros(len(pts))
    return Field3(fn=lambda pts: np.broadcast_to(v, (len(pts), 3)).copy(), div=zero, hdiv=zero)


def add_scaled(u: Field3, t: float, p: Field3) -> Field3:
    """The field x -> u(x) + t * p(x), composing analytic divergences when present."""
    div = None
    if u.div is not None and p.div is not None:
        div = lambda pts: u.div(pts) + t * p.div(pts)
    hdiv = None
    if u.hdiv is not None and p.hdiv is not None:
        hdiv = lambda pts: u.hdiv(pts) + t * p.hdiv(pts)
    return Field3(fn=lambda pts: u.fn(pts) + t * p.fn(pts), div=div, hdiv=hdiv)


def subtract(u: Field3, v: Field3) -> Field3:
    return add_scaled(u, -1.0, v)


def validate_weights(weights, dim: int | None = None) -> np.ndarray:
    """Check a weight matrix is square, symmetric to 1e-14, and positive definite."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ContractError(f"weight matrix must be square, got shape {w.shape}")
    if dim is not None and w.shape != (dim, dim):
        raise ContractError(f"weight matrix must be {dim}x{dim}, got {w.shape}")
    scale = max(1.0, float(np.abs(w).max()))
    if np.abs(w - w.T).max() > 1e-14 * scale:
        raise ContractError("weight matrix must be symmetric")
    if np.linalg.eigvalsh(w).min() <= 0:
        raise ContractError("weight matrix must be positive definite")
    return w


@dataclass(frozen=True)
class Quadrature:
    """Evaluation nodes and positive weights for volume integrals."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if len(self.nodes) != len(self.weights):
            raise ContractError("quadrature nodes and weights must have equal length")
        if np.any(self.weights <= 0):
            raise ContractError("quadrature weights must be positive")


def midpoint_rule(box: BoxDomain, m_per_axis: int = 32, topo: Topography | None = None) -> Quadrature:
    """Tensor-product midpoint rule with m^3 cells; weights sum to the domain volume.

    With a terrain bottom, nodes are stretched per column exactly like the
    center grid, and the weights are scaled by the local column height so the
    weights still sum to the terrain-following volume.
    """
    if m_per_axis < 1:
        raise ConfigurationError("quadrature resolution must be at least 1")
    m = int(m_per_axis)
    lo, hi = box.lo, box.hi
    h = (hi - lo) / m
    axes = [lo[k] + h[k] * (np.arange(m) + 0.5) for k in range(3)]
    zg, yg, xg = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    nodes = np.column_stack([xg.ravel(), yg.ravel(), zg.ravel()])
    weights = np.full(len(nodes), float(np.prod(h)))
    if topo is not None:
        zb = np.asarray(topo.height(nodes[:, 0], nodes[:, 1]), dtype=float)
        factor = (box.zmax - zb) / (box.zmax - box.zmin)
        nodes[:, 2] = zb + (nodes[:, 2] - box.zmin) * factor
        weights = weights * factor
    return Quadrature(nodes=nodes, weights=weights)


def face_rule(box: BoxDomain, m_per_axis: int = 64) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Midpoint rule on the six flat faces; returns (nodes, weights, outward normals)."""
    m = int(m_per_axis)
    lo, hi = box.lo, box.hi
    h = (hi - lo) / m
    mids = [lo[k] + h[k] * (np.arange(m) + 0.5) for k in range(3)]
    nodes, weights, normals = [], [], []
    # (fixed axis, fixed value, sign of outward normal)
    faces = [
        (0, box.xmin, -1.0), (0, box.xmax, 1.0),
        (1, box.ymin, -1.0), (1, box.ymax, 1.0),
        (2, box.zmin, -1.0), (2, box.zmax, 1.0),
    ]
    for axis, value, sign in faces:
        others = [k for k in range(3) if k != axis]
        a, b = np.meshgrid(mids[others[0]], mids[others[1]], indexing="ij")
        pts = np.empty((m * m, 3))
        pts[:, axis] = value
        pts[:, others[0]] = a.ravel()
        pts[:, others[1]] = b.ravel()
        nodes.append(pts)
        weights.append(np.full(m * m, float(h[others[0]] * h[others[1]])))
        n = np.zeros(3)
        n[axis] = sign
        normals.append(np.broadcast_to(n, (m * m, 3)).copy())
    return np.vstack(nodes), np.concatenate(weights), np.vstack(normals)


def weighted_ip(a, b, weights: np.ndarray, quad: Quadrature) -> float:
    """Weighted inner product sum_i w_i (S a(x_i)) . b(x_i)."""
    va = a(quad.nodes)
    vb = b(quad.nodes)
    if va.shape != vb.shape:
        raise ContractError(f"field arity mismatch: {va.shape} vs {vb.shape}")
    w = np.asarray(weights, dtype=float)
    if w.shape != (va.shape[1], va.shape[1]):
        raise ContractError(f"weight matrix {w.shape} does not match field arity {va.shape[1]}")
    return float(np.sum(quad.weights * np.einsum("ij,jk,ik->i", va, w, vb)))


def l2_ip(a, b, quad: Quadrature) -> float:
    """Unweighted inner product sum_i w_i a(x_i) . b(x_i)."""
    va = a(quad.nodes)
    vb = b(quad.nodes)
    if va.shape != vb.shape:
        raise ContractError(f"field arity mismatch: {va.shape} vs {vb.shape}")
    return float(np.sum(quad.weights * np.sum(va * vb, axis=1)))


def objective(u: Field3, data: Field2, weights: np.ndarray, quad: Quadrature) -> float:
    """Half the weighted squared misfit of the horizontal components.

    The difference M u - data is formed pointwise before summation, so a
    field whose horizontal part equals the data gives exactly zero.
    """
    d = u(quad.nodes)[:, :2] - data(quad.nodes)
    w = validate_weights(weights, 2)
    return 0.5 * float(np.sum(quad.weights * np.einsum("ij,jk,ik->i", d, w, d)))


def objective_full(u: Field3, initial: Field3, weights: np.ndarray, quad: Quadrature) -> float:
    """Full-observation objective: half the 3x3-weighted squared deviation from ``initial``."""
    d = u(quad.nodes) - initial(quad.nodes)
    w = validate_weights(weights, 3)
    return 0.5 * float(np.sum(quad.weights * np.einsum("ij,jk,ik->i", d, w, d)))


def divergence_fd(u: Field3, pts, h: float, box: BoxDomain | None = None):
    """Central-difference divergence with step h; the independent oracle.

    When ``box`` is given, every stencil point must lie in the closed box.
    """
    p, single = as_points(pts)
    if h <= 0:
        raise DomainError("finite-difference step must be positive")
    if box is not None:
        tol = 1e-12 * max(1.0, box.diameter())
        for k in range(3):
            step = np.zeros(3)
            step[k] = h
            if not (np.all(box.contains(p + step, tol)) and np.all(box.contains(p - step, tol))):
                raise DomainError("finite-difference stencil leaves the domain")
    acc = np.zeros(len(p))
    for k in range(3):
        step = np.zeros(3)
        step[k] = h
        acc += (u.fn(p + step)[:, k] - u.fn(p - step)[:, k]) / (2.0 * h)
    return float(acc[0]) if single else acc


@dataclass(frozen=True)
class ExampleCase:
    """A built-in analytic case: exact field, horizontal data, and its domain(s)."""

    exact: Field3
    data: Field2
    domains: tuple[BoxDomain, ...]

    @property
    def domain(self) -> BoxDomain:
        return self.domains[0]


def _const(value: float) -> ScalarField:
    return lambda pts: np.full(len(pts), value)


def _gauss49(pts: np.ndarray) -> np.ndarray:
    return np.exp(-np.sum(pts * pts, axis=1) / 49.0)


def example_field(case_id: str, eps: float | None = None) -> ExampleCase:
    """The three built-in divergence-free fields with horizontal-only data.

    ex51: linear field (x, y, -2z); ex52: a Gaussian vortex column with unit
    updraft; ex53: the vortex sheared by a strength-eps correction (requires
    eps > 0). The data field is the exact field with the vertical component
    replaced by zero.
    """
    if case_id == "ex51":
        exact = Field3(
            fn=lambda pts: np.column_stack([pts[:, 0], pts[:, 1], -2.0 * pts[:, 2]]),
            div=_const(0.0),
            hdiv=_const(2.0),
        )
        data = Field2(fn=lambda pts: pts[:, :2].copy(), hdiv=_const(2.0))
        domains = (BoxDomain(-2, 2, -2, 2, 0, 2), BoxDomain(-2, 2, -2, 2, -2, 2))
        return ExampleCase(exact, data, domains)

    if case_id == "ex52":
        def fn(pts):
            g = _gauss49(pts)
            return np.column_stack([2.0 * pts[:, 1] * g, -2.0 * pts[:, 0] * g, np.ones(len(pts))])

        exact = Field3(fn=fn, div=_const(0.0), hdiv=_const(0.0))
        data = Field2(fn=lambda pts: fn(pts)[:, :2], hdiv=_const(0.0))
        return ExampleCase(exact, data, (BoxDomain(-7, 7, -7, 7, -7, 7),))

    if case_id == "ex53":
        if eps is None or not eps > 0:
            raise ConfigurationError(f"ex53 requires eps > 0, got {eps}")

        def fn(pts):
            g = _gauss49(pts)
            x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
            return np.column_stack(
                [
                    2.0 * y * g - eps * x * z / 2.0,
                    -2.0 * x * g - eps * y * z / 2.0,
                    eps * z * z / 2.0,
                ]
            )

        hdiv = lambda pts: -eps * pts[:, 2]
        exact = Field3(fn=fn, div=_const(0.0), hdiv=hdiv)
        data = Field2(fn=lambda pts: fn(pts)[:, :2], hdiv=hdiv)
        return ExampleCase(exact, data, (BoxDomain(-7, 7, -7, 7, 0, 7),))

    raise ConfigurationError(f"unknown example id {case_id!r} (expected ex51, ex52 or ex53)")
