"""Asymmetric (Kansa) collocation for the multiplier Poisson problem.

One global inverse multiquadric ansatz lambda(x) = sum_j beta_j phi(|x - c_j|)
is collocated against the interior operator at interior nodes and against the
boundary operator at boundary nodes:

    row i = lap phi_j(x_i)                    interior, isotropic
    row i = sum_kl A_kl d_k d_l phi_j(x_i)    interior, anisotropic operator div(A grad .)
    row i = phi_j(x_i)                        Dirichlet node
    row i = grad phi_j(x_i) . nu_i            Neumann node (nu may be a conormal A nu)

The resulting dense square system G beta = b is solved by a truncated-SVD
pseudo-inverse: directions with sigma < trunc_tol * sigma_max are discarded,
which keeps the solve meaningful in the severely ill-conditioned flat-kernel
regime and picks the minimal-norm solution on rank-deficient (pure-Neumann)
systems. Rows are not equilibrated by default; ``row_scaling=True`` scales
each row to unit max-norm before the SVD.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .errors import ContractError, SingularSystemError
from .geometry import FaceLabel, NodeSet, as_points
from .kernel import KernelParams, grad_phi, hess_phi, lap_phi, phi_sq

__all__ = [
    "DirichletLambda",
    "NeumannLambda",
    "GramSystem",
    "MultiplierSolution",
    "assemble",
    "factorize_and_solve",
    "condition_number",
    "eval_jet",
    "dump_gram",
]

log = logging.getLogger(__name__)

_CHUNK = 2048

ROW_INTERIOR = "interior-laplacian"
ROW_ANISO = "anisotropic-laplacian"
ROW_DIRICHLET = "dirichlet"
ROW_NEUMANN = "neumann"


@dataclass(frozen=True)
class DirichletLambda:
    """Pin the multiplier to ``value`` at a boundary node."""

    value: float


@dataclass(frozen=True, eq=False)
class NeumannLambda:
    """Prescribe grad(lambda) . direction = flux at a boundary node.

    ``direction`` is the outward unit normal for the plain Laplacian; for the
    anisotropic operator div(A grad lambda) it is the conormal A nu and need
    not be unit length.
    """

    flux: float
    direction: np.ndarray


@dataclass
class GramSystem:
    """Dense collocation system with its build context.

    ``singular_values`` is populated by :func:`factorize_and_solve`. When the
    solve used row scaling they are the singular values of the scaled matrix.
    """

    matrix: np.ndarray
    rhs: np.ndarray
    row_kinds: tuple[str, ...]
    nodes: NodeSet
    kernel: KernelParams
    aniso: np.ndarray | None = None
    singular_values: np.ndarray | None = None


def _is_identity(a: np.ndarray | None) -> bool:
    return a is not None and a.shape == (3, 3) and np.array_equal(a, np.eye(3))


def assemble(
    nodes: NodeSet,
    kernel: KernelParams,
    bcs: Mapping[int, DirichletLambda | NeumannLambda],
    f: Callable[[np.ndarray], np.ndarray],
    aniso: np.ndarray | None = None,
) -> GramSystem:
    """Build the N x N collocation matrix and right-hand side.

    ``bcs`` must cover exactly the boundary node indices. ``f`` is the
    interior source evaluated at the interior nodes. ``aniso`` switches the
    interior operator to sum_kl A_kl d_k d_l; the exact identity matrix is
    routed through the isotropic path so it reproduces those rows bit for bit.
    """
    pts = nodes.points
    n = len(pts)
    boundary = set(int(i) for i in nodes.boundary)
    given = set(int(i) for i in bcs)
    if given != boundary:
        missing = sorted(boundary - given)[:5]
        extra = sorted(given - boundary)[:5]
        raise ContractError(
            f"boundary conditions must cover exactly the boundary nodes "
            f"(missing {missing}, extra {extra})"
        )

    if _is_identity(aniso):
        aniso = None

    matrix = np.empty((n, n))
    rhs = np.empty(n)
    kinds: list[str] = [""] * n

    interior = nodes.interior
    for start in range(0, len(interior), _CHUNK):
        idx = interior[start : start + _CHUNK]
        x = pts[idx][:, None, :]
        if aniso is None:
            matrix[idx] = lap_phi(x, pts[None, :, :], kernel)
        else:
            hess = hess_phi(x, pts[None, :, :], kernel)
            matrix[idx] = np.einsum("kl,mnkl->mn", aniso, hess)
    rhs[interior] = np.asarray(f(pts[interior]), dtype=float)
    kind_interior = ROW_INTERIOR if aniso is None else ROW_ANISO
    for i in interior:
        kinds[i] = kind_interior

    dir_idx = np.array(sorted(i for i, bc in bcs.items() if isinstance(bc, DirichletLambda)), dtype=int)
    neu_idx = np.array(sorted(i for i, bc in bcs.items() if isinstance(bc, NeumannLambda)), dtype=int)

    if len(dir_idx):
        d = pts[dir_idx][:, None, :] - pts[None, :, :]
        matrix[dir_idx] = phi_sq(np.sum(d * d, axis=-1), kernel)
        rhs[dir_idx] = [bcs[int(i)].value for i in dir_idx]
        for i in dir_idx:
            kinds[i] = ROW_DIRICHLET

    if len(neu_idx):
        grads = grad_phi(pts[neu_idx][:, None, :], pts[None, :, :], kernel)
        dirs = np.array([bcs[int(i)].direction for i in neu_idx], dtype=float)
        matrix[neu_idx] = np.einsum("mnk,mk->mn", grads, dirs)
        rhs[neu_idx] = [bcs[int(i)].flux for i in neu_idx]
        for i in neu_idx:
            kinds[i] = ROW_NEUMANN

    return GramSystem(
        matrix=matrix, rhs=rhs, row_kinds=tuple(kinds), nodes=nodes, kernel=kernel, aniso=aniso
    )


@dataclass(frozen=True, eq=False)
class MultiplierSolution:
    """RBF coefficients over the centers, with its kernel and interior operator.

    Evaluation is chunked over target points so large quadrature grids do not
    materialize (m, N, 3, 3) blocks.
    """

    coeffs: np.ndarray
    nodes: NodeSet
    kernel: KernelParams
    aniso: np.ndarray | None
    residual: float
    residual_norm: float
    rank: int
    trunc_tol: float

    def _reduce(self, pts, block, width: int = 0) -> np.ndarray:
        p, single = as_points(pts)
        # An identically zero coefficient vector (e.g. zero data with zero
        # boundary values) short-circuits the kernel sums.
        if not self.coeffs.any():
            shape = (len(p),) if width == 0 else (len(p),) + (3,) * width
            out = np.zeros(shape)
        else:
            parts = [block(p[start : start + _CHUNK]) for start in range(0, len(p), _CHUNK)]
            out = np.concatenate(parts)
        return out[0] if single else out

    def value(self, pts):
        centers = self.nodes.points

        def block(x):
            d = x[:, None, :] - centers[None, :, :]
            return phi_sq(np.sum(d * d, axis=-1), self.kernel) @ self.coeffs

        out = self._reduce(pts, block)
        return float(out) if np.ndim(out) == 0 else out

    def gradient(self, pts):
        centers = self.nodes.points

        def block(x):
            g = grad_phi(x[:, None, :], centers[None, :, :], self.kernel)
            return np.einsum("mnk,n->mk", g, self.coeffs)

        return self._reduce(pts, block, width=1)

    def laplacian(self, pts):
        centers = self.nodes.points

        def block(x):
            return lap_phi(x[:, None, :], centers[None, :, :], self.kernel) @ self.coeffs

        out = self._reduce(pts, block)
        return float(out) if np.ndim(out) == 0 else out

    def hessian(self, pts):
        centers = self.nodes.points

        def block(x):
            h = hess_phi(x[:, None, :], centers[None, :, :], self.kernel)
            return np.einsum("mnkl,n->mkl", h, self.coeffs)

        return self._reduce(pts, block, width=2)

    def operator_laplacian(self, pts):
        """Apply this solution's interior operator: lap, or sum_kl A_kl d_k d_l."""
        if self.aniso is None:
            return self.laplacian(pts)
        centers = self.nodes.points
        a = self.aniso

        def block(x):
            h = hess_phi(x[:, None, :], centers[None, :, :], self.kernel)
            return np.einsum("kl,mnkl->mn", a, h) @ self.coeffs

        out = self._reduce(pts, block)
        return float(out) if np.ndim(out) == 0 else out


def factorize_and_solve(
    system: GramSystem, trunc_tol: float = 1e-12, row_scaling: bool = False
) -> MultiplierSolution:
    """Solve G beta = b by the truncated-SVD pseudo-inverse.

    Singular directions with sigma < trunc_tol * sigma_max are discarded.
    Both the normalized residual |G beta - b| / max(|b|, 1) and the raw
    2-norm are recorded on the returned solution (computed on the unscaled
    system even when ``row_scaling`` is on).
    """
    matrix, rhs = system.matrix, system.rhs
    if row_scaling:
        scale = np.abs(matrix).max(axis=1)
        scale[scale == 0] = 1.0
        matrix = matrix / scale[:, None]
        rhs = rhs / scale

    u, sigma, vt = np.linalg.svd(matrix)
    system.singular_values = sigma
    if sigma[0] == 0.0:
        raise SingularSystemError("all singular values are zero")
    keep = sigma >= trunc_tol * sigma[0]
    coeffs = vt[keep].T @ ((u[:, keep].T @ rhs) / sigma[keep])

    resid = system.matrix @ coeffs - system.rhs
    residual_norm = float(np.linalg.norm(resid))
    residual = residual_norm / max(float(np.linalg.norm(system.rhs)), 1.0)
    if residual > 1e-6:
        log.warning("collocation solve residual %.3e (rank %d of %d)", residual, keep.sum(), len(rhs))
    return MultiplierSolution(
        coeffs=coeffs,
        nodes=system.nodes,
        kernel=system.kernel,
        aniso=system.aniso,
        residual=residual,
        residual_norm=residual_norm,
        rank=int(keep.sum()),
        trunc_tol=float(trunc_tol),
    )


def condition_number(system: GramSystem) -> float:
    """2-norm condition number from the full singular spectrum; inf if sigma_min is 0."""
    if system.singular_values is None:
        raise ContractError("condition_number requires a factorized system")
    sigma = system.singular_values
    if sigma[-1] == 0.0:
        return float("inf")
    return float(sigma[0] / sigma[-1])


def eval_jet(solution: MultiplierSolution, pts):
    """Evaluate (lambda, grad lambda, lap lambda) at one point or a batch."""
    return solution.value(pts), solution.gradient(pts), solution.laplacian(pts)


def _sci(v: float) -> str:
    return np.format_float_scientific(v, unique=True)


def dump_gram(system: GramSystem, path) -> None:
    """Write G, b, singular values, and the node set as delimited text."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"# gram matrix {system.matrix.shape[0]}x{system.matrix.shape[1]}\n")
        for row in system.matrix:
            fh.write(",".join(_sci(v) for v in row) + "\n")
        fh.write("# rhs\n")
        fh.write(",".join(_sci(v) for v in system.rhs) + "\n")
        fh.write("# singular values\n")
        if system.singular_values is None:
            fh.write("\n")
        else:
            fh.write(",".join(_sci(v) for v in system.singular_values) + "\n")
        fh.write("# row kinds\n")
        fh.write(",".join(system.row_kinds) + "\n")
        fh.write("# nodes x,y,z,label\n")
        for pt, label in zip(system.nodes.points, system.nodes.labels):
            fh.write(",".join(_sci(v) for v in pt) + f",{FaceLabel(label).name.lower()}\n")
