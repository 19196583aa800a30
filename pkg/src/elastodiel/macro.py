"""Homogenized boundary-value problems on boxes, discretized by second-order finite differences.

Unknowns live on the ``(n+1)^N`` nodes of a uniform box grid; Dirichlet
values are imposed at boundary nodes and moved to the right-hand side.
Pure second derivatives use the three-point stencil and mixed ones the
product of centered first differences.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import EllipticityError, SingularSystemError
from .microstructure import to_mandel

LINEAR_TOL = 1e-10
DIRECT_LIMIT = 150_000


@dataclass(frozen=True)
class BoxGrid:
    dim: int
    n: int  # intervals per axis
    lower: tuple = None
    upper: tuple = None

    def __post_init__(self):
        if self.lower is None:
            object.__setattr__(self, "lower", (0.0,) * self.dim)
        if self.upper is None:
            object.__setattr__(self, "upper", (1.0,) * self.dim)
        if self.n < 2:
            raise ValueError("a box grid needs at least 2 intervals per axis")

    @property
    def shape(self):
        return (self.n + 1,) * self.dim

    @property
    def h(self):
        return tuple((b - a) / self.n for a, b in zip(self.lower, self.upper))

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    def nodes(self):
        axes = [np.linspace(a, b, self.n + 1) for a, b in zip(self.lower, self.upper)]
        return np.stack(np.meshgrid(*axes, indexing="ij"))

    def interior(self):
        mask = np.zeros(self.shape, dtype=bool)
        mask[(slice(1, -1),) * self.dim] = True
        return mask

    def gradient(self, u):
        """Centered differences inside, one-sided second order at the boundary; appends a derivative axis."""
        lead = np.ndim(u) - self.dim
        g = np.gradient(u, *self.h, axis=tuple(range(lead, lead + self.dim)), edge_order=2)
        if self.dim == 1:
            g = [g]
        return np.stack(g, axis=lead)

    def norm(self, u, q=2, mask=None):
        """Discrete L^q norm (trapezoid-free nodal quadrature), summing components pointwise."""
        lead = np.ndim(u) - self.dim
        mag = np.sqrt(np.sum(u**2, axis=tuple(range(lead)))) if lead else np.abs(u)
        if mask is not None:
            mag = mag[mask]
        return float((np.sum(mag**q) * self.cell_volume) ** (1.0 / q))


@functools.lru_cache(maxsize=16)
def _operators(grid: BoxGrid):
    """Second-difference matrices ``D[i][j]`` on all nodes (rows at boundary nodes vanish along the axis)."""
    m = grid.n + 1
    eye = sp.identity(m, format="csr")
    d1s, d2s = [], []
    for h in grid.h:
        d1 = sp.diags([-np.ones(m - 1), np.ones(m - 1)], [-1, 1], format="lil") / (2 * h)
        d2 = sp.diags([np.ones(m - 1), -2 * np.ones(m), np.ones(m - 1)], [-1, 0, 1], format="lil") / h**2
        for d in (d1, d2):
            d[0, :] = 0
            d[-1, :] = 0
        d1s.append(d1.tocsr())
        d2s.append(d2.tocsr())

    def along(mats, axis):
        out = None
        for k in range(grid.dim):
            block = mats if k == axis else eye
            out = block if out is None else sp.kron(out, block, format="csr")
        return out

    D1 = [along(d1s[i], i) for i in range(grid.dim)]
    D = [[along(d2s[i], i) if i == j else (D1[i] @ D1[j]).tocsr() for j in range(grid.dim)]
         for i in range(grid.dim)]
    return D1, D


def _split(grid: BoxGrid, K):
    inner = grid.interior().ravel()
    return K[inner][:, inner], K[inner][:, ~inner], inner


def _linear_solve(K, rhs, symmetric=True, near_nullspace=None):
    """Direct solve for small systems, smoothed-aggregation AMG with CG otherwise."""
    K = K.tocsr()
    bnorm = float(np.linalg.norm(rhs))
    if bnorm == 0:
        return np.zeros_like(rhs), 0.0
    if K.shape[0] <= DIRECT_LIMIT or not symmetric:
        x = spla.spsolve(K.tocsc(), rhs)
    else:
        import pyamg

        ml = pyamg.smoothed_aggregation_solver(K, B=near_nullspace, symmetry="symmetric")
        x = ml.solve(rhs, tol=1e-13, accel="cg", maxiter=2000)
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("linear solve produced non-finite values")
    res = float(np.linalg.norm(K @ x - rhs)) / bnorm
    if res > LINEAR_TOL:
        raise SingularSystemError(f"linear solve residual {res:.3e} exceeds {LINEAR_TOL:g}")
    return x, res


def _check_matrix(A):
    A = np.asarray(A, dtype=float)
    eig = np.linalg.eigvalsh(0.5 * (A + A.T))
    if eig.min() <= 0:
        raise EllipticityError(f"coefficient matrix is not positive definite (min eigenvalue {eig.min():.3e})")
    return 0.5 * (A + A.T)


def scalar_operator(grid: BoxGrid, A):
    """Sparse matrix of ``-div(A grad .)`` on all nodes."""
    A = np.asarray(A, dtype=float)
    _, D = _operators(grid)
    K = None
    for i in range(grid.dim):
        for j in range(grid.dim):
            if A[i, j] != 0:
                term = -A[i, j] * D[i][j]
                K = term if K is None else K + term
    return (K if K is not None else sp.csr_matrix((grid.n + 1) ** grid.dim * (1, 1))).tocsr()


# -- scalar problems ---------------------------------------------------------

@dataclass
class MacroProblem:
    """Homogenized dielectric problem ``div(eps grad phi) = sum_p a_p . grad f_p + source``, ``phi = boundary`` on the box boundary.

    ``modulation`` is a list of callables ``x -> f_p(x)`` (passive charges)
    or the string ``"active"`` (``f_p = d phi / d x_p``, which turns the
    equation into ``div((eps - a) grad phi) = source``).  ``modulation_grad``
    optionally supplies the exact gradients of the passive modulations.
    """

    grid: BoxGrid
    eps: np.ndarray
    boundary: Callable
    a: Optional[np.ndarray] = None  # a[j, p]
    modulation: object = None
    modulation_grad: Optional[Sequence[Callable]] = None
    source: Optional[Callable] = None


@dataclass
class MacroSolution:
    grid: BoxGrid
    phi: Optional[np.ndarray] = None
    u: Optional[np.ndarray] = None
    Z: Optional[np.ndarray] = None
    residual: float = 0.0


def modulation_values(problem: MacroProblem, phi=None):
    """Modulations ``f_p`` at the nodes (``(P, *nodes)``)."""
    x = problem.grid.nodes()
    if problem.modulation is None:
        return np.zeros((0,) + problem.grid.shape)
    if isinstance(problem.modulation, str):
        if problem.modulation != "active":
            raise ValueError(f"unknown modulation {problem.modulation!r}")
        return problem.grid.gradient(phi)
    return np.stack([np.broadcast_to(f(x), problem.grid.shape) for f in problem.modulation])


def solve_scalar_bvp(problem: MacroProblem) -> MacroSolution:
    grid = problem.grid
    x = grid.nodes()
    active = isinstance(problem.modulation, str)
    A = np.asarray(problem.eps, dtype=float)
    if active:
        if problem.modulation != "active":
            raise ValueError(f"unknown modulation {problem.modulation!r}")
        A = A - np.asarray(problem.a, dtype=float)
    A = _check_matrix(A)
    # div(A grad phi) = s   <=>   -div(A grad phi) = -s
    s = np.zeros(grid.shape)
    if problem.source is not None:
        s = s + problem.source(x)
    if not active and problem.modulation is not None and problem.a is not None:
        a = np.asarray(problem.a, dtype=float)
        if problem.modulation_grad is not None:
            grads = [np.broadcast_to(gf(x), (grid.dim,) + grid.shape) for gf in problem.modulation_grad]
        else:
            grads = list(grid.gradient(modulation_values(problem)))
        for p, gp in enumerate(grads):
            s = s + np.einsum("j,j...->...", a[:, p], gp)
    K = scalar_operator(grid, A)
    Kii, Kib, inner = _split(grid, K)
    bvals = np.broadcast_to(problem.boundary(x), grid.shape).ravel()
    rhs = -s.ravel()[inner] - Kib @ bvals[~inner]
    sol, res = _linear_solve(Kii, rhs)
    phi = bvals.copy()
    phi[inner] = sol
    return MacroSolution(grid, phi=phi.reshape(grid.shape), residual=res)


def active_charge_consistency(grid: BoxGrid, eps_h, a, phi, stencil="interior") -> float:
    """Residual of ``div(eps_h grad phi) = sum_p a_p . grad f_p`` with ``f_p`` the discrete gradient of ``phi``.

    ``f_p`` is centered inside and one-sided second order on the boundary.
    Its divergence is taken with second-order differences over the interior
    nodes only (``stencil="interior"``, one-sided on the first interior layer)
    or with centered differences reaching the boundary values
    (``stencil="centered"``); the latter mixes the two gradient stencils and
    is first order on the first interior layer.  Returns the discrete L2
    norm over interior nodes.
    """
    lhs = -(scalar_operator(grid, np.asarray(eps_h, float)) @ phi.ravel()).reshape(grid.shape)
    f = grid.gradient(phi)
    a = np.asarray(a, dtype=float)
    inner = (slice(1, -1),) * grid.dim
    rhs = np.zeros(grid.shape)[inner]
    if stencil == "interior":
        for p in range(f.shape[0]):
            for j in range(grid.dim):
                if a[j, p] != 0:
                    rhs += a[j, p] * np.gradient(f[p][inner], grid.h[j], axis=j, edge_order=2)
    elif stencil == "centered":
        D1, _ = _operators(grid)
        for p in range(f.shape[0]):
            for j in range(grid.dim):
                if a[j, p] != 0:
                    rhs += a[j, p] * (D1[j] @ f[p].ravel()).reshape(grid.shape)[inner]
    else:
        raise ValueError(f"unknown stencil {stencil!r}")
    r = lhs[inner] - rhs
    return float(np.sqrt(np.sum(r**2) * grid.cell_volume))


# -- elasticity --------------------------------------------------------------

def assemble_Z(M_h, N_h, P_h, grad_phi, f):
    """``Z = M_h(grad phi (x) grad phi) + 2 sum_p f_p N_h^p grad phi + sum_pq P_h^pq f_p f_q`` pointwise.

    ``N_h`` has shape ``(P, N, N, N)``; ``P_h`` is ``(P, P, N, N)`` or the
    diagonal-only ``(P, N, N)``.
    """
    grad_phi = np.asarray(grad_phi, dtype=float)
    Z = np.einsum("ijkh,k...,h...->ij...", np.asarray(M_h, float), grad_phi, grad_phi)
    f = np.asarray(f, dtype=float)
    if N_h is not None and f.size:
        Z = Z + 2.0 * np.einsum("pijk,p...,k...->ij...", np.asarray(N_h, float), f, grad_phi)
    if P_h is not None and f.size:
        P = np.asarray(P_h, float)
        if P.ndim == 3:
            Z = Z + np.einsum("pij,p...->ij...", P, f**2)
        else:
            Z = Z + np.einsum("pqij,p...,q...->ij...", P, f, f)
    return 0.5 * (Z + np.swapaxes(Z, 0, 1))


def elastic_operator(grid: BoxGrid, L):
    """Block sparse matrix of ``-div(L sym grad .)`` acting on vector nodal fields (component-major)."""
    L = np.asarray(L, dtype=float)
    _, D = _operators(grid)
    dim = grid.dim
    blocks = [[None] * dim for _ in range(dim)]
    for a in range(dim):
        for c in range(dim):
            K = None
            for b in range(dim):
                for d in range(dim):
                    # symmetric part of the stiffness acting on the displacement gradient
                    coef = 0.25 * (L[a, b, c, d] + L[b, a, c, d] + L[a, b, d, c] + L[b, a, d, c])
                    if coef != 0:
                        term = -coef * D[b][d]
                        K = term if K is None else K + term
            blocks[a][c] = K if K is not None else sp.csr_matrix(((grid.n + 1) ** dim,) * 2)
    return sp.bmat(blocks, format="csr")


def check_stiffness(L):
    eig = np.linalg.eigvalsh(to_mandel(np.asarray(L, float)))
    if eig.min() <= 0:
        raise EllipticityError(f"stiffness is not positive definite on symmetric matrices (min {eig.min():.3e})")


def solve_elastic_bvp(grid: BoxGrid, L_h, Z, body_force: Optional[Callable] = None) -> MacroSolution:
    """``div(L_h grad u + Z) + body_force = 0`` with ``u = 0`` on the boundary; ``Z`` has shape ``(N, N, *nodes)``."""
    check_stiffness(L_h)
    dim = grid.dim
    D1, _ = _operators(grid)
    inner = grid.interior().ravel()
    Z = np.asarray(Z, dtype=float)
    rhs = np.zeros((dim, inner.size))
    for a in range(dim):
        for b in range(dim):
            rhs[a] += D1[b] @ Z[a, b].ravel()
    if body_force is not None:
        rhs += np.broadcast_to(body_force(grid.nodes()), (dim,) + grid.shape).reshape(dim, -1)
    K = elastic_operator(grid, L_h)
    sel = np.tile(inner, dim)
    Kii = K[sel][:, sel]
    m = int(inner.sum())
    translations = np.kron(np.eye(dim), np.ones((m, 1)))
    x, res = _linear_solve(Kii, rhs.ravel()[sel], near_nullspace=translations)
    u = np.zeros(dim * inner.size)
    u[sel] = x
    return MacroSolution(grid, u=u.reshape((dim,) + grid.shape), Z=Z, residual=res)


def solve_dilute_elastic(grid: BoxGrid, L_h, P_bar, f, lam, ell):
    """Leading-order displacement ``lam^2 ell^N u~`` with ``div(L_h grad u~ + sum_p P_bar^p f_p^2) = 0``.

    ``P_bar[p] = (lam^2 ell^N)^-1 P_h^p``; returns ``(u, u~)``.
    """
    Z = np.einsum("pij,p...->ij...", np.asarray(P_bar, float), np.asarray(f, float) ** 2)
    tilde = solve_elastic_bvp(grid, L_h, Z)
    return lam**2 * ell**grid.dim * tilde.u, tilde.u
