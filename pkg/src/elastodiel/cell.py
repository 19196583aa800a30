"""Periodic cell problems solved by a Fourier-Galerkin scheme.

Coefficients multiply in physical space; derivatives are spectral.  Every
linear system is symmetric positive definite on zero-mean fields and is
solved by conjugate gradients preconditioned with the exact inverse of the
constant reference-medium operator (arithmetic mean of the phase tensors).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ContrastError, ConvergenceError, EllipticityError, NonNeutralChargeError
from .microstructure import ChargeFamily, Coefficients, to_mandel
from .torus import Field, TorusGrid, _spectral, div, fft, grad, ifft, kernel_part, solve_laplacian, sym

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 10_000
MAX_CONTRAST = 1e6


@dataclass
class SolveReport:
    iterations: int
    residual: float  # relative preconditioned residual at exit
    plain_residual: float  # relative l2 residual of the discrete equations
    history: list = field(default_factory=list)


def pcg(apply_a, apply_p, b, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, label="cell problem"):
    """Preconditioned conjugate gradients from a zero initial guess."""
    x = np.zeros_like(b)
    r = b.copy()
    z = apply_p(r)
    rz = float(np.vdot(r, z))
    rz0 = rz
    history = [1.0]
    bnorm = float(np.linalg.norm(b))
    if rz0 <= 0 or bnorm == 0:
        return x, SolveReport(0, 0.0, 0.0, history)
    p = z.copy()
    for it in range(1, max_iter + 1):
        ap = apply_a(p)
        alpha = rz / float(np.vdot(p, ap))
        x += alpha * p
        r -= alpha * ap
        z = apply_p(r)
        rz_new = float(np.vdot(r, z))
        res = np.sqrt(max(rz_new, 0.0) / rz0)
        history.append(res)
        if res <= tol:
            plain = float(np.linalg.norm(b - apply_a(x))) / bnorm
            return x, SolveReport(it, res, plain, history)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise ConvergenceError(f"{label}: no convergence after {max_iter} iterations (residual {history[-1]:.3e})",
                           history)


# -- coefficient checks ------------------------------------------------------

def phase_values(coef: Field) -> np.ndarray:
    """Distinct pointwise values of a coefficient field, shape ``(k, *components)``."""
    comps = coef.components
    flat = coef.values.reshape((-1, coef.grid.size)).T
    uniq = np.unique(flat, axis=0)
    return uniq.reshape((-1,) + comps)


def reference_medium(coef: Field) -> np.ndarray:
    return phase_values(coef).mean(axis=0)


def check_permittivity(eps: Field):
    vals = phase_values(eps)
    eig = np.linalg.eigvalsh(0.5 * (vals + np.swapaxes(vals, 1, 2)))
    if eig.min() <= 0:
        raise EllipticityError("permittivity field is not positive definite")
    if eig.max() / eig.min() > MAX_CONTRAST:
        raise ContrastError(f"permittivity contrast {eig.max() / eig.min():.3g} exceeds {MAX_CONTRAST:g}")


def check_elasticity(L: Field):
    eig = np.concatenate([np.linalg.eigvalsh(to_mandel(v)) for v in phase_values(L)])
    if eig.min() <= 0:
        raise EllipticityError("elasticity field is not positive definite on symmetric matrices")
    if eig.max() / eig.min() > MAX_CONTRAST:
        raise ContrastError(f"elasticity contrast {eig.max() / eig.min():.3g} exceeds {MAX_CONTRAST:g}")


# -- operators ---------------------------------------------------------------

def _scalar_operator(eps: Field):
    grid = eps.grid
    e = eps.values
    xi, xi2 = _spectral(grid)
    e0 = reference_medium(eps)
    symbol = np.einsum("a...,ab,b...->...", xi, e0, xi)
    inv = np.zeros_like(symbol)
    np.divide(1.0, symbol, out=inv, where=xi2 > 0)

    def apply_a(u):
        return -div(np.einsum("ab...,b...->a...", e, grad(u, grid)), grid)

    def apply_p(r):
        return ifft(fft(r, grid) * inv, grid)

    return apply_a, apply_p


def _elastic_operator(L: Field):
    grid = L.grid
    Lv = L.values
    xi, xi2 = _spectral(grid)
    L0 = reference_medium(L)
    acoustic = np.einsum("abcd,b...,d...->...ac", L0, xi, xi)
    safe = np.where((xi2 > 0)[..., None, None], acoustic, np.eye(grid.dim))
    inv = np.linalg.inv(safe)
    inv[xi2 == 0] = 0.0
    inv = np.moveaxis(inv, (-2, -1), (0, 1))

    def apply_a(u):
        return -div(np.einsum("abcd...,cd...->ab...", Lv, sym(grad(u, grid))), grid)

    def apply_p(r):
        return ifft(np.einsum("ac...,c...->a...", inv, fft(r, grid)), grid)

    return apply_a, apply_p


def _zero_mean(u, grid):
    return u - np.mean(u, axis=grid.axes, keepdims=True)


# -- single solves -----------------------------------------------------------

def solve_periodic_poisson(g: Field):
    """Zero-mean ``psi`` with ``Laplace psi = g``; returns ``(psi, tau, report)``.

    The residual is measured against the part of ``g`` that the discrete
    Laplacian can reach; the sign-alternating kernel modes are reported
    separately in ``report.history`` (single entry, their relative norm).
    """
    grid = g.grid
    scale = max(float(np.abs(g.values).max()), 1.0)
    if abs(float(np.mean(g.values))) > 1e-10 * scale:
        raise NonNeutralChargeError(f"charge has mean {np.mean(g.values):.3e}; it must vanish")
    psi = _zero_mean(solve_laplacian(g.values, grid), grid)
    tau = grad(psi, grid)
    reach = g.values - kernel_part(g.values, grid)
    gnorm = float(np.linalg.norm(reach))
    res = float(np.linalg.norm(div(tau, grid) - reach)) / gnorm if gnorm > 0 else 0.0
    knorm = float(np.linalg.norm(g.values - reach)) / max(float(np.linalg.norm(g.values)), 1e-300)
    return Field(grid, psi), Field(grid, tau), SolveReport(0, res, res, [knorm])


def solve_dielectric_corrector(eps: Field, j: int, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Corrector ``chi_j``; returns ``(chi_j, grad w_j, report)`` with ``grad w_j = e_j + grad chi_j``."""
    grid = eps.grid
    check_permittivity(eps)
    apply_a, apply_p = _scalar_operator(eps)
    rhs = div(eps.values[:, j], grid)
    chi, rep = pcg(apply_a, apply_p, rhs, tol, max_iter, f"dielectric corrector {j}")
    chi = _zero_mean(chi, grid)
    gw = grad(chi, grid)
    gw[j] += 1.0
    return Field(grid, chi), Field(grid, gw), rep


def solve_charge_corrector(eps: Field, g, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, tau: Optional[Field] = None):
    """Zero-mean ``theta`` with ``div eps grad theta = g``; returns ``(theta, sigma, report)``.

    ``sigma = eps grad theta - tau`` with ``tau`` the gradient of the
    periodic Poisson potential of ``g`` (computed if not supplied).
    """
    gf = g.g if isinstance(g, ChargeFamily) else g
    grid = gf.grid
    scale = max(float(np.abs(gf.values).max()), 1.0)
    if abs(float(np.mean(gf.values))) > 1e-10 * scale:
        raise NonNeutralChargeError(f"charge has mean {np.mean(gf.values):.3e}; it must vanish")
    check_permittivity(eps)
    apply_a, apply_p = _scalar_operator(eps)
    rhs = -(gf.values - kernel_part(gf.values, grid))
    theta, rep = pcg(apply_a, apply_p, rhs, tol, max_iter, "charge corrector")
    theta = _zero_mean(theta, grid)
    if tau is None:
        _, tau, _ = solve_periodic_poisson(gf)
    flux = np.einsum("ab...,b...->a...", eps.values, grad(theta, grid))
    return Field(grid, theta), Field(grid, flux - tau.values), rep


def solve_elastic_corrector(L: Field, i: int, j: int, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Corrector ``X_ij``; returns ``(X_ij, grad W_ij, report)`` with ``grad W_ij = e_i (x) e_j + grad X_ij``."""
    grid = L.grid
    check_elasticity(L)
    apply_a, apply_p = _elastic_operator(L)
    load = np.zeros((grid.dim, grid.dim))
    load[i, j] = 1.0
    load = 0.5 * (load + load.T)
    rhs = div(np.einsum("abcd...,cd->ab...", L.values, load), grid)
    X, rep = pcg(apply_a, apply_p, rhs, tol, max_iter, f"elastic corrector {i}{j}")
    X = _zero_mean(X, grid)
    gW = grad(X, grid)
    gW[i, j] += 1.0
    return Field(grid, X), Field(grid, gW), rep


# -- full cell solution ------------------------------------------------------

@dataclass
class CellSolution:
    grid: TorusGrid
    coefficients: Coefficients
    families: tuple
    chi: tuple  # N scalar fields
    grad_w: np.ndarray  # (N, N, *shape): grad_w[j] = e_j + grad chi_j
    psi: tuple  # per family
    tau: tuple  # per family, vector fields
    theta: tuple  # per family
    sigma: tuple  # per family, eps grad theta - tau
    X: dict  # (i, j) with i <= j -> vector field
    grad_W: Optional[np.ndarray]  # (N, N, N, N, *shape): grad_W[i, j] = e_i (x) e_j + grad X_ij
    reports: dict

    @property
    def dim(self):
        return self.grid.dim

    def corrector_X(self, i, j):
        return self.X[(min(i, j), max(i, j))]

    def max_residual(self):
        return max((r.residual for r in self.reports.values()), default=0.0)


def solve_cell(coefficients: Coefficients, families: Sequence[ChargeFamily] = (), tol=DEFAULT_TOL,
               max_iter=DEFAULT_MAX_ITER, threads: int = 1, elastic: Optional[bool] = None) -> CellSolution:
    """All correctors for one microstructure; independent solves may run on a thread pool."""
    eps = coefficients.eps
    grid = eps.grid
    dim = grid.dim
    if elastic is None:
        elastic = coefficients.L is not None
    if elastic and coefficients.L is None:
        raise ValueError("elastic correctors requested without an elasticity field")
    families = tuple(families)
    pairs = [(i, j) for i in range(dim) for j in range(i, dim)] if elastic else []

    def dielectric(j):
        return solve_dielectric_corrector(eps, j, tol, max_iter)

    def charge(p):
        psi, tau, prep = solve_periodic_poisson(families[p].g)
        theta, sigma, rep = solve_charge_corrector(eps, families[p].g, tol, max_iter, tau)
        return psi, tau, prep, theta, sigma, rep

    def elastic_pair(ij):
        return solve_elastic_corrector(coefficients.L, *ij, tol, max_iter)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        d_out = list(pool.map(dielectric, range(dim)))
        c_out = list(pool.map(charge, range(len(families))))
        e_out = list(pool.map(elastic_pair, pairs))

    reports = {}
    for j, (_, _, rep) in enumerate(d_out):
        reports[f"chi_{j}"] = rep
    for p, out in enumerate(c_out):
        reports[f"psi_{p}"] = out[2]
        reports[f"theta_{p}"] = out[5]
    X = {}
    grad_W = None
    if elastic:
        grad_W = np.zeros((dim,) * 4 + grid.shape)
        for (i, j), (Xij, gW, rep) in zip(pairs, e_out):
            X[(i, j)] = Xij
            reports[f"X_{i}{j}"] = rep
            # loading sym(e_i (x) e_j) gives the same corrector for (i, j) and (j, i)
            for a, b in {(i, j), (j, i)}:
                g = gW.values.copy()
                g[i, j] -= 1.0
                g[a, b] += 1.0
                grad_W[a, b] = g
    return CellSolution(
        grid=grid,
        coefficients=coefficients,
        families=families,
        chi=tuple(o[0] for o in d_out),
        grad_w=np.stack([o[1].values for o in d_out]),
        psi=tuple(o[0] for o in c_out),
        tau=tuple(o[1] for o in c_out),
        theta=tuple(o[3] for o in c_out),
        sigma=tuple(o[4] for o in c_out),
        X=X,
        grad_W=grad_W,
        reports=reports,
    )
