"""Finite-period experiments: solve the oscillating problems on a box and compare with the two-scale expansion.

The box ``[0, 1]^N`` is tiled by ``1/delta`` copies of the periodic cell and
meshed with Q1 elements whose centers are exactly the cell sample points, so
coefficients, charges and corrector gradients are sampled without
interpolation.  The homogenized problems are solved by the finite-difference
macro solvers on the same nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .cell import CellSolution
from .effective import EffectiveTensors
from .errors import GridMismatchError, MemoryBudgetError
from .fem import (
    Q1Mesh,
    assemble_scalar,
    assemble_vector,
    element_gradient,
    load_divergence,
    load_scalar,
    rigid_modes,
    solve_dirichlet,
)
from .macro import BoxGrid, MacroProblem, assemble_Z, solve_elastic_bvp, solve_scalar_bvp
from .microstructure import PhaseTensors
from .torus import Field, grad

DEFAULT_CAPS = {2: 2048, 3: 256}


@dataclass
class TwoScaleProblem:
    """Fine-scale problem data.

    ``modulation[p]`` multiplies the charge family ``p``: the fine source is
    ``sum_p g_p(x / delta) f_p(x) / delta``.
    """

    cell: CellSolution
    tensors: EffectiveTensors
    indicator: Field
    phases: PhaseTensors
    boundary: Callable
    modulation: Sequence[Callable] = ()
    modulation_grad: Optional[Sequence[Callable]] = None
    boundary_layer: bool = True
    include_theta: bool = True
    elastic: bool = True
    q_values: tuple = (2, 4, 8)
    caps: dict = field(default_factory=lambda: dict(DEFAULT_CAPS))


@dataclass
class FineScaleRecord:
    delta: float
    n_total: int
    corrector_error: dict  # q -> global L^q error of the full expansion
    corrector_error_local: dict  # q -> same on the concentric half-side box
    naive_error: dict  # q -> |grad phi_delta - grad phi|
    error_without_theta: dict  # q -> expansion without the charge corrector
    grad_norm: dict  # q -> |grad phi_delta|_{L^q}
    elastic_error: Optional[float] = None  # |u_delta - u|_{L^2}
    residuals: dict = field(default_factory=dict)
    boundary_layer_elements: int = 0


def cells_per_side(delta, cell_n):
    k = int(round(1.0 / delta))
    if k < 1 or abs(k * delta - 1.0) > 1e-12:
        raise GridMismatchError(f"1/delta = {1.0 / delta:g} is not an integer; the box cannot be tiled")
    return k


def fine_mesh(problem: TwoScaleProblem, delta) -> Q1Mesh:
    grid = problem.cell.grid
    if abs(grid.side - 1.0) > 1e-12:
        raise GridMismatchError("two-scale runs need correctors on the unit cell")
    k = cells_per_side(delta, grid.n)
    n_total = k * grid.n
    cap = problem.caps.get(grid.dim, DEFAULT_CAPS[grid.dim])
    if n_total > cap:
        raise MemoryBudgetError(f"fine grid {n_total}^{grid.dim} exceeds the cap {cap} per axis")
    return Q1Mesh(grid.dim, n_total)


def _tile(values, k, dim):
    lead = values.ndim - dim
    return np.tile(values, (1,) * lead + (k,) * dim)


def boundary_inclusions(indicator, dim):
    """Inclusion voxels of the tiled box belonging to components that touch the box boundary."""
    labels, count = ndimage.label(indicator > 0.5)
    if count == 0:
        return np.zeros(indicator.shape, dtype=bool)
    touching = set()
    for ax in range(dim):
        touching.update(np.unique(np.take(labels, 0, axis=ax)))
        touching.update(np.unique(np.take(labels, -1, axis=ax)))
    touching.discard(0)
    return np.isin(labels, list(touching))


def fine_coefficients(problem: TwoScaleProblem, delta):
    """Tiled ``(eps, L, M)`` on the fine elements, with boundary-touching inclusions turned into matrix phase if requested."""
    grid = problem.cell.grid
    dim = grid.dim
    k = cells_per_side(delta, grid.n)
    coef = problem.cell.coefficients
    eps = _tile(coef.eps.values, k, dim)
    L = _tile(coef.L.values, k, dim) if (problem.elastic and coef.L is not None) else None
    M = _tile(coef.M.values, k, dim) if (problem.elastic and coef.M is not None) else None
    frame = np.zeros(eps.shape[-dim:], dtype=bool)
    if problem.boundary_layer:
        frame = boundary_inclusions(_tile(problem.indicator.values, k, dim), dim)
        if frame.any():
            mat = problem.phases.matrix
            eps[..., frame] = np.asarray(mat.eps)[..., None]
            if L is not None:
                L[..., frame] = np.asarray(mat.L)[..., None]
            if M is not None:
                M[..., frame] = (np.asarray(mat.M) if mat.M is not None else np.zeros((dim,) * 4))[..., None]
    return eps, L, M, frame


def _modulations(problem, x):
    return np.stack([np.broadcast_to(f(x), x.shape[1:]) for f in problem.modulation]) if len(problem.modulation) \
        else np.zeros((0,) + x.shape[1:])


def solve_fine_dielectric(problem: TwoScaleProblem, delta, eps=None):
    """Fine potential at the mesh nodes; returns ``(mesh, phi, residual)``."""
    mesh = fine_mesh(problem, delta)
    k = cells_per_side(delta, problem.cell.grid.n)
    dim = mesh.dim
    if eps is None:
        eps = fine_coefficients(problem, delta)[0]
    f = _modulations(problem, mesh.centers())
    s = np.zeros(mesh.element_shape)
    for p, fam in enumerate(problem.cell.families[: len(f)]):
        s += _tile(fam.g.values, k, dim) * f[p] / delta
    K = assemble_scalar(mesh, eps)
    # div(eps grad phi) = s  <=>  K phi = -int s v
    rhs = -load_scalar(mesh, s)
    free = ~mesh.boundary().ravel()
    values = np.broadcast_to(problem.boundary(mesh.nodes()), mesh.node_shape).ravel()
    phi, res = solve_dirichlet(K, rhs, free, values)
    return mesh, phi.reshape(mesh.node_shape), res


def solve_fine_elastic(problem: TwoScaleProblem, delta, mesh, phi, L, M):
    """Fine displacement with ``div(L grad u + M(grad phi (x) grad phi)) = 0`` and ``u = 0`` on the boundary."""
    E = element_gradient(mesh, phi)
    Z = np.einsum("ijkh...,k...,h...->ij...", M, E, E) if M is not None else np.zeros((mesh.dim,) * 2 + E.shape[1:])
    K = assemble_vector(mesh, L)
    rhs = load_divergence(mesh, Z)
    interior = ~mesh.boundary()
    free = np.tile(interior.ravel(), mesh.dim)
    u, res = solve_dirichlet(K, rhs, free, np.zeros(free.size), near_nullspace=rigid_modes(mesh, interior))
    return u.reshape((mesh.dim,) + mesh.node_shape), res


def homogenized_potential(problem: TwoScaleProblem, grid: BoxGrid):
    t = problem.tensors
    nfam = len(problem.modulation)
    mp = MacroProblem(grid, t.eps_h, problem.boundary, a=t.a[:, :nfam] if nfam else None,
                      modulation=list(problem.modulation) if nfam else None,
                      modulation_grad=problem.modulation_grad)
    return solve_scalar_bvp(mp)


def homogenized_displacement(problem: TwoScaleProblem, grid: BoxGrid, phi):
    t = problem.tensors
    nfam = len(problem.modulation)
    f = _modulations(problem, grid.nodes())
    N_h = t.N_h[:nfam] if (t.N_h is not None and nfam) else None
    P_h = t.P_h[:nfam, :nfam] if (t.P_h is not None and nfam) else None
    Z = assemble_Z(t.M_h, N_h, P_h, grid.gradient(phi), f)
    return solve_elastic_bvp(grid, t.L_h, Z)


def _lq(vec, q, vol, mask=None):
    mag = np.sqrt(np.sum(vec**2, axis=0))
    if mask is not None:
        mag = mag[mask]
    return float((np.sum(mag**q) * vol) ** (1.0 / q))


def corrector_expansion(problem: TwoScaleProblem, delta, mesh, grad_phi_hom, include_theta=True):
    """``sum_j (e_j + grad chi_j(x/delta)) d_j phi + sum_p grad theta_p(x/delta) f_p`` at element centers."""
    cell = problem.cell
    k = cells_per_side(delta, cell.grid.n)
    dim = mesh.dim
    out = np.einsum("ja...,j...->a...", _tile(cell.grad_w, k, dim), grad_phi_hom)
    if include_theta and len(problem.modulation):
        f = _modulations(problem, mesh.centers())
        for p in range(len(f)):
            gth = grad(cell.theta[p].values, cell.grid)
            out = out + _tile(gth, k, dim) * f[p]
    return out


def run_delta(problem: TwoScaleProblem, delta) -> FineScaleRecord:
    eps, L, M, frame = fine_coefficients(problem, delta)
    mesh, phi_d, res_phi = solve_fine_dielectric(problem, delta, eps)
    grid = BoxGrid(mesh.dim, mesh.n)
    hom = homogenized_potential(problem, grid)
    vol = mesh.h**mesh.dim
    g_fine = element_gradient(mesh, phi_d)
    g_hom = element_gradient(mesh, hom.phi)
    full = g_fine - corrector_expansion(problem, delta, mesh, g_hom, True)
    bare = g_fine - corrector_expansion(problem, delta, mesh, g_hom, False)
    c = mesh.centers()
    local = np.all((c > 0.25) & (c < 0.75), axis=0)
    qs = problem.q_values
    rec = FineScaleRecord(
        delta=delta,
        n_total=mesh.n,
        corrector_error={q: _lq(full, q, vol) for q in qs},
        corrector_error_local={q: _lq(full, q, vol, local) for q in qs},
        naive_error={q: _lq(g_fine - g_hom, q, vol) for q in qs},
        error_without_theta={q: _lq(bare, q, vol) for q in qs},
        grad_norm={q: _lq(g_fine, q, vol) for q in qs},
        residuals={"fine_dielectric": res_phi, "homogenized_dielectric": hom.residual},
        boundary_layer_elements=int(frame.sum()),
    )
    if problem.elastic and L is not None and problem.tensors.L_h is not None:
        u_d, res_u = solve_fine_elastic(problem, delta, mesh, phi_d, L, M)
        u_h = homogenized_displacement(problem, grid, hom.phi)
        rec.elastic_error = float(np.sqrt(np.sum((u_d - u_h.u) ** 2) * vol))
        rec.residuals.update(fine_elastic=res_u, homogenized_elastic=u_h.residual)
    return rec


def run_study(problem: TwoScaleProblem, deltas: Sequence[float]) -> list[FineScaleRecord]:
    """One record per ``delta``; fine solves run one at a time to respect the memory budget."""
    for d in deltas:
        fine_mesh(problem, d)
    return [run_delta(problem, d) for d in deltas]


def convergence_rows(records: Sequence[FineScaleRecord]):
    """Flat rows for the convergence table."""
    rows = []
    for r in records:
        row = {"delta": r.delta, "n_total": r.n_total}
        for q in sorted(r.corrector_error):
            row[f"naive_L{q}"] = r.naive_error[q]
            row[f"corrector_L{q}"] = r.corrector_error[q]
            row[f"corrector_local_L{q}"] = r.corrector_error_local[q]
            row[f"without_theta_L{q}"] = r.error_without_theta[q]
            row[f"grad_norm_L{q}"] = r.grad_norm[q]
        row["elastic_L2"] = r.elastic_error if r.elastic_error is not None else float("nan")
        rows.append(row)
    return rows
