"""Homogenized tensors assembled from cell solutions, with redundant formulas cross-checked."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cell import CellSolution, phase_values
from .errors import BoundViolationError, FormulaMismatchError, NegativeKappaError
from .microstructure import major_symmetry_residual, to_mandel
from .torus import _spectral, fft, grad, sym

FORMULA_TOL = 1e-6
MISMATCH_FAIL = 1e-4
BOUND_TOL = 1e-6


def _avg(x, grid):
    return np.mean(x, axis=grid.axes)


def _rel(a, b, floor=0.0):
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return 0.0 if scale == 0 else float(np.abs(a - b).max() / scale)


def _bracket_violation(lower, tensor, upper):
    """Largest relative violation of ``lower <= tensor <= upper`` in quadratic-form order."""
    scale = np.abs(upper).max()
    lo = np.linalg.eigvalsh(0.5 * (tensor - lower + (tensor - lower).T)).min()
    hi = np.linalg.eigvalsh(0.5 * (upper - tensor + (upper - tensor).T)).min()
    return float(max(0.0, -lo, -hi) / scale)


# -- permittivity and charge coupling ----------------------------------------

def effective_permittivity(sol: CellSolution):
    """``eps_h e_j = mean(eps grad w_j)``, symmetrized; returns ``(eps_h, certificate)``."""
    grid = sol.grid
    eps = sol.coefficients.eps.values
    flux = np.einsum("ab...,jb...->aj...", eps, sol.grad_w)
    raw = _avg(flux, grid)
    eps_h = 0.5 * (raw + raw.T)
    upper = _avg(eps, grid)
    inv = np.linalg.inv(np.moveaxis(eps, (0, 1), (-2, -1)))
    lower = np.linalg.inv(np.mean(inv.reshape((-1,) + inv.shape[-2:]), axis=0))
    violation = _bracket_violation(lower, eps_h, upper)
    cert = {
        "symmetry_residual": _rel(raw, raw.T),
        "eigenvalues": np.linalg.eigvalsh(eps_h).tolist(),
        "voigt_reuss_violation": violation,
    }
    if violation > BOUND_TOL:
        raise BoundViolationError(f"effective permittivity leaves the Voigt-Reuss bracket by {violation:.3e}")
    return eps_h, cert


def charge_coupling(sol: CellSolution, check=True):
    """Charge-coupling matrix ``a[j, p]`` by three formulas plus the flux check ``b = -a``.

    1. ``mean(tau_p . grad w_j)`` in physical space;
    2. ``mean(grad psi_p . (e_j + grad chi_j))`` from Fourier coefficients;
    3. ``-mean(g_p chi_j)``.
    """
    grid = sol.grid
    dim, nfam = sol.dim, len(sol.families)
    a1 = np.zeros((dim, nfam))
    a2 = np.zeros((dim, nfam))
    a3 = np.zeros((dim, nfam))
    b = np.zeros((dim, nfam))
    _, xi2 = _spectral(grid)
    weight = np.full(xi2.shape, 2.0)
    weight[..., 0] = 1.0
    if grid.n % 2 == 0:
        weight[..., -1] = 1.0
    for p in range(nfam):
        tau = sol.tau[p].values
        psi_h = fft(sol.psi[p].values, grid)
        g = sol.families[p].g.values
        b[:, p] = _avg(sol.sigma[p].values + tau, grid)
        for j in range(dim):
            a1[j, p] = _avg(np.sum(tau * sol.grad_w[j], axis=0), grid)
            chi_h = fft(sol.chi[j].values, grid)
            a2[j, p] = float(np.sum(weight * xi2 * (psi_h * np.conj(chi_h)).real)) / grid.size**2
            a3[j, p] = -_avg(g * sol.chi[j].values, grid)
    # entries at round-off level relative to |tau| |grad w| count as zero
    floor = 1e-12 * max((np.sqrt(np.mean(np.sum(t.values**2, axis=0))) for t in sol.tau), default=0.0) \
        * np.sqrt(np.mean(np.sum(sol.grad_w**2, axis=1)))
    disc = max(_rel(a1, a2, floor), _rel(a1, a3, floor), _rel(a2, a3, floor)) if nfam else 0.0
    b_disc = _rel(b, -a1, floor) if nfam else 0.0
    cert = {"triple_formula_discrepancy": disc, "flux_discrepancy": b_disc,
            "formulas": {"physical": a1.tolist(), "spectral": a2.tolist(), "charge": a3.tolist()},
            "b": b.tolist()}
    if check and max(disc, b_disc) > MISMATCH_FAIL:
        raise FormulaMismatchError(
            f"charge-coupling formulas disagree (triple {disc:.3e}, flux {b_disc:.3e}); refine the grid or tighten tol")
    return a1, cert


def kappa(sol: CellSolution):
    """``kappa[p, q] = mean(tau_p . grad theta_q)``; the diagonal is also checked via the energy identity."""
    grid = sol.grid
    nfam = len(sol.families)
    k = np.zeros((nfam, nfam))
    energy = np.zeros(nfam)
    gtheta = [grad(sol.theta[q].values, grid) for q in range(nfam)]
    for p in range(nfam):
        for q in range(nfam):
            k[p, q] = _avg(np.sum(sol.tau[p].values * gtheta[q], axis=0), grid)
        flux = sol.sigma[p].values + sol.tau[p].values  # eps grad theta_p
        energy[p] = _avg(np.sum(flux * gtheta[p], axis=0), grid)
    disc = max((_rel(k[p, p], energy[p]) for p in range(nfam)), default=0.0)
    for p in range(nfam):
        if np.abs(sol.families[p].g.values).max() > 0 and not (k[p, p] > 0 and energy[p] > 0):
            raise NegativeKappaError(f"kappa for family {p} is {k[p, p]:.3e}; it must be positive")
    cert = {"energy_identity_discrepancy": disc, "energy": energy.tolist(),
            "off_diagonal": "extension: cross-family products"}
    return k, cert


# -- elasticity and electrostriction -----------------------------------------

def _strains(sol: CellSolution):
    """``sym grad W_ij`` for all pairs, shape ``(N, N, N, N, *shape)``."""
    return 0.5 * (sol.grad_W + np.swapaxes(sol.grad_W, 2, 3))


def effective_elasticity(sol: CellSolution):
    """``Lh[i, j, k, h] = mean(L sym grad W_ij . sym grad W_kh)``; returns ``(Lh, certificate)``."""
    grid = sol.grid
    L = sol.coefficients.L.values
    E = _strains(sol)
    stress = np.einsum("abcd...,ijcd...->ijab...", L, E)
    Lh = _avg(np.einsum("ijab...,khab...->ijkh...", stress, E), grid)
    dim = grid.dim
    upper = to_mandel(_avg(L, grid))
    flat = L.reshape(dim**4, -1)
    compliance = 0.0
    for v in phase_values(sol.coefficients.L):
        frac = np.mean(np.all(flat == v.reshape(-1, 1), axis=0))
        compliance = compliance + frac * np.linalg.inv(to_mandel(v))
    lower = np.linalg.inv(compliance)
    violation = _bracket_violation(lower, to_mandel(Lh), upper)
    cert = {
        "major_symmetry_residual": major_symmetry_residual(Lh),
        "minor_symmetry_residual": _rel(Lh, Lh.transpose(1, 0, 2, 3)),
        "eigenvalues": np.linalg.eigvalsh(to_mandel(Lh)).tolist(),
        "voigt_reuss_violation": violation,
    }
    if violation > BOUND_TOL:
        raise BoundViolationError(f"effective elasticity leaves the Voigt-Reuss bracket by {violation:.3e}")
    return Lh, cert


def electro_coupling(sol: CellSolution):
    """Electrostrictive couplings ``(Mh, Nh, Ph, certificate)``.

    ``Nh[p]`` has indices ``(i, j, k)``; ``Ph[p, q]`` has indices ``(i, j)``.
    Arguments of ``M`` are symmetrized before it acts.
    """
    grid = sol.grid
    M = sol.coefficients.M.values
    E = _strains(sol)
    nfam = len(sol.families)
    # M^T sym grad W_ij, contracted later against symmetric arguments
    MW = np.einsum("abcd...,ijab...->ijcd...", M, E)
    gw = sol.grad_w
    ww = sym(np.einsum("ka...,hb...->abkh...", gw, gw))
    Mh = _avg(np.einsum("ijcd...,cdkh...->ijkh...", MW, ww), grid)
    gth = [grad(sol.theta[p].values, grid) for p in range(nfam)]
    Nh = np.zeros((nfam,) + (grid.dim,) * 3)
    Ph = np.zeros((nfam, nfam) + (grid.dim,) * 2)
    for p in range(nfam):
        wt = sym(np.einsum("ka...,b...->abk...", gw, gth[p]))
        Nh[p] = _avg(np.einsum("ijcd...,cdk...->ijk...", MW, wt), grid)
        for q in range(nfam):
            tt = sym(np.einsum("a...,b...->ab...", gth[p], gth[q]))
            Ph[p, q] = _avg(np.einsum("ijcd...,cd...->ij...", MW, tt), grid)
    cert = {
        "M_minor_symmetry_residual": max(_rel(Mh, Mh.transpose(1, 0, 2, 3)), _rel(Mh, Mh.transpose(0, 1, 3, 2))),
        "N_symmetry_residual": max((_rel(n, n.transpose(1, 0, 2)) for n in Nh), default=0.0),
        "P_symmetry_residual": max((_rel(Ph[p, q], Ph[p, q].T) for p in range(nfam) for q in range(nfam)),
                                   default=0.0),
        "P_off_diagonal": "extension: cross-family products",
    }
    return Mh, Nh, Ph, cert


# -- enhancement -------------------------------------------------------------

def enhanced_permittivity(eps_h, a_unit, lam):
    """``eps_h - lam * a_unit`` with its spectral report."""
    et = np.asarray(eps_h) - lam * np.asarray(a_unit)
    eig = np.linalg.eigvals(et)
    sym_eig = np.linalg.eigvalsh(0.5 * (et + et.T))
    report = {
        "eigenvalues": sorted(eig.real.tolist()),
        "symmetric_part_eigenvalues": sym_eig.tolist(),
        "elliptic": bool(sym_eig.min() > 0),
    }
    return et, report


def rayleigh_quotient(tensor, xi):
    xi = np.asarray(xi, dtype=float)
    return float(xi @ np.asarray(tensor) @ xi / (xi @ xi))


def enhancement_sweep(eps_h, a_unit, lambdas, direction=None, margin=1e-9):
    """One row per ``lam``: spectrum of ``eps_h - lam * a_unit`` and whether it dominates ``eps_h``.

    Domination means the smallest eigenvalue of the symmetric part exceeds the
    largest eigenvalue of ``eps_h`` by more than ``margin`` relative.
    """
    top = float(np.linalg.eigvalsh(eps_h).max())
    xi = np.ones(len(eps_h)) if direction is None else np.asarray(direction, float)
    rows = []
    for lam in lambdas:
        et, rep = enhanced_permittivity(eps_h, a_unit, lam)
        rows.append({
            "lambda": float(lam),
            "eig_min": rep["eigenvalues"][0],
            "eig_max": rep["eigenvalues"][-1],
            "sym_eig_min": rep["symmetric_part_eigenvalues"][0],
            "rayleigh": rayleigh_quotient(et, xi),
            "elliptic": rep["elliptic"],
            "exceeds_eps_h": bool(rep["symmetric_part_eigenvalues"][0] > top * (1.0 + margin)),
        })
    return rows


def crossing_lambda(eps_h, a_unit, start=1.0, factor=2.0, max_steps=64):
    """Smallest ``start * factor**k`` at which ``eps_h - lam * a_unit`` exceeds ``eps_h`` in every direction, or ``None``."""
    lam = float(start)
    for _ in range(max_steps):
        if enhancement_sweep(eps_h, a_unit, [lam])[0]["exceeds_eps_h"]:
            return lam
        lam *= factor
    return None


@dataclass
class EffectiveTensors:
    eps_h: np.ndarray
    a: np.ndarray  # (N, families): a[j, p]
    kappa: np.ndarray  # (families, families)
    L_h: Optional[np.ndarray] = None
    M_h: Optional[np.ndarray] = None
    N_h: Optional[np.ndarray] = None  # (families, N, N, N)
    P_h: Optional[np.ndarray] = None  # (families, families, N, N)
    certificates: dict = field(default_factory=dict)

    def enhanced(self, lam=1.0):
        return enhanced_permittivity(self.eps_h, self.a, lam)[0]


def effective_tensors(sol: CellSolution, check=True) -> EffectiveTensors:
    eps_h, c_eps = effective_permittivity(sol)
    certs = {"eps_h": c_eps}
    nfam = len(sol.families)
    if nfam:
        a, c_a = charge_coupling(sol, check)
        k, c_k = kappa(sol)
        certs["a"], certs["kappa"] = c_a, c_k
    else:
        a, k = np.zeros((sol.dim, 0)), np.zeros((0, 0))
    out = EffectiveTensors(eps_h, a, k, certificates=certs)
    if sol.grad_W is not None:
        out.L_h, certs["L_h"] = effective_elasticity(sol)
        if sol.coefficients.M is not None:
            out.M_h, out.N_h, out.P_h, certs["electro"] = electro_coupling(sol)
    certs["solver"] = {name: {"iterations": r.iterations, "residual": r.residual, "plain_residual": r.plain_residual}
                       for name, r in sorted(sol.reports.items())}
    return out
