"""Dilute spherical inclusions: closed-form single-inclusion formulas and periodic sweeps in the dilution scale.

Cells are handled in their natural units: an inclusion of radius 1 sits at
the center of a periodic cell of side ``ell``, sampled with ``m`` voxels per
unit length (``n = m * ell``).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from math import gamma, log, pi
from typing import Optional, Sequence

import numpy as np

from .cell import solve_cell, solve_charge_corrector, solve_periodic_poisson
from .effective import effective_tensors, electro_coupling
from .errors import FitError, ResolutionError
from .microstructure import (
    ChargeSpec,
    Inclusion,
    Material,
    PhaseGeometry,
    PhaseTensors,
    assemble_coefficients,
    build_charge_family,
    build_indicator,
    periodic_offset,
)
from .torus import TorusGrid

MIN_VOXELS = 16


def contrast_factor(eps_bar, dim):
    return (1.0 - eps_bar) / (eps_bar + dim - 1.0)


def sphere_area(dim):
    """Surface measure of the unit sphere in ``R^dim``."""
    return 2.0 * pi ** (dim / 2) / gamma(dim / 2)


def eshelby_corrector(eps_bar, dim, p, x):
    """Whole-space corrector of a unit inclusion of permittivity ``eps_bar`` in a unit background.

    Outside the unit ball it is ``c x_p / |x|^N``; inside it is the uniform-field
    continuation ``c x_p``; ``c`` is the contrast factor.
    """
    x = np.asarray(x, dtype=float)
    c = contrast_factor(eps_bar, dim)
    r2 = np.sum(x**2, axis=0)
    scale = np.where(r2 >= 1.0, np.maximum(r2, 1.0) ** (-dim / 2), 1.0)
    return c * x[p] * scale


def eshelby_gradient(eps_bar, dim, p, x):
    """Gradient of :func:`eshelby_corrector`, shape ``(dim, ...)``."""
    x = np.asarray(x, dtype=float)
    c = contrast_factor(eps_bar, dim)
    r2 = np.maximum(np.sum(x**2, axis=0), 1e-300)
    outside = r2 >= 1.0
    ep = np.zeros_like(x)
    ep[p] = 1.0
    ext = ep * r2 ** (-dim / 2) - dim * x[p] * x * r2 ** (-dim / 2 - 1)
    return c * np.where(outside, ext, ep)


def abar(eps_bar, eta, dim):
    """Shell integral ``int_{1<|x|<1+eta} chi_p chi_j`` of the whole-space correctors (a multiple of the identity).

    For ``dim == 1`` the shell has two components, giving ``2 eta`` times the
    squared contrast factor.
    """
    if eta <= 0 or eps_bar <= 0:
        raise ValueError("eta and eps_bar must be positive")
    c2 = contrast_factor(eps_bar, dim) ** 2
    if dim == 1:
        s = 2.0 * eta
    elif dim == 2:
        s = pi * log(1.0 + eta)
    else:
        s = sphere_area(dim) / dim * (1.0 - (1.0 + eta) ** (2 - dim))
    return c2 * s * np.eye(dim)


@dataclass
class DiluteStudy:
    ells: Sequence[int] = (4, 8, 16)
    eps_bar: float = 5.0
    eta: float = 0.5
    lambdas: Sequence[float] = ()
    dim: int = 2
    voxels: int = 32  # grid points per unit length (inclusion radius)
    tol: float = 1e-10
    L_matrix: Optional[np.ndarray] = None
    L_inclusion: Optional[np.ndarray] = None
    M_matrix: Optional[np.ndarray] = None
    M_inclusion: Optional[np.ndarray] = None
    threads: int = 1

    def validate(self):
        if len(self.ells) < 2:
            raise ValueError("a dilute study needs at least two dilution scales")
        if self.voxels < MIN_VOXELS:
            raise ResolutionError(f"{self.voxels} voxels per inclusion radius; at least {MIN_VOXELS} are required")
        for ell in self.ells:
            n = self.voxels * ell
            if n & (n - 1):
                raise ResolutionError(f"resolution {n} = voxels * ell must be a power of two")
            if 1.0 + self.eta >= ell / 2:
                raise ValueError(f"coating radius {1 + self.eta} does not fit in a cell of side {ell}")
        return self

    @property
    def elastic(self):
        return self.L_matrix is not None


@dataclass
class DiluteRecord:
    ell: int
    n: int
    eps_h: np.ndarray
    a: np.ndarray  # a[j, p] at unit charge amplitude
    mismatch: float  # |ell^N a + abar| / |abar|
    corrector_distance: float  # L2(B_{1+eta}) distance of the corrector gradients, summed over p
    symmetry_residual: float
    N_unit: Optional[np.ndarray] = None  # (p, N, N, N) for unit charges g_p
    P_unit: Optional[np.ndarray] = None  # (p, N, N) diagonal family products
    N_lambda: dict = field(default_factory=dict)  # lam -> (p, N, N, N), prefactor lam ell^N included
    P_lambda: dict = field(default_factory=dict)  # lam -> (p, N, N), prefactor (lam ell^N)^2 included
    iterations: dict = field(default_factory=dict)

    def enhanced(self, lam):
        """Enhanced permittivity for charges ``lam ell^N g_p``."""
        return self.eps_h - lam * self.ell**self.dim * self.a

    @property
    def dim(self):
        return self.eps_h.shape[0]


def _phases(study: DiluteStudy):
    d = study.dim
    mat = Material(np.eye(d), study.L_matrix, study.M_matrix)
    inc = Material(study.eps_bar * np.eye(d), study.L_inclusion, study.M_inclusion)
    return PhaseTensors(mat, inc)


def dilute_cell(study: DiluteStudy, ell: int) -> DiluteRecord:
    """Full periodic solve for one dilution scale."""
    d = study.dim
    n = study.voxels * ell
    grid = TorusGrid(d, n, float(ell))
    center = (ell / 2.0,) * d
    geo = PhaseGeometry(d, (Inclusion(center, 1.0, study.eta),), side=float(ell))
    coef = assemble_coefficients(_phases(study), build_indicator(geo, grid))
    fams = [build_charge_family(ChargeSpec("coating", index=p, profile="eshelby", eps_bar=study.eps_bar), geo, grid)
            for p in range(d)]
    sol = solve_cell(coef, fams, tol=study.tol, threads=study.threads, elastic=study.elastic)
    eff = effective_tensors(sol)
    ab = abar(study.eps_bar, study.eta, d)
    mismatch = float(np.linalg.norm(ell**d * eff.a + ab) / np.linalg.norm(ab)) if ab.any() else float(
        np.linalg.norm(eff.a))

    x = periodic_offset(grid.points(), center, grid.side)
    ball = np.sum(x**2, axis=0) < (1.0 + study.eta) ** 2
    dist2 = 0.0
    for p in range(d):
        diff = eshelby_gradient(study.eps_bar, d, p, x) - sol.grad_w[p]
        diff[p] += 1.0
        dist2 += float(np.sum(np.sum(diff**2, axis=0) * ball)) * grid.h**d
    asym = float(np.abs(eff.a - eff.a.T).max() / max(np.abs(eff.a).max(), 1e-300))
    rec = DiluteRecord(ell, n, eff.eps_h, eff.a, mismatch, float(np.sqrt(dist2)), asym,
                       iterations={k: r.iterations for k, r in sol.reports.items()})
    if eff.P_h is not None:
        rec.N_unit = eff.N_h
        rec.P_unit = np.stack([eff.P_h[p, p] for p in range(d)])
        for lam in study.lambdas:
            rec.N_lambda[lam], rec.P_lambda[lam] = _scaled_couplings(sol, lam * ell**d, study.tol)
    return rec


def _scaled_couplings(sol, factor, tol):
    """Couplings recomputed from charge correctors solved with the scaled charges ``factor * g_p``."""
    fams, psi, tau, theta, sigma = [], [], [], [], []
    for fam in sol.families:
        f = fam.scaled(factor)
        ps, ta, _ = solve_periodic_poisson(f.g)
        th, sg, _ = solve_charge_corrector(sol.coefficients.eps, f.g, tol, tau=ta)
        fams.append(f)
        psi.append(ps)
        tau.append(ta)
        theta.append(th)
        sigma.append(sg)
    scaled = dataclasses.replace(sol, families=tuple(fams), psi=tuple(psi), tau=tuple(tau), theta=tuple(theta),
                                 sigma=tuple(sigma))
    _, Nh, Ph, _ = electro_coupling(scaled)
    return Nh, np.stack([Ph[p, p] for p in range(len(fams))])


def dilute_sweep(study: DiluteStudy) -> list[DiluteRecord]:
    study.validate()
    return [dilute_cell(study, ell) for ell in study.ells]


# -- scaling fits ------------------------------------------------------------

def loglog_slope(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    if ok.sum() < 3:
        raise FitError(f"need at least 3 positive points for a log-log fit, got {int(ok.sum())}")
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


@dataclass
class ScalingFit:
    lambda_slope_P: dict  # (ell, p) -> slope of |P| vs lambda
    ell_slope_P: dict  # (lambda, p) -> slope of |P| vs ell^N
    lambda_slope_N: dict  # (ell, p) -> slope of |N| vs lambda
    N_ratio: dict  # (ell, p) -> max/min of |N|/lambda over the lambda grid
    normalized_P: dict  # p -> list over ell of (lambda^2 ell^N)^-1 P
    cauchy_differences: dict  # p -> successive norms of differences of normalized_P
    P_infinity: dict  # p -> extrapolated limit


def scaling_study(records: Sequence[DiluteRecord], lambdas: Sequence[float]) -> ScalingFit:
    """Log-log fits of the electrostrictive couplings against the charge amplitude and the dilution scale."""
    if len(lambdas) < 3 or len(records) < 3:
        raise FitError("scaling fits need at least 3 amplitudes and 3 dilution scales")
    if any(r.P_unit is None for r in records):
        raise FitError("records carry no electrostrictive couplings (no elasticity in the study)")
    d = records[0].dim
    lam = np.asarray(lambdas, float)
    out = ScalingFit({}, {}, {}, {}, {}, {}, {})
    for r in records:
        for p in range(d):
            Pn = [np.linalg.norm(r.P_lambda[l][p]) for l in lambdas]
            Nn = [np.linalg.norm(r.N_lambda[l][p]) for l in lambdas]
            out.lambda_slope_P[(r.ell, p)] = loglog_slope(lam, Pn)
            ratios = np.asarray(Nn) / lam
            out.N_ratio[(r.ell, p)] = float(ratios.max() / ratios.min()) if ratios.min() > 0 else float("inf")
            try:
                out.lambda_slope_N[(r.ell, p)] = loglog_slope(lam, Nn)
            except FitError:
                out.lambda_slope_N[(r.ell, p)] = float("nan")
    volume = np.asarray([r.ell**d for r in records], float)
    for l in lambdas:
        for p in range(d):
            out.ell_slope_P[(l, p)] = loglog_slope(volume, [np.linalg.norm(r.P_lambda[l][p]) for r in records])
    l0 = lambdas[0]
    order = d / 2.0
    for p in range(d):
        seq = [r.P_lambda[l0][p] / (l0**2 * r.ell**d) for r in records]
        out.normalized_P[p] = seq
        out.cauchy_differences[p] = [float(np.linalg.norm(b - a)) for a, b in zip(seq, seq[1:])]
        ratio = (records[-1].ell / records[-2].ell) ** order
        out.P_infinity[p] = (ratio * seq[-1] - seq[-2]) / (ratio - 1.0)
    return out
