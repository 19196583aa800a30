"""Two-phase periodic microstructures, phase tensors and charge families."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import (
    DisconnectedMatrixError,
    EllipticityError,
    OverlapError,
    SupportError,
)
from .torus import Field, TorusGrid, project_zero_mean

SYM_TOL = 1e-10


# -- tensor algebra ----------------------------------------------------------

def isotropic_elasticity(lame: float, shear: float, dim: int) -> np.ndarray:
    """``L e = lame tr(e) I + 2 shear e`` as a rank-4 array."""
    d = np.eye(dim)
    return (lame * np.einsum("ij,kl->ijkl", d, d)
            + shear * (np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d)))


def isotropic_electrostriction(m1: float, m2: float, dim: int) -> np.ndarray:
    """``M (E x E) = m1 |E|^2 I + m2 sym(E x E)``."""
    d = np.eye(dim)
    return (m1 * np.einsum("ij,kl->ijkl", d, d)
            + 0.5 * m2 * (np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d)))


def sym_basis(dim: int) -> list[np.ndarray]:
    """Orthonormal basis of symmetric matrices (Mandel convention)."""
    basis = []
    for i in range(dim):
        e = np.zeros((dim, dim))
        e[i, i] = 1.0
        basis.append(e)
    for i, j in itertools.combinations(range(dim), 2):
        e = np.zeros((dim, dim))
        e[i, j] = e[j, i] = 1.0 / np.sqrt(2.0)
        basis.append(e)
    return basis


def to_mandel(t4: np.ndarray) -> np.ndarray:
    """Matrix of a rank-4 tensor restricted to symmetric matrices."""
    basis = sym_basis(t4.shape[0])
    return np.array([[np.einsum("ij,ijkl,kl->", a, t4, b) for b in basis] for a in basis])


def from_mandel(m: np.ndarray, dim: int) -> np.ndarray:
    basis = sym_basis(dim)
    return sum(m[a, b] * np.einsum("ij,kl->ijkl", basis[a], basis[b])
               for a in range(len(basis)) for b in range(len(basis)))


def minor_symmetry_residual(t4: np.ndarray) -> float:
    scale = max(np.abs(t4).max(), 1e-300)
    return float(max(np.abs(t4 - t4.transpose(1, 0, 2, 3)).max(),
                     np.abs(t4 - t4.transpose(0, 1, 3, 2)).max()) / scale)


def major_symmetry_residual(t4: np.ndarray) -> float:
    scale = max(np.abs(t4).max(), 1e-300)
    return float(np.abs(t4 - t4.transpose(2, 3, 0, 1)).max() / scale)


# -- phases ------------------------------------------------------------------

@dataclass(frozen=True)
class Material:
    """Tensors of a single phase. ``L`` and ``M`` may be omitted for purely dielectric runs."""

    eps: np.ndarray
    L: Optional[np.ndarray] = None
    M: Optional[np.ndarray] = None

    @classmethod
    def isotropic(cls, permittivity, dim, lame=None, shear=None, m1=None, m2=None):
        L = isotropic_elasticity(lame, shear, dim) if shear is not None else None
        M = isotropic_electrostriction(m1 or 0.0, m2 or 0.0, dim) if (m1 is not None or m2 is not None) else None
        return cls(permittivity * np.eye(dim), L, M)

    @property
    def dim(self):
        return np.asarray(self.eps).shape[0]

    def permittivity_eigenvalues(self):
        eps = np.asarray(self.eps, dtype=float)
        if np.abs(eps - eps.T).max() > SYM_TOL * max(np.abs(eps).max(), 1.0):
            raise EllipticityError("permittivity is not symmetric")
        return np.linalg.eigvalsh(eps)

    def elasticity_eigenvalues(self):
        L = np.asarray(self.L, dtype=float)
        if minor_symmetry_residual(L) > SYM_TOL or major_symmetry_residual(L) > SYM_TOL:
            raise EllipticityError("elasticity tensor lacks minor/major symmetries")
        return np.linalg.eigvalsh(to_mandel(L))

    def validate(self):
        if np.min(self.permittivity_eigenvalues()) <= 0:
            raise EllipticityError("permittivity is not positive definite")
        if self.L is not None and np.min(self.elasticity_eigenvalues()) <= 0:
            raise EllipticityError("elasticity tensor is not positive definite on symmetric matrices")
        if self.M is not None and minor_symmetry_residual(np.asarray(self.M, dtype=float)) > SYM_TOL:
            raise EllipticityError("electrostriction tensor lacks minor symmetries")
        return self


@dataclass(frozen=True)
class PhaseTensors:
    matrix: Material
    inclusion: Material
    gamma: Optional[float] = None
    gamma_prime: Optional[float] = None

    def validate(self):
        self.matrix.validate()
        self.inclusion.validate()
        if (self.matrix.L is None) != (self.inclusion.L is None):
            raise EllipticityError("elasticity must be given for both phases or neither")
        if self.gamma is not None or self.gamma_prime is not None:
            eig = np.concatenate([self.matrix.permittivity_eigenvalues(),
                                  self.inclusion.permittivity_eigenvalues()])
            lo = self.gamma if self.gamma is not None else -np.inf
            hi = self.gamma_prime if self.gamma_prime is not None else np.inf
            if eig.min() < lo or eig.max() > hi:
                raise EllipticityError(
                    f"permittivity eigenvalues [{eig.min():.6g}, {eig.max():.6g}] outside declared [{lo}, {hi}]")
        return self

    def swapped(self):
        return PhaseTensors(self.inclusion, self.matrix, self.gamma, self.gamma_prime)


# -- geometry ----------------------------------------------------------------

@dataclass(frozen=True)
class Inclusion:
    center: tuple
    radius: float
    coating: Optional[float] = None  # relative thickness: shell r < |x-c| < r(1+coating)

    @property
    def outer_radius(self):
        return self.radius * (1.0 + (self.coating or 0.0))


@dataclass(frozen=True)
class PhaseGeometry:
    dim: int
    inclusions: tuple = ()
    levelset: Optional[Callable] = None  # y -> values, negative inside the inclusion phase
    side: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "inclusions", tuple(self.inclusions))

    def check_overlaps(self):
        for k, inc in enumerate(self.inclusions):
            if 2 * inc.radius >= self.side:
                raise OverlapError(f"inclusion {k} touches its own periodic image")
        for (a, p), (b, q) in itertools.combinations(enumerate(self.inclusions), 2):
            if periodic_distance(p.center, q.center, self.side) <= p.radius + q.radius:
                raise OverlapError(f"inclusions {a} and {b} intersect under periodicity")


def periodic_offset(y, center, side):
    """Minimum-image displacement ``y - center``; ``y`` has shape ``(dim, ...)``."""
    c = np.asarray(center, dtype=float).reshape((-1,) + (1,) * (np.ndim(y) - 1))
    d = y - c
    return d - side * np.round(d / side)


def periodic_distance(a, b, side):
    d = np.asarray(a, float) - np.asarray(b, float)
    d -= side * np.round(d / side)
    return float(np.linalg.norm(d))


def count_periodic_components(mask: np.ndarray) -> int:
    """Face-connected components of a boolean voxel mask on the torus."""
    labels, count = ndimage.label(mask)
    if count == 0:
        return 0
    parent = list(range(count + 1))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for ax in range(mask.ndim):
        lo = np.take(labels, 0, axis=ax)
        hi = np.take(labels, -1, axis=ax)
        both = (lo > 0) & (hi > 0)
        for u, v in zip(lo[both], hi[both]):
            ru, rv = find(u), find(v)
            if ru != rv:
                parent[ru] = rv
    return len({find(i) for i in range(1, count + 1)})


def build_indicator(geometry: PhaseGeometry, grid: TorusGrid, check_connected: bool = True) -> Field:
    """Voxelized indicator (1 on the inclusion phase) under periodic wrap-around."""
    if abs(geometry.side - grid.side) > 1e-12 * grid.side:
        raise ValueError("geometry and grid cell sides differ")
    geometry.check_overlaps()
    y = grid.points()
    ind = np.zeros(grid.shape, dtype=bool)
    for inc in geometry.inclusions:
        d = periodic_offset(y, inc.center, grid.side)
        ind |= np.sum(d**2, axis=0) < inc.radius**2
    if geometry.levelset is not None:
        ind |= np.asarray(geometry.levelset(y)) < 0
    if check_connected and ind.any():
        ncomp = count_periodic_components(~ind)
        if ncomp != 1:
            raise DisconnectedMatrixError(f"matrix phase has {ncomp} connected components")
    return Field(grid, ind.astype(float))


# -- coefficients ------------------------------------------------------------

@dataclass(frozen=True)
class Coefficients:
    eps: Field
    L: Optional[Field] = None
    M: Optional[Field] = None


def _blend(indicator, inside, outside):
    ind = indicator.values
    a = np.asarray(inside, dtype=float)[(...,) + (None,) * ind.ndim]
    b = np.asarray(outside, dtype=float)[(...,) + (None,) * ind.ndim]
    return Field(indicator.grid, ind * a + (1.0 - ind) * b)


def assemble_coefficients(tensors: PhaseTensors, indicator: Field) -> Coefficients:
    """Pointwise two-valued coefficient fields."""
    if not np.all((indicator.values == 0) | (indicator.values == 1)):
        raise ValueError("indicator must be binary")
    tensors.validate()
    inc, mat = tensors.inclusion, tensors.matrix
    eps = _blend(indicator, inc.eps, mat.eps)
    L = _blend(indicator, inc.L, mat.L) if mat.L is not None else None
    M = None
    if mat.M is not None or inc.M is not None:
        dim = indicator.grid.dim
        zero = np.zeros((dim,) * 4)
        M = _blend(indicator, inc.M if inc.M is not None else zero, mat.M if mat.M is not None else zero)
    return Coefficients(eps, L, M)


def assemble_multiphase(base: Material, phases: Sequence[tuple]) -> Coefficients:
    """Coefficients for several phases; later ``(indicator, Material)`` pairs take precedence."""
    base.validate()
    grid = phases[0][0].grid
    eps = Field.constant(grid, base.eps).values.copy()
    L = Field.constant(grid, base.L).values.copy() if base.L is not None else None
    M = Field.constant(grid, base.M).values.copy() if base.M is not None else None
    for ind, mat in phases:
        mat.validate()
        sel = ind.values.astype(bool)
        eps[..., sel] = np.asarray(mat.eps)[..., None]
        if L is not None:
            L[..., sel] = np.asarray(mat.L)[..., None]
        if M is not None and mat.M is not None:
            M[..., sel] = np.asarray(mat.M)[..., None]
    return Coefficients(Field(grid, eps),
                        Field(grid, L) if L is not None else None,
                        Field(grid, M) if M is not None else None)


# -- charges -----------------------------------------------------------------

def smooth_bump(s):
    """C-infinity bump on (-1, 1), equal to 1 at 0 and vanishing with all derivatives at +-1."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


@dataclass
class ChargeSpec:
    """Recipe for one charge family.

    mode: ``analytic`` (callable of the midpoint coordinates), ``coating``
    (profile confined to the coating shell of every inclusion; ``bump`` or
    ``eshelby``), or ``corrector`` (``amplitude * omega * chi_p`` minus its mean).
    """

    mode: str
    index: Optional[int] = None
    function: Optional[Callable] = None
    profile: str = "bump"
    eps_bar: Optional[float] = None
    amplitude: float = 1.0
    eta: Optional[float] = None
    smooth: bool = True


@dataclass(frozen=True)
class ChargeFamily:
    g: Field
    mode: str
    index: Optional[int] = None
    amplitude: float = 1.0
    smooth: bool = True
    metadata: dict = field(default_factory=dict)

    def scaled(self, factor):
        return ChargeFamily(Field(self.g.grid, factor * self.g.values), self.mode, self.index,
                            self.amplitude * factor, self.smooth, dict(self.metadata))


def _shells(geometry: PhaseGeometry, eta_override=None):
    out = []
    for k, inc in enumerate(geometry.inclusions):
        eta = eta_override if eta_override is not None else inc.coating
        if eta is None or eta <= 0:
            raise SupportError(f"inclusion {k} has no coating thickness (eta > 0 required)")
        out.append((inc, inc.radius * (1.0 + eta)))
    for k, (inc, outer) in enumerate(out):
        if 2 * outer >= geometry.side:
            raise SupportError(f"coating of inclusion {k} exits the cell")
    for (a, (p, rp)), (b, (q, rq)) in itertools.combinations(enumerate(out), 2):
        dist = periodic_distance(p.center, q.center, geometry.side)
        if dist <= rp + q.radius or dist <= rq + p.radius or dist <= rp + rq:
            raise SupportError(f"coating of inclusion {a} or {b} meets the other inclusion")
    return out


def build_charge_family(spec: ChargeSpec, geometry: PhaseGeometry, grid: TorusGrid,
                        correctors: Optional[Sequence[Field]] = None) -> ChargeFamily:
    y = grid.points()
    meta = {}
    if spec.mode == "analytic":
        if spec.function is None:
            raise ValueError("analytic charge needs a function")
        g = spec.amplitude * np.asarray(spec.function(y), dtype=float) * np.ones(grid.shape)
        smooth = spec.smooth
    elif spec.mode == "coating":
        g = np.zeros(grid.shape)
        smooth = spec.profile == "bump"
        for inc, outer in _shells(geometry, spec.eta):
            d = periodic_offset(y, inc.center, grid.side)
            r = np.sqrt(np.sum(d**2, axis=0))
            shell = (r >= inc.radius) & (r < outer)
            if spec.profile == "bump":
                b = smooth_bump((2 * r - inc.radius - outer) / (outer - inc.radius))
                prof = b if spec.index is None else b * d[spec.index] / np.maximum(r, 1e-300)
                weight = b**2
            elif spec.profile == "eshelby":
                if spec.index is None or spec.eps_bar is None:
                    raise ValueError("eshelby coating profile needs index and eps_bar")
                from .dilute import eshelby_corrector
                prof = inc.radius * eshelby_corrector(spec.eps_bar, grid.dim, spec.index, d / inc.radius)
                prof = prof * shell
                weight = shell.astype(float)
            else:
                raise ValueError(f"unknown coating profile {spec.profile!r}")
            wsum = np.sum(weight)
            if wsum == 0:
                raise SupportError("coating shell contains no voxel; refine the grid")
            prof = prof - (np.sum(prof) / wsum) * weight
            g += spec.amplitude * prof
        meta["per_shell_projection"] = "bump-squared weight" if spec.profile == "bump" else "shell indicator"
    elif spec.mode == "corrector":
        if correctors is None or spec.index is None:
            raise ValueError("corrector-weighted charges need solved correctors and an index")
        omega = np.zeros(grid.shape)
        for inc, outer in _shells(geometry, spec.eta if spec.eta is not None else None):
            d = periodic_offset(y, inc.center, grid.side)
            r = np.sqrt(np.sum(d**2, axis=0))
            omega += smooth_bump((2 * r - inc.radius - outer) / (outer - inc.radius))
        g = spec.amplitude * omega * correctors[spec.index].values
        smooth = True
        meta["omega"] = "smooth radial bump on coating shells"
    else:
        raise ValueError(f"unknown charge mode {spec.mode!r}")
    gf = project_zero_mean(Field(grid, g))
    if not smooth:
        meta["regularity"] = "discontinuous profile"
    return ChargeFamily(gf, spec.mode, spec.index, spec.amplitude, smooth, meta)
