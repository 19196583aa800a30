"""Periodic grids, sampled fields and spectral calculus on the torus.

Samples sit at voxel midpoints ``(i + 1/2) h`` of a cube of side ``side``.
Arrays are laid out components-first: a vector field on a 2D grid has shape
``(2, n, n)``, a matrix field ``(2, 2, n, n)``.  Derivatives use the Fourier
multiplier ``i xi`` with the Nyquist wavenumber of every axis set to zero, so
the discrete gradient of a real field is real and ``-grad^T`` is exactly the
discrete divergence.
"""

from __future__ import annotations

import functools
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_RANKS = {0: "scalar", 1: "vector", 2: "matrix", 3: "tensor3", 4: "tensor4"}
_RANK_CODES = {name: code for code, name in _RANKS.items()}
_MAGIC = b"EDFIELD1"


@dataclass(frozen=True)
class TorusGrid:
    dim: int
    n: int
    side: float = 1.0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"grid dimension must be 2 or 3, got {self.dim}")
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"resolution must be a power of two >= 8, got {self.n}")
        if not self.side > 0:
            raise ValueError("cell side must be positive")

    @property
    def shape(self):
        return (self.n,) * self.dim

    @property
    def size(self):
        return self.n**self.dim

    @property
    def h(self):
        return self.side / self.n

    @property
    def axes(self):
        return tuple(range(-self.dim, 0))

    def points(self):
        """Midpoint coordinates, shape ``(dim, n, ..., n)``."""
        x = (np.arange(self.n) + 0.5) * self.h
        return np.stack(np.meshgrid(*([x] * self.dim), indexing="ij"))


@functools.lru_cache(maxsize=32)
def _spectral(grid: TorusGrid):
    n = grid.n
    k = np.fft.fftfreq(n, 1.0 / n)
    k[n // 2] = 0.0
    kr = np.fft.rfftfreq(n, 1.0 / n)
    kr[-1] = 0.0
    factor = 2.0 * np.pi / grid.side
    ks = [k] * (grid.dim - 1) + [kr]
    xi = np.stack(np.meshgrid(*ks, indexing="ij")) * factor
    xi2 = np.sum(xi**2, axis=0)
    return xi, xi2


def wavevectors(grid: TorusGrid):
    """Nyquist-zeroed wavevectors on the half-spectrum, and their squared norm."""
    return _spectral(grid)


def fft(u, grid):
    return np.fft.rfftn(u, axes=grid.axes)


def ifft(uh, grid):
    return np.fft.irfftn(uh, s=grid.shape, axes=grid.axes)


def grad(u, grid):
    """Spectral gradient; appends a derivative axis after the component axes."""
    xi, _ = _spectral(grid)
    uh = fft(u, grid)[(Ellipsis, None) + (slice(None),) * grid.dim]
    return ifft(1j * xi * uh, grid)


def div(v, grid):
    """Spectral divergence, contracting the last component axis."""
    xi, _ = _spectral(grid)
    vh = fft(v, grid)
    return ifft(np.sum(1j * xi * vh, axis=-grid.dim - 1), grid)


def solve_laplacian(g, grid):
    """Zero-mean solution of ``div grad psi = g`` on the range of the discrete Laplacian."""
    _, xi2 = _spectral(grid)
    gh = fft(g, grid)
    inv = np.zeros_like(xi2)
    np.divide(-1.0, xi2, out=inv, where=xi2 > 0)
    return ifft(gh * inv, grid)


def kernel_part(g, grid):
    """Component of ``g`` on the kernel of the discrete Laplacian.

    The kernel holds the constant mode and the sign-alternating modes whose
    wavenumbers are 0 or Nyquist along every axis; no spectral derivative
    sees them.
    """
    _, xi2 = _spectral(grid)
    gh = fft(g, grid)
    return ifft(np.where(xi2 > 0, 0.0, gh), grid)


@dataclass(frozen=True)
class Field:
    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).view()
        if v.shape[v.ndim - self.grid.dim:] != self.grid.shape:
            raise ValueError(f"values of shape {v.shape} do not end with grid shape {self.grid.shape}")
        if v.ndim - self.grid.dim not in _RANKS:
            raise ValueError("unsupported field rank")
        if not np.all(np.isfinite(v)):
            raise ValueError("field samples must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def components(self):
        return self.values.shape[: self.values.ndim - self.grid.dim]

    @property
    def rank(self):
        return _RANKS[len(self.components)]

    def __getitem__(self, idx):
        """Index the component axes: ``F[0]`` is the first component field."""
        return Field(self.grid, self.values[idx])

    @classmethod
    def constant(cls, grid, value):
        value = np.asarray(value, dtype=float)
        return cls(grid, np.broadcast_to(value[(...,) + (None,) * grid.dim], value.shape + grid.shape).copy())


def spectral_gradient(f: Field) -> Field:
    return Field(f.grid, grad(f.values, f.grid))


def spectral_divergence(f: Field) -> Field:
    return Field(f.grid, div(f.values, f.grid))


def mean(f: Field):
    """Cell average per component (midpoint quadrature)."""
    m = np.mean(f.values, axis=f.grid.axes)
    return float(m) if np.ndim(m) == 0 else m


def project_zero_mean(f: Field) -> Field:
    m = np.mean(f.values, axis=f.grid.axes, keepdims=True)
    return Field(f.grid, f.values - m)


def inner(f: Field, g: Field) -> float:
    """Discrete L2 inner product ``mean(f . g)`` summed over components."""
    return float(np.mean(np.sum(f.values * g.values, axis=tuple(range(len(f.components))))))


def spectral_inner(f: Field, g: Field) -> float:
    """Same inner product evaluated from Fourier coefficients (Parseval)."""
    grid = f.grid
    fh = np.fft.fftn(f.values, axes=grid.axes)
    gh = np.fft.fftn(g.values, axes=grid.axes)
    total = np.sum(fh * np.conj(gh)).real
    return float(total / grid.size**2)


def sym(a):
    """Symmetric part over the first two component axes."""
    return 0.5 * (a + np.swapaxes(a, 0, 1))


# -- serialization -----------------------------------------------------------

def write_field(path, field: Field):
    """Write a field as ``.csv`` or flat binary (any other suffix).

    Both layouts start with a header (dimension, resolution, rank, side) and
    then list samples grid-point by grid-point in row-major order, all
    components of a point contiguous.
    """
    path = Path(path)
    grid = field.grid
    ncomp = int(np.prod(field.components, dtype=int))
    samples = np.moveaxis(field.values.reshape((ncomp,) + grid.shape), 0, -1).reshape(grid.size, ncomp)
    if path.suffix == ".csv":
        idx = np.indices(grid.shape).reshape(grid.dim, -1).T
        cols = [f"i{k}" for k in range(grid.dim)] + [f"c{k}" for k in range(ncomp)]
        with open(path, "w") as fh:
            fh.write(f"# dimension={grid.dim} resolution={grid.n} rank={field.rank} side={grid.side!r}"
                     f" components={'x'.join(map(str, field.components)) or '1'}\n")
            fh.write(",".join(cols) + "\n")
            for ij, row in zip(idx, samples):
                fh.write(",".join(map(str, ij)) + "," + ",".join(repr(float(x)) for x in row) + "\n")
    else:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            comps = list(field.components) + [0] * (4 - len(field.components))
            fh.write(struct.pack("<4q", grid.dim, grid.n, _RANK_CODES[field.rank], ncomp))
            fh.write(struct.pack("<d", grid.side))
            fh.write(struct.pack("<4q", *comps))
            fh.write(samples.astype("<f8").tobytes())


def read_field(path) -> Field:
    path = Path(path)
    if path.suffix == ".csv":
        with open(path) as fh:
            meta = dict(kv.split("=") for kv in fh.readline()[1:].split())
            fh.readline()
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        dim, n = int(meta["dimension"]), int(meta["resolution"])
        grid = TorusGrid(dim, n, float(meta["side"]))
        comps = () if meta["rank"] == "scalar" else tuple(int(c) for c in meta["components"].split("x"))
        samples = data[:, dim:]
    else:
        raw = path.read_bytes()
        if raw[:8] != _MAGIC:
            raise ValueError(f"{path} is not a field dump")
        dim, n, rank, ncomp = struct.unpack_from("<4q", raw, 8)
        (side,) = struct.unpack_from("<d", raw, 40)
        comps = tuple(c for c in struct.unpack_from("<4q", raw, 48)[:rank])
        grid = TorusGrid(dim, n, side)
        samples = np.frombuffer(raw, dtype="<f8", offset=80).reshape(grid.size, ncomp)
    values = np.moveaxis(samples.reshape(grid.shape + (-1,)), -1, 0).reshape(comps + grid.shape)
    return Field(grid, values)
