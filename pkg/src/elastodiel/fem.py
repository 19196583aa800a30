"""Trilinear (Q1) finite elements on uniform box meshes with elementwise-constant coefficients.

Global matrices are assembled directly into their stencil diagonals, which
keeps assembly memory at a few node-sized arrays even for million-node
meshes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import SingularSystemError

FINE_TOL = 1e-9


@dataclass(frozen=True)
class Q1Mesh:
    dim: int
    n: int  # elements per axis
    side: float = 1.0

    @property
    def h(self):
        return self.side / self.n

    @property
    def node_shape(self):
        return (self.n + 1,) * self.dim

    @property
    def element_shape(self):
        return (self.n,) * self.dim

    @property
    def num_nodes(self):
        return (self.n + 1) ** self.dim

    def nodes(self):
        x = np.linspace(0.0, self.side, self.n + 1)
        return np.stack(np.meshgrid(*([x] * self.dim), indexing="ij"))

    def centers(self):
        x = (np.arange(self.n) + 0.5) * self.h
        return np.stack(np.meshgrid(*([x] * self.dim), indexing="ij"))

    def boundary(self):
        mask = np.ones(self.node_shape, dtype=bool)
        mask[(slice(1, -1),) * self.dim] = False
        return mask


@lru_cache(maxsize=4)
def reference_integrals(dim):
    """Corner offsets ``o`` (``(2^N, N)``), ``G[a, b, i, j] = int d_i N_a d_j N_b`` and ``B[a, i] = int d_i N_a`` on the unit cube."""
    offsets = np.array(list(itertools.product((0, 1), repeat=dim)))
    gauss = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
    pts = np.array(list(itertools.product(gauss, repeat=dim)))  # equal weights 2^-N
    nb = len(offsets)
    dN = np.zeros((len(pts), nb, dim))
    for q, xi in enumerate(pts):
        for a, o in enumerate(offsets):
            factors = np.where(o == 1, xi, 1.0 - xi)
            for i in range(dim):
                dN[q, a, i] = (2 * o[i] - 1) * np.prod(np.delete(factors, i))
    w = 0.5**dim
    G = w * np.einsum("qai,qbj->abij", dN, dN)
    B = w * dN.sum(axis=0)
    return offsets, G, B


def _stencil_matrix(mesh: Q1Mesh, contributions):
    """Sparse matrix from ``{(o_a, o_b): elementwise values}`` pair contributions."""
    n1 = mesh.n + 1
    strides = np.array([n1 ** (mesh.dim - 1 - k) for k in range(mesh.dim)])
    diags = {}
    for (oa, ob), vals in contributions.items():
        s = tuple(np.subtract(ob, oa))
        arr = diags.setdefault(s, np.zeros(mesh.node_shape))
        arr[tuple(slice(o, o + mesh.n) for o in oa)] += vals
    data, offsets = [], []
    for s, arr in sorted(diags.items()):
        k = int(np.dot(s, strides))
        flat = arr.ravel()
        data.append(flat[: flat.size - k] if k >= 0 else flat[-k:])
        offsets.append(k)
    return sp.diags(data, offsets, shape=(mesh.num_nodes,) * 2, format="csr")


def assemble_scalar(mesh: Q1Mesh, coef):
    """Stiffness of ``-div(coef grad .)`` with ``coef`` of shape ``(N, N, *elements)``."""
    offsets, G, _ = reference_integrals(mesh.dim)
    scale = mesh.h ** (mesh.dim - 2)
    contrib = {}
    for a, b in itertools.product(range(len(offsets)), repeat=2):
        vals = scale * np.einsum("ij,ij...->...", G[a, b], coef)
        key = (tuple(offsets[a]), tuple(offsets[b]))
        contrib[key] = contrib.get(key, 0.0) + vals
    return _stencil_matrix(mesh, contrib)


def assemble_vector(mesh: Q1Mesh, stiffness):
    """Stiffness of ``-div(C sym grad .)`` with ``C`` of shape ``(N, N, N, N, *elements)``; unknowns are component-major."""
    offsets, G, _ = reference_integrals(mesh.dim)
    scale = mesh.h ** (mesh.dim - 2)
    dim = mesh.dim
    blocks = [[None] * dim for _ in range(dim)]
    for c in range(dim):
        for d in range(dim):
            contrib = {}
            for a, b in itertools.product(range(len(offsets)), repeat=2):
                vals = scale * np.einsum("ij,ij...->...", G[a, b], stiffness[c, :, d, :])
                key = (tuple(offsets[a]), tuple(offsets[b]))
                contrib[key] = contrib.get(key, 0.0) + vals
            blocks[c][d] = _stencil_matrix(mesh, contrib)
    return sp.bmat(blocks, format="csr")


def load_scalar(mesh: Q1Mesh, s):
    """Nodal vector ``int s N_a`` for an elementwise-constant ``s``."""
    offsets, _, _ = reference_integrals(mesh.dim)
    out = np.zeros(mesh.node_shape)
    w = mesh.h**mesh.dim / len(offsets)
    for o in offsets:
        out[tuple(slice(k, k + mesh.n) for k in o)] += w * s
    return out.ravel()


def load_divergence(mesh: Q1Mesh, Z):
    """Nodal vector ``-int Z : grad N_a e_c`` for an elementwise-constant matrix field ``Z`` (component-major)."""
    offsets, _, B = reference_integrals(mesh.dim)
    scale = mesh.h ** (mesh.dim - 1)
    out = np.zeros((mesh.dim,) + mesh.node_shape)
    for a, o in enumerate(offsets):
        sl = (slice(None),) + tuple(slice(k, k + mesh.n) for k in o)
        out[sl] -= scale * np.einsum("i,ci...->c...", B[a], Z)
    return out.reshape(-1)


def element_gradient(mesh: Q1Mesh, u):
    """Gradient of the Q1 interpolant at element centers; appends a derivative axis after the components."""
    lead = np.ndim(u) - mesh.dim
    out = []
    for i in range(mesh.dim):
        acc = 0.0
        for o in itertools.product((0, 1), repeat=mesh.dim - 1):
            hi = list(o[:i]) + [1] + list(o[i:])
            lo = list(o[:i]) + [0] + list(o[i:])
            sh = (Ellipsis,) + tuple(slice(k, k + mesh.n) for k in hi)
            sl = (Ellipsis,) + tuple(slice(k, k + mesh.n) for k in lo)
            acc = acc + (u[sh] - u[sl])
        out.append(acc / (mesh.h * 2 ** (mesh.dim - 1)))
    return np.stack(out, axis=lead)


def rigid_modes(mesh: Q1Mesh, mask):
    """Translations and infinitesimal rotations restricted to the nodes in ``mask`` (component-major)."""
    x = mesh.nodes().reshape(mesh.dim, -1)[:, mask.ravel()]
    dim, m = mesh.dim, x.shape[1]
    modes = []
    for c in range(dim):
        v = np.zeros((dim, m))
        v[c] = 1.0
        modes.append(v.ravel())
    for i, j in itertools.combinations(range(dim), 2):
        v = np.zeros((dim, m))
        v[i] = -x[j]
        v[j] = x[i]
        modes.append(v.ravel())
    return np.stack(modes, axis=1)


def solve_dirichlet(K, rhs, free, values, near_nullspace=None, tol=FINE_TOL):
    """Solve ``K x = rhs`` with ``x = values`` off the ``free`` mask, by smoothed-aggregation AMG plus CG."""
    import pyamg

    Kff = K[free][:, free].tocsr()
    b = rhs[free] - K[free][:, ~free] @ values[~free]
    x = values.astype(float).copy()
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0:
        x[free] = 0.0
        return x, 0.0
    ml = pyamg.smoothed_aggregation_solver(Kff, B=near_nullspace, symmetry="symmetric", max_coarse=500)
    xf = ml.solve(b, tol=0.1 * tol, accel="cg", maxiter=1000)
    res = float(np.linalg.norm(Kff @ xf - b)) / bnorm
    if not np.all(np.isfinite(xf)) or res > tol:
        raise SingularSystemError(f"fine-scale solve stalled at relative residual {res:.3e}")
    x[free] = xf
    return x, res
