"""Independent reference constructions shared by the unit and acceptance tests."""

import numpy as np


def rank_one_laminate_strains(L1, L2, f1, n, E):
    """Phase strains ``E + sym(c_k (x) n)`` with continuous traction and zero mean jump."""
    dim = len(n)

    def strain_map(c):
        return 0.5 * (np.outer(c, n) + np.outer(n, c))

    A = np.zeros((2 * dim, 2 * dim))
    b = np.zeros(2 * dim)
    for k in range(dim):
        ek = np.eye(dim)[k]
        A[:dim, k] = np.einsum("ijkl,kl,j->i", L1, strain_map(ek), n)
        A[:dim, dim + k] = -np.einsum("ijkl,kl,j->i", L2, strain_map(ek), n)
    b[:dim] = np.einsum("ijkl,kl,j->i", L2 - L1, E, n)
    A[dim:, :dim] = f1 * np.eye(dim)
    A[dim:, dim:] = (1 - f1) * np.eye(dim)
    c = np.linalg.solve(A, b)
    return E + strain_map(c[:dim]), E + strain_map(c[dim:])


# scalar manufactured solution sin(pi x) sin(pi y) for div(A grad phi) = s
def scalar_exact(x):
    return np.sin(np.pi * x[0]) * np.sin(np.pi * x[1])


def scalar_source(A):
    def s(x):
        ss = np.sin(np.pi * x[0]) * np.sin(np.pi * x[1])
        cc = np.cos(np.pi * x[0]) * np.cos(np.pi * x[1])
        return -np.pi**2 * (A[0, 0] + A[1, 1]) * ss + np.pi**2 * (A[0, 1] + A[1, 0]) * cc
    return s


# vector manufactured solution for isotropic stiffness (lame, shear)
def elastic_exact(x):
    return np.stack([np.sin(np.pi * x[0]) * np.sin(np.pi * x[1]), np.sin(2 * np.pi * x[0]) * np.sin(np.pi * x[1])])


def elastic_body_force(lame, shear):
    def f(x):
        u = elastic_exact(x)
        lap = np.stack([-2 * np.pi**2 * u[0], -5 * np.pi**2 * u[1]])
        ddx = -np.pi**2 * np.sin(np.pi * x[0]) * np.sin(np.pi * x[1]) \
            + 2 * np.pi**2 * np.cos(2 * np.pi * x[0]) * np.cos(np.pi * x[1])
        ddy = np.pi**2 * np.cos(np.pi * x[0]) * np.cos(np.pi * x[1]) \
            - np.pi**2 * np.sin(2 * np.pi * x[0]) * np.sin(np.pi * x[1])
        return -(shear * lap + (lame + shear) * np.stack([ddx, ddy]))
    return f


def harmonic_exponential(A):
    """``Re exp(x_1 + beta x_2)`` with ``A22 beta^2 + 2 A12 beta + A11 = 0``, so ``div(A grad phi) = 0``."""
    A = 0.5 * (A + A.T)
    beta = complex(-A[0, 1], np.sqrt(A[0, 0] * A[1, 1] - A[0, 1] ** 2)) / A[1, 1]

    def phi(x):
        return np.real(np.exp(x[0] + beta * x[1]))
    return phi


def orders(errors, ratio=2.0):
    e = np.asarray(errors, float)
    return np.log(e[:-1] / e[1:]) / np.log(ratio)
