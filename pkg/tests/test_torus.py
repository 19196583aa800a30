import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.special import j1

from elastodiel.torus import (
    Field,
    TorusGrid,
    grad,
    inner,
    kernel_part,
    mean,
    project_zero_mean,
    read_field,
    solve_laplacian,
    spectral_divergence,
    spectral_gradient,
    spectral_inner,
    write_field,
)


def disk(grid, center=(0.5, 0.5), r=0.25):
    y = grid.points()
    return Field(grid, (np.sum((y - np.reshape(center, (2, 1, 1))) ** 2, axis=0) < r**2).astype(float))


def test_grid_validation():
    with pytest.raises(ValueError):
        TorusGrid(2, 12)
    with pytest.raises(ValueError):
        TorusGrid(4, 16)
    with pytest.raises(ValueError):
        TorusGrid(2, 4)


def test_gradient_of_constant_vanishes():
    g = TorusGrid(2, 16)
    assert np.abs(spectral_gradient(Field.constant(g, 3.7)).values).max() < 1e-13


@pytest.mark.parametrize("n", [16, 32, 64])
def test_gradient_of_single_mode(n):
    g = TorusGrid(2, n)
    y = g.points()
    d = spectral_gradient(Field(g, np.sin(2 * np.pi * y[0]))).values
    assert np.abs(d[0] - 2 * np.pi * np.cos(2 * np.pi * y[0])).max() <= 1e-12
    assert np.abs(d[1]).max() <= 1e-12


def test_gradient_3d_single_mode():
    g = TorusGrid(3, 16)
    y = g.points()
    d = grad(np.cos(2 * np.pi * y[2]), g)
    assert np.abs(d[2] + 2 * np.pi * np.sin(2 * np.pi * y[2])).max() <= 1e-12


def test_indicator_gradient_pairs_like_a_distribution():
    # <grad 1_D, v> = -int_D div v; for v = (sin 2 pi y1, 0) the right side is -2 pi int_D cos(2 pi y1)
    exact = -2 * np.pi * (-0.25 * j1(np.pi / 2))
    errs_spec, errs_fd = [], []
    for n in (32, 64, 128, 256):
        g = TorusGrid(2, n)
        ind = disk(g)
        v = np.zeros((2,) + g.shape)
        v[0] = np.sin(2 * np.pi * g.points()[0])
        spec = inner(spectral_gradient(ind), Field(g, v))
        fd = np.mean((np.roll(ind.values, -1, 0) - np.roll(ind.values, 1, 0)) / (2 * g.h) * v[0])
        errs_spec.append(abs(spec - exact))
        errs_fd.append(abs(fd - spec))
    # both discrete pairings approach the distributional value at least like 1/n
    for errs in (errs_spec, errs_fd):
        assert errs[-1] < errs[0] / 4
        assert errs[-1] * 256 < 2.0


def test_mean_trivial_cases():
    g = TorusGrid(2, 32)
    assert mean(Field.constant(g, 2.5)) == pytest.approx(2.5, abs=1e-15)
    assert abs(mean(Field(g, np.sin(2 * np.pi * g.points()[0])))) < 1e-15


def test_mean_of_disk_indicator():
    errs = []
    for n in (64, 128, 256):
        errs.append(abs(mean(disk(TorusGrid(2, n))) - np.pi / 16))
    assert errs[-1] < 4.0 / 256
    assert mean(disk(TorusGrid(2, 256))) == pytest.approx(0.19635, abs=2e-3)


def test_project_zero_mean_examples():
    g = TorusGrid(2, 16)
    y = g.points()
    assert np.abs(project_zero_mean(Field.constant(g, 5.0)).values).max() < 1e-15
    f = Field(g, np.cos(2 * np.pi * y[1]))
    np.testing.assert_allclose(project_zero_mean(f).values, f.values, atol=1e-15)
    np.testing.assert_allclose(project_zero_mean(Field(g, 1 + np.cos(2 * np.pi * y[1]))).values, f.values,
                               atol=1e-14)


def test_field_is_read_only_and_checks_shape():
    g = TorusGrid(2, 8)
    f = Field(g, np.zeros((2, 8, 8)))
    assert f.rank == "vector" and f.components == (2,)
    with pytest.raises(ValueError):
        f.values[0, 0, 0] = 1.0
    with pytest.raises(ValueError):
        Field(g, np.zeros((8, 4)))
    with pytest.raises(ValueError):
        Field(g, np.full((8, 8), np.nan))


@pytest.mark.parametrize("suffix", [".csv", ".bin"])
@pytest.mark.parametrize("comps", [(), (2,), (2, 2)])
def test_field_roundtrip(tmp_path, suffix, comps):
    g = TorusGrid(2, 8, side=2.0)
    rng = np.random.default_rng(0)
    f = Field(g, rng.standard_normal(comps + g.shape))
    path = tmp_path / f"f{suffix}"
    write_field(path, f)
    back = read_field(path)
    assert back.grid == g
    np.testing.assert_array_equal(back.values, f.values)


def test_poisson_on_single_mode():
    g = TorusGrid(2, 16)
    y = g.points()
    psi = solve_laplacian(np.cos(2 * np.pi * y[0]), g)
    assert np.abs(psi + np.cos(2 * np.pi * y[0]) / (4 * np.pi**2)).max() < 1e-14


def test_kernel_part_holds_constant_and_alternating_modes():
    g = TorusGrid(2, 8)
    i = np.indices(g.shape)
    alt = (-1.0) ** (i[0] + i[1])
    np.testing.assert_allclose(kernel_part(2.0 + alt, g), 2.0 + alt, atol=1e-14)
    assert np.abs(kernel_part(np.sin(2 * np.pi * g.points()[0]), g)).max() < 1e-14


fields8 = arrays(np.float64, (8, 8), elements=st.floats(-10, 10, allow_nan=False, width=64))


@settings(max_examples=30, deadline=None)
@given(fields8, fields8, fields8)
def test_gradient_is_minus_adjoint_of_divergence(u, v0, v1):
    g = TorusGrid(2, 8)
    fu = Field(g, u)
    fv = Field(g, np.stack([v0, v1]))
    lhs = inner(spectral_gradient(fu), fv)
    rhs = -inner(fu, spectral_divergence(fv))
    assert lhs == pytest.approx(rhs, abs=1e-9 * (1 + np.abs(u).max() * np.abs(fv.values).max()))


@settings(max_examples=30, deadline=None)
@given(fields8, fields8)
def test_parseval_and_projection(u, v):
    g = TorusGrid(2, 8)
    fu, fv = Field(g, u), Field(g, v)
    assert spectral_inner(fu, fv) == pytest.approx(inner(fu, fv), abs=1e-9 * (1 + np.abs(u).max() * np.abs(v).max()))
    p = project_zero_mean(fu)
    np.testing.assert_allclose(project_zero_mean(p).values, p.values, atol=1e-12)
    assert abs(mean(p)) < 1e-12


@settings(max_examples=30, deadline=None)
@given(fields8)
def test_laplacian_solve_inverts_on_range(u):
    g = TorusGrid(2, 8)
    r = u - kernel_part(u, g)
    psi = solve_laplacian(u, g)
    lap = spectral_divergence(spectral_gradient(Field(g, psi))).values
    np.testing.assert_allclose(lap, r, atol=1e-9 * (1 + np.abs(u).max()))
