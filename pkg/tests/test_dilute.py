import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from elastodiel.cell import solve_cell
from elastodiel.dilute import (
    DiluteRecord,
    DiluteStudy,
    abar,
    contrast_factor,
    dilute_cell,
    eshelby_corrector,
    eshelby_gradient,
    loglog_slope,
    scaling_study,
)
from elastodiel.effective import effective_tensors
from elastodiel.errors import FitError, ResolutionError
from elastodiel.microstructure import (
    ChargeSpec,
    Inclusion,
    Material,
    PhaseGeometry,
    PhaseTensors,
    assemble_coefficients,
    build_charge_family,
    isotropic_elasticity,
    isotropic_electrostriction,
)
from elastodiel.torus import Field, TorusGrid


def test_unit_contrast_corrector_vanishes():
    x = np.random.default_rng(1).standard_normal((3, 50)) * 2
    assert not eshelby_corrector(1.0, 3, 0, x).any()
    assert not abar(1.0, 0.7, 2).any()


def test_corrector_value_3d():
    assert eshelby_corrector(5.0, 3, 0, np.array([2.0, 0.0, 0.0])) == pytest.approx(-1 / 7, rel=1e-14)


@pytest.mark.parametrize("dim", [2, 3])
@pytest.mark.parametrize("eps_bar", [0.2, 3.0, 5.0])
def test_corrector_solves_transmission_problem(dim, eps_bar):
    c = contrast_factor(eps_bar, dim)
    # potential x_p + chi_p: inside (1 + c) x_p, outside x_p + c x_p / |x|^N
    for theta in np.linspace(0, np.pi, 7):
        e = np.zeros(dim)
        e[0], e[1] = np.cos(theta), np.sin(theta)
        h = 1e-6
        u = lambda r: r * e[0] + eshelby_corrector(eps_bar, dim, 0, (r * e)[:, None])[0]  # noqa: E731
        d_in = (u(1 - h) - u(1 - 3 * h)) / (2 * h)
        d_out = (u(1 + 3 * h) - u(1 + h)) / (2 * h)
        assert u(1 - 1e-12) == pytest.approx(u(1 + 1e-12), abs=1e-9)
        assert eps_bar * d_in == pytest.approx(d_out, abs=1e-5)
    assert c == pytest.approx((1 - eps_bar) / (eps_bar + dim - 1))


@settings(max_examples=40, deadline=None)
@given(st.floats(1.1, 4.0), st.floats(0, 2 * np.pi), st.floats(0.1, np.pi - 0.1), st.sampled_from([2, 3]),
       st.integers(0, 1))
def test_gradient_matches_finite_differences_and_is_harmonic(r, phi, theta, dim, p):
    if dim == 2:
        x = r * np.array([np.cos(phi), np.sin(phi)])
    else:
        x = r * np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
    h = 1e-5
    grad = eshelby_gradient(5.0, dim, p, x[:, None])[:, 0]
    lap = 0.0
    for k in range(dim):
        e = np.zeros(dim)
        e[k] = h
        fp = eshelby_corrector(5.0, dim, p, (x + e)[:, None])[0]
        fm = eshelby_corrector(5.0, dim, p, (x - e)[:, None])[0]
        f0 = eshelby_corrector(5.0, dim, p, x[:, None])[0]
        assert (fp - fm) / (2 * h) == pytest.approx(grad[k], abs=1e-7)
        lap += (fp - 2 * f0 + fm) / h**2
    assert abs(lap) < 1e-3


def test_abar_closed_forms():
    np.testing.assert_allclose(abar(5.0, 1.0, 3), (16 / 49) * (2 * np.pi / 3) * np.eye(3), rtol=1e-14)
    np.testing.assert_allclose(abar(3.0, 1.0, 2), 0.25 * np.pi * np.log(2) * np.eye(2), rtol=1e-14)
    # the rounded values quoted for these two cases
    assert abar(5.0, 1.0, 3)[0, 0] == pytest.approx(0.68385, rel=1e-3)
    assert abar(3.0, 1.0, 2)[0, 0] == pytest.approx(0.54432, rel=1e-3)
    assert abar(3.0, 0.5, 1)[0, 0] == pytest.approx(2 * 0.5 * contrast_factor(3.0, 1) ** 2)


@pytest.mark.parametrize("dim,eps_bar,eta", [(2, 5.0, 0.5), (2, 3.0, 1.0), (3, 5.0, 1.0), (3, 0.5, 0.3)])
def test_abar_matches_shell_quadrature(dim, eps_bar, eta):
    def integrand_2d(r, t, p, j):
        x = r * np.array([np.cos(t), np.sin(t)])
        return eshelby_corrector(eps_bar, 2, p, x[:, None])[0] * eshelby_corrector(eps_bar, 2, j, x[:, None])[0] * r

    def integrand_3d(r, t, ph, p, j):
        x = r * np.array([np.sin(t) * np.cos(ph), np.sin(t) * np.sin(ph), np.cos(t)])
        val = eshelby_corrector(eps_bar, 3, p, x[:, None])[0] * eshelby_corrector(eps_bar, 3, j, x[:, None])[0]
        return val * r**2 * np.sin(t)

    for p, j in [(0, 0), (0, 1), (1, 1)]:
        if dim == 2:
            val, _ = integrate.dblquad(lambda r, t: integrand_2d(r, t, p, j), 0, 2 * np.pi, 1, 1 + eta)
        else:
            val, _ = integrate.tplquad(lambda r, t, ph: integrand_3d(r, t, ph, p, j), 0, 2 * np.pi, 0, np.pi, 1,
                                       1 + eta, epsabs=1e-10)
        assert val == pytest.approx(abar(eps_bar, eta, dim)[p, j], abs=1e-7)


def test_study_validation():
    with pytest.raises(ResolutionError):
        DiluteStudy(voxels=8).validate()
    with pytest.raises(ResolutionError):
        DiluteStudy(ells=(3, 6), voxels=16).validate()
    with pytest.raises(ValueError):
        DiluteStudy(ells=(2, 4), voxels=16, eta=0.5).validate()


def test_unit_contrast_gives_zero_coupling():
    study = DiluteStudy(ells=(4, 8), eps_bar=1.0, voxels=16).validate()
    for ell in study.ells:
        rec = dilute_cell(study, ell)
        assert np.abs(rec.a).max() < 1e-14
        assert rec.mismatch < 1e-14


def test_charge_doubling_quadruples_P():
    study = DiluteStudy(ells=(4, 8), voxels=16, lambdas=(1.0, 2.0), L_matrix=isotropic_elasticity(1, 1, 2),
                        L_inclusion=isotropic_elasticity(3, 3, 2), M_matrix=isotropic_electrostriction(0.5, 1, 2),
                        M_inclusion=isotropic_electrostriction(0.2, 0.4, 2)).validate()
    rec = dilute_cell(study, 4)
    for p in range(2):
        r = np.linalg.norm(rec.P_lambda[2.0][p]) / np.linalg.norm(rec.P_lambda[1.0][p])
        assert r == pytest.approx(4.0, rel=1e-6)
        n = np.linalg.norm(rec.N_lambda[2.0][p]) / np.linalg.norm(rec.N_lambda[1.0][p])
        assert n == pytest.approx(2.0, rel=1e-6)


def test_homogeneous_medium_has_no_N():
    ell = 4
    g = TorusGrid(2, 64, float(ell))
    geo = PhaseGeometry(2, (Inclusion((2.0, 2.0), 1.0, 0.5),), side=float(ell))
    mat = Material(np.eye(2), isotropic_elasticity(1, 1, 2), isotropic_electrostriction(0.5, 1.0, 2))
    coef = assemble_coefficients(PhaseTensors(mat, mat), Field(g, np.zeros(g.shape)))
    fams = [build_charge_family(ChargeSpec("coating", index=p, profile="eshelby", eps_bar=5.0), geo, g)
            for p in range(2)]
    eff = effective_tensors(solve_cell(coef, fams, tol=1e-11))
    assert np.abs(eff.N_h).max() < 1e-13
    assert np.abs(eff.P_h).max() > 1e-6


def test_loglog_slope():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    assert loglog_slope(x, 3 * x**1.7) == pytest.approx(1.7, abs=1e-12)
    with pytest.raises(FitError):
        loglog_slope(x[:2], x[:2])


def test_scaling_study_on_synthetic_records():
    P_inf = np.array([[1.0, 0.2], [0.2, 0.5]])
    C = np.array([[0.3, 0.0], [0.0, -0.1]])
    lams = (1.0, 2.0, 4.0)
    recs = []
    for ell in (4, 8, 16):
        normalized = P_inf + C * ell ** (-1.0)  # order N/2 with N = 2
        rec = DiluteRecord(ell, 64, np.eye(2), np.zeros((2, 2)), 0.0, 0.0, 0.0)
        rec.P_unit = np.stack([normalized] * 2)
        for lam in lams:
            rec.P_lambda[lam] = np.stack([lam**2 * ell**2 * normalized] * 2)
            rec.N_lambda[lam] = np.stack([lam * np.ones((2, 2, 2))] * 2)
        recs.append(rec)
    fit = scaling_study(recs, lams)
    for (ell, p), s in fit.lambda_slope_P.items():
        assert s == pytest.approx(2.0, abs=1e-12)
        assert fit.N_ratio[(ell, p)] == pytest.approx(1.0)
    np.testing.assert_allclose(fit.P_infinity[0], P_inf, atol=1e-12)
    d = fit.cauchy_differences[0]
    assert d[1] < d[0]
