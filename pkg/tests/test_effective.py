import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from elastodiel.cell import solve_cell
from elastodiel.effective import (
    crossing_lambda,
    effective_tensors,
    enhanced_permittivity,
    enhancement_sweep,
    rayleigh_quotient,
)
from elastodiel.errors import FormulaMismatchError
from elastodiel.microstructure import (
    ChargeSpec,
    Inclusion,
    Material,
    PhaseGeometry,
    PhaseTensors,
    assemble_coefficients,
    build_charge_family,
    build_indicator,
    isotropic_elasticity,
    isotropic_electrostriction,
)
from elastodiel.torus import Field, TorusGrid

from oracles import rank_one_laminate_strains

L_A = isotropic_elasticity(1.0, 1.0, 2)
M_A = isotropic_electrostriction(0.5, 1.0, 2)


def homogeneous(n=32, eps=1.0, charge=None):
    g = TorusGrid(2, n)
    ind = Field(g, np.zeros(g.shape))
    mat = Material(eps * np.eye(2), L_A, M_A)
    coef = assemble_coefficients(PhaseTensors(mat, mat), ind)
    fams = []
    if charge is not None:
        fams = [build_charge_family(ChargeSpec("analytic", function=charge), PhaseGeometry(2), g)]
    return solve_cell(coef, fams, tol=1e-12)


def cos_charge(y):
    return np.cos(2 * np.pi * y[0])


def disk_cell(n=64, contrast=5.0):
    g = TorusGrid(2, n)
    geo = PhaseGeometry(2, (Inclusion((0.5, 0.5), 0.25, 0.4),))
    coef = assemble_coefficients(PhaseTensors(Material(np.eye(2)), Material(contrast * np.eye(2))),
                                 build_indicator(geo, g))
    return g, geo, coef


def test_homogeneous_limits():
    sol = homogeneous(eps=2.5, charge=cos_charge)
    eff = effective_tensors(sol)
    np.testing.assert_array_equal(eff.eps_h, 2.5 * np.eye(2))
    assert np.abs(eff.a).max() < 1e-15
    np.testing.assert_allclose(eff.L_h, L_A, atol=1e-14)
    np.testing.assert_allclose(eff.M_h, M_A, atol=1e-14)
    assert np.abs(eff.N_h).max() < 1e-14


def test_single_mode_kappa_and_P():
    eff = effective_tensors(homogeneous(eps=1.0, charge=cos_charge))
    assert eff.kappa[0, 0] == pytest.approx(1 / (8 * np.pi**2), abs=1e-8)
    e1 = np.diag([1.0, 0.0])
    np.testing.assert_allclose(eff.P_h[0, 0], np.einsum("ijkl,kl->ij", M_A, e1) / (8 * np.pi**2), atol=1e-12)
    assert eff.certificates["kappa"]["energy_identity_discrepancy"] < 1e-10


def test_zero_charge_kappa_vanishes():
    eff = effective_tensors(homogeneous(charge=lambda y: 0.0 * y[0]))
    assert eff.kappa[0, 0] == 0.0


def test_laminate_permittivity():
    g = TorusGrid(2, 256)
    ind = build_indicator(PhaseGeometry(2, levelset=lambda y: np.where(y[0] >= 0.5, -1.0, 1.0)), g)
    coef = assemble_coefficients(PhaseTensors(Material(np.eye(2)), Material(3 * np.eye(2))), ind)
    eff = effective_tensors(solve_cell(coef, tol=1e-10))
    np.testing.assert_allclose(eff.eps_h, np.diag([1.5, 2.0]), atol=1.5e-3)


def test_laminate_elasticity_rank_one():
    g = TorusGrid(2, 256)
    ind = build_indicator(PhaseGeometry(2, levelset=lambda y: np.where(y[0] >= 0.5, -1.0, 1.0)), g)
    L2 = isotropic_elasticity(4.0, 2.0, 2)
    coef = assemble_coefficients(PhaseTensors(Material(np.eye(2), L_A), Material(np.eye(2), L2)), ind)
    eff = effective_tensors(solve_cell(coef, tol=1e-10))
    expected = np.zeros((2,) * 4)
    for k in range(2):
        for h in range(2):
            E = np.zeros((2, 2))
            E[k, h] = 1.0
            E = 0.5 * (E + E.T)
            e1, e2 = rank_one_laminate_strains(L_A, L2, 0.5, np.array([1.0, 0.0]), E)
            expected[:, :, k, h] = 0.5 * (np.einsum("ijab,ab->ij", L_A, e1) + np.einsum("ijab,ab->ij", L2, e2))
    assert np.abs(eff.L_h - expected).max() <= 5e-3 * np.abs(expected).max()
    assert eff.certificates["L_h"]["major_symmetry_residual"] <= 1e-8


def test_charge_coupling_linear_in_amplitude():
    g, geo, coef = disk_cell()
    fam = build_charge_family(ChargeSpec("coating", index=0), geo, g)
    a1 = effective_tensors(solve_cell(coef, [fam], tol=1e-11)).a
    eff3 = effective_tensors(solve_cell(coef, [fam.scaled(3.0)], tol=1e-11))
    np.testing.assert_allclose(eff3.a, 3.0 * a1, rtol=1e-8, atol=1e-12)
    k1 = effective_tensors(solve_cell(coef, [fam], tol=1e-11)).kappa
    np.testing.assert_allclose(eff3.kappa, 9.0 * k1, rtol=1e-8)


def test_triple_formula_certificate():
    g, geo, coef = disk_cell(128)
    fams = [build_charge_family(ChargeSpec("coating", index=p), geo, g) for p in range(2)]
    eff = effective_tensors(solve_cell(coef, fams, tol=1e-10))
    cert = eff.certificates["a"]
    assert cert["triple_formula_discrepancy"] < 1e-6
    assert cert["flux_discrepancy"] < 1e-6


def test_formula_mismatch_raised_on_loose_solves():
    g, geo, coef = disk_cell(64, contrast=50.0)
    fam = build_charge_family(ChargeSpec("coating", index=0), geo, g)
    sol = solve_cell(coef, [fam], tol=1e-1)
    with pytest.raises(FormulaMismatchError):
        effective_tensors(sol)


def test_enhancement_trivial_cases():
    eps_h = np.array([[2.0, 0.3], [0.3, 1.0]])
    a = -np.array([[1.0, 0.2], [0.2, 0.5]])
    et, rep = enhanced_permittivity(eps_h, a, 0.0)
    np.testing.assert_array_equal(et, eps_h)
    xi = np.array([0.3, -1.2])
    lams = np.linspace(0, 5, 11)
    q = [rayleigh_quotient(enhanced_permittivity(eps_h, a, lam)[0], xi) for lam in lams]
    np.testing.assert_allclose(np.diff(q), np.diff(q)[0], rtol=1e-12)
    assert np.diff(q)[0] > 0
    rows = enhancement_sweep(eps_h, a, [-10.0, -4.0, -2.0, -1.0, 0.0])
    mins = [r["sym_eig_min"] for r in rows]
    assert np.all(np.diff(mins) > 0)
    assert [r["elliptic"] for r in rows] == [m > 0 for m in mins]
    assert not rows[0]["elliptic"] and rows[-1]["elliptic"]
    lam = crossing_lambda(eps_h, a)
    assert lam is not None
    assert np.linalg.eigvalsh(eps_h - lam * a).min() > np.linalg.eigvalsh(eps_h).max()
    assert np.linalg.eigvalsh(eps_h - lam / 2 * a).min() <= np.linalg.eigvalsh(eps_h).max() * (1 + 1e-9)


@settings(max_examples=8, deadline=None)
@given(st.floats(0.05, 20.0), st.floats(0.1, 0.3), st.floats(0.2, 0.8), st.floats(0.2, 0.8))
def test_voigt_reuss_bracket(contrast, r, cx, cy):
    g = TorusGrid(2, 32)
    geo = PhaseGeometry(2, (Inclusion((cx, cy), r),))
    ind = build_indicator(geo, g)
    coef = assemble_coefficients(PhaseTensors(Material(np.eye(2)), Material(contrast * np.eye(2))), ind)
    eff = effective_tensors(solve_cell(coef, tol=1e-10))
    f = ind.values.mean()
    upper = (1 - f) + f * contrast
    lower = 1.0 / ((1 - f) + f / contrast)
    eig = np.linalg.eigvalsh(eff.eps_h)
    assert lower * (1 - 1e-8) <= eig.min() and eig.max() <= upper * (1 + 1e-8)
    assert eff.certificates["eps_h"]["symmetry_residual"] < 1e-8
