"""Corrector-weighted charges on a disk: spectrum of the enhanced permittivity against the amplitude."""

import argparse

import numpy as np

from elastodiel.cell import solve_cell
from elastodiel.effective import crossing_lambda, effective_tensors, enhancement_sweep
from elastodiel.microstructure import (
    ChargeSpec,
    Inclusion,
    Material,
    PhaseGeometry,
    PhaseTensors,
    assemble_coefficients,
    build_charge_family,
    build_indicator,
)
from elastodiel.torus import TorusGrid


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=128)
    ap.add_argument("--contrast", type=float, default=5.0)
    ap.add_argument("--lambdas", type=float, nargs="+", default=[0, 1, 10, 100, 1000, 10000])
    args = ap.parse_args()

    grid = TorusGrid(2, args.n)
    geo = PhaseGeometry(2, (Inclusion((0.5, 0.5), 0.25, 0.4),))
    coef = assemble_coefficients(PhaseTensors(Material(np.eye(2)), Material(args.contrast * np.eye(2))),
                                 build_indicator(geo, grid))
    chi = solve_cell(coef, (), 1e-10, elastic=False).chi
    fams = [build_charge_family(ChargeSpec("corrector", index=p), geo, grid, chi) for p in range(2)]
    eff = effective_tensors(solve_cell(coef, fams, 1e-10))
    print("eps_h =", np.round(eff.eps_h, 6).tolist())
    print("a     =", eff.a.tolist())
    for row in enhancement_sweep(eff.eps_h, eff.a, args.lambdas):
        print(f"lambda={row['lambda']:>9g} eig=[{row['eig_min']:.6f}, {row['eig_max']:.6f}] "
              f"rayleigh={row['rayleigh']:.6f} exceeds={row['exceeds_eps_h']}")
    print("first doubling amplitude past eps_h:", crossing_lambda(eff.eps_h, eff.a))


if __name__ == "__main__":
    main()
