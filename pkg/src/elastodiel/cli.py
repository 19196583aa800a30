"""Batch front-end: ``elastodiel <subcommand> --config run.toml --output-dir out``.

Subcommands: ``cell`` (correctors and homogenized tensors), ``enhance``
(active-charge enhancement sweep), ``dilute`` (dilution sweep and scaling
fits), ``macro`` (homogenized boundary-value problems) and ``verify``
(finite-period two-scale study).  Failures write ``error.json`` and exit
with 2 (configuration), 3 (solver) or 4 (resource cap).
"""

from __future__ import annotations

import argparse
import logging
import sys
import traceback
from pathlib import Path

import numpy as np

from . import io
from .cell import solve_cell
from .config import RunConfig, SolverConfig, expression, load_config
from .dilute import DiluteStudy, dilute_sweep, scaling_study
from .effective import crossing_lambda, effective_tensors, enhancement_sweep
from .errors import ConfigError, ElastodielError
from .macro import BoxGrid, MacroProblem, assemble_Z, solve_elastic_bvp, solve_scalar_bvp
from .microstructure import (
    ChargeSpec,
    assemble_coefficients,
    build_charge_family,
    build_indicator,
    isotropic_elasticity,
    isotropic_electrostriction,
)
from .torus import TorusGrid, write_field
from .twoscale import TwoScaleProblem, convergence_rows, run_study

log = logging.getLogger("elastodiel")
PACKAGE_DIR = Path(__file__).resolve().parent


# -- pipelines ---------------------------------------------------------------

def _family_spec(fam: dict) -> ChargeSpec:
    mode = fam["mode"]
    amp = float(fam.get("amplitude", 1.0))
    if mode == "analytic":
        return ChargeSpec("analytic", function=expression(fam["expression"]), amplitude=amp)
    return ChargeSpec(mode, index=fam.get("index"), profile=fam.get("profile", "bump"), eps_bar=fam.get("eps_bar"),
                      amplitude=amp, eta=fam.get("eta"))


def build_cell(cfg: RunConfig, threads=1):
    """Geometry, coefficients, charge families and the solved cell; returns a dict of the pieces."""
    gcfg, scfg = cfg.geometry, cfg.solver or SolverConfig()
    grid = TorusGrid(gcfg.dim, scfg.resolution)
    geo = gcfg.build()
    phases = cfg.phase_tensors()
    indicator = build_indicator(geo, grid, check_connected=gcfg.connected_check)
    coef = assemble_coefficients(phases, indicator)
    specs = [_family_spec(f) for f in (cfg.charge.families if cfg.charge else [])]
    correctors = None
    if any(s.mode == "corrector" for s in specs):
        log.info("solving dielectric correctors for corrector-weighted charges")
        correctors = solve_cell(coef, (), scfg.tol, scfg.max_iter, threads, elastic=False).chi
    families = [build_charge_family(s, geo, grid, correctors) for s in specs]
    log.info("solving cell problems at n=%d with %d charge families", grid.n, len(families))
    sol = solve_cell(coef, families, scfg.tol, scfg.max_iter, threads, elastic=scfg.elastic)
    eff = effective_tensors(sol)
    return {"grid": grid, "geometry": geo, "phases": phases, "indicator": indicator, "solution": sol, "tensors": eff}


def _diagnostics(sol):
    return [{"problem": name, "iterations": r.iterations, "residual": r.residual, "plain_residual": r.plain_residual}
            for name, r in sorted(sol.reports.items())]


def _dump_fields(cfg: RunConfig, sol, out: Path):
    ext = ".csv" if cfg.output.format == "csv" else ".bin"
    groups = {"chi": sol.chi, "psi": sol.psi, "theta": sol.theta, "tau": sol.tau, "sigma": sol.sigma}
    for name in cfg.output.fields:
        if name in groups:
            for k, f in enumerate(groups[name]):
                write_field(out / f"{name}_{k}{ext}", f)
        elif name == "indicator":
            pass
        elif name not in ("phi", "u"):
            raise ConfigError(f"unknown field {name!r} in output.fields")


def run_cell(cfg: RunConfig, out: Path, threads=1):
    c = build_cell(cfg, threads)
    io.write_json(out / "tensors.json", io.tensors_document(c["tensors"], cfg.sha256))
    io.write_csv(out / "diagnostics.csv", _diagnostics(c["solution"]))
    _dump_fields(cfg, c["solution"], out)
    if "indicator" in cfg.output.fields:
        write_field(out / ("indicator.csv" if cfg.output.format == "csv" else "indicator.bin"), c["indicator"])
    return c


def run_enhance(cfg: RunConfig, out: Path, threads=1):
    c = build_cell(cfg, threads)
    eff = c["tensors"]
    if eff.a.shape[0] != eff.a.shape[1]:
        raise ConfigError(f"'enhance' needs one charge family per direction ({eff.a.shape[0]}), got {eff.a.shape[1]}")
    rows = enhancement_sweep(eff.eps_h, eff.a, cfg.charge.lambdas, cfg.charge.direction)
    a_sym = 0.5 * (eff.a + eff.a.T)
    report = {
        "a_symmetry_residual": float(np.abs(eff.a - eff.a.T).max() / max(np.abs(eff.a).max(), 1e-300)),
        "a_eigenvalues": np.linalg.eigvalsh(a_sym),
        "crossing_lambda_in_sweep": next((r["lambda"] for r in rows if r["exceeds_eps_h"]), None),
        "crossing_lambda_doubling": crossing_lambda(eff.eps_h, eff.a, start=max(min(cfg.charge.lambdas), 1e-6)),
    }
    io.write_json(out / "tensors.json", io.tensors_document(eff, cfg.sha256, enhancement=report))
    io.write_csv(out / "lambda_sweep.csv", rows)
    io.write_csv(out / "diagnostics.csv", _diagnostics(c["solution"]))
    _dump_fields(cfg, c["solution"], out)
    return c, rows, report


def _dilute_study(cfg: RunConfig, threads):
    s = cfg.study
    kw = {}
    if cfg.matrix is not None and cfg.matrix.shear is not None:
        mat = cfg.matrix.material(s.dim)
        inc = (cfg.inclusion or cfg.matrix).material(s.dim)
        kw = dict(L_matrix=mat.L, L_inclusion=inc.L, M_matrix=mat.M, M_inclusion=inc.M)
    return DiluteStudy(ells=tuple(s.ells), eps_bar=s.eps_bar, eta=s.eta, lambdas=tuple(s.lambdas), dim=s.dim,
                       voxels=s.voxels, tol=s.tol, threads=threads, **kw)


def run_dilute(cfg: RunConfig, out: Path, threads=1):
    study = _dilute_study(cfg, threads)
    records = dilute_sweep(study)
    rows = []
    for r in records:
        row = {"ell": r.ell, "n": r.n, "mismatch": r.mismatch, "corrector_distance": r.corrector_distance,
               "a_symmetry_residual": r.symmetry_residual}
        for j in range(r.dim):
            row[f"a_{j}{j}"] = r.a[j, j]
            row[f"eps_h_{j}{j}"] = r.eps_h[j, j]
        rows.append(row)
    io.write_csv(out / "dilute.csv", rows)
    doc = {"config_sha256": cfg.sha256, "records": [vars(r) for r in records]}
    fit = None
    if study.elastic and len(study.lambdas) >= 3 and len(records) >= 3:
        fit = scaling_study(records, study.lambdas)
        srows = [{"ell": ell, "family": p, "lambda_slope_P": fit.lambda_slope_P[(ell, p)],
                  "lambda_slope_N": fit.lambda_slope_N[(ell, p)], "N_ratio": fit.N_ratio[(ell, p)]}
                 for (ell, p) in sorted(fit.lambda_slope_P)]
        srows += [{"lambda": lam, "family": p, "ell_slope_P": fit.ell_slope_P[(lam, p)]}
                  for (lam, p) in sorted(fit.ell_slope_P)]
        io.write_csv(out / "scaling.csv", srows)
        doc["scaling"] = vars(fit)
    io.write_json(out / "tensors.json", doc)
    return records, fit


def _macro_tensors(cfg: RunConfig, threads):
    m = cfg.macro
    dim = m.dim
    eps = np.asarray(m.eps, float) * (np.eye(dim) if np.ndim(m.eps) == 0 else 1.0)
    a = np.asarray(m.a, float) if m.a is not None else None
    L = isotropic_elasticity(m.L["lame"], m.L["shear"], dim) if m.L else None
    M = isotropic_electrostriction(m.M.get("m1", 0.0), m.M.get("m2", 0.0), dim) if m.M else None
    N = P = None
    certs = {}
    if cfg.geometry is not None and cfg.phases_given:
        c = build_cell(cfg, threads)
        eff = c["tensors"]
        eps, certs = eff.eps_h, eff.certificates
        if a is None:
            a = eff.a
        L, M, N, P = eff.L_h, eff.M_h, eff.N_h, eff.P_h
    return eps, a, L, M, N, P, certs


def run_macro(cfg: RunConfig, out: Path, threads=1):
    m = cfg.macro
    eps, a, L, M, N, P, certs = _macro_tensors(cfg, threads)
    grid = BoxGrid(m.dim, m.n)
    if m.modulation == "active":
        if a is None:
            raise ConfigError("active modulation needs macro.a or a cell to compute it from")
        modulation = "active"
    elif m.modulation:
        modulation = [expression(e) for e in m.modulation]
    else:
        modulation = None
    prob = MacroProblem(grid, eps, expression(m.boundary), a=a, modulation=modulation,
                        source=expression(m.source) if m.source else None)
    sol = solve_scalar_bvp(prob)
    doc = {"config_sha256": cfg.sha256, "eps": eps, "a": a, "scalar_residual": sol.residual, "certificates": certs}
    if "phi" in cfg.output.fields:
        io.write_nodal(out / "phi.csv", grid.nodes(), sol.phi)
    if L is not None:
        gphi = grid.gradient(sol.phi)
        if modulation == "active":
            f = gphi
        elif modulation:
            f = np.stack([np.broadcast_to(fn(grid.nodes()), grid.shape) for fn in modulation])
        else:
            f = np.zeros((0,) + grid.shape)
        nf = len(f)
        Nh = N[:nf] if (N is not None and nf) else None
        Ph = P[:nf, :nf] if (P is not None and nf) else None
        Z = assemble_Z(M if M is not None else np.zeros((m.dim,) * 4), Nh, Ph, gphi, f)
        el = solve_elastic_bvp(grid, L, Z)
        doc["elastic_residual"] = el.residual
        doc["max_displacement"] = float(np.abs(el.u).max())
        if "u" in cfg.output.fields:
            io.write_nodal(out / "u.csv", grid.nodes(), el.u)
    io.write_json(out / "tensors.json", doc)
    return sol, doc


def run_verify(cfg: RunConfig, out: Path, threads=1):
    c = build_cell(cfg, threads)
    s = cfg.study
    nfam = len(c["solution"].families)
    if len(s.modulation) != nfam:
        raise ConfigError(f"study.modulation has {len(s.modulation)} entries for {nfam} charge families")
    grads = None
    if s.modulation_grad is not None:
        grads = []
        for comps in s.modulation_grad:
            fns = [expression(e) for e in comps]
            grads.append(lambda x, fns=fns: np.stack([np.broadcast_to(fn(x), x.shape[1:]) for fn in fns]))
    caps = {int(k): int(v) for k, v in cfg.solver.caps.items()}
    prob = TwoScaleProblem(c["solution"], c["tensors"], c["indicator"], c["phases"], expression(s.boundary),
                           [expression(e) for e in s.modulation], grads, boundary_layer=s.boundary_layer,
                           q_values=tuple(s.q), elastic=c["tensors"].L_h is not None)
    if caps:
        prob.caps.update(caps)
    records = run_study(prob, s.deltas)
    io.write_csv(out / "convergence.csv", convergence_rows(records))
    io.write_json(out / "tensors.json", io.tensors_document(c["tensors"], cfg.sha256,
                                                            records=[vars(r) for r in records]))
    return records


RUNNERS = {"cell": run_cell, "enhance": run_enhance, "dilute": run_dilute, "macro": run_macro, "verify": run_verify}


# -- entry point -------------------------------------------------------------

def _provenance(exc):
    """Dotted name of the innermost package module the exception passed through."""
    module = None
    for frame in traceback.extract_tb(exc.__traceback__):
        path = Path(frame.filename).resolve()
        if path.parent == PACKAGE_DIR:
            module = f"elastodiel.{path.stem}"
    return module


def error_document(exc):
    code = exc.exit_code if isinstance(exc, ElastodielError) else 3
    return {"error": type(exc).__name__, "module": _provenance(exc), "message": str(exc), "exit_code": code}


def parser():
    p = argparse.ArgumentParser(prog="elastodiel", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=sorted(RUNNERS))
    p.add_argument("--config", required=True, help="TOML run configuration")
    p.add_argument("--output-dir", default="out", help="directory for result files")
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--threads", type=int, default=1, help="worker threads for independent cell solves")
    return p


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = load_config(args.config, args.subcommand)
        RUNNERS[args.subcommand](cfg, out, args.threads)
    except Exception as exc:  # every failure becomes a structured error document
        doc = error_document(exc)
        io.write_json(out / "error.json", doc)
        log.error("%s: %s", doc["error"], doc["message"])
        if args.verbose:
            traceback.print_exc()
        return doc["exit_code"]
    return 0


if __name__ == "__main__":
    sys.exit(main())
