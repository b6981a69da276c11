"""Command-line front end: ``sheethom <cell|eff|converge|enz|check> --config run.yaml``.

Exit codes: 0 success, 2 invalid configuration, 3 solver failure or
inadmissible material, 4 conductivity outside the ENZ regime.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .cellsolver import SolverError, assemble_cell_system, build_mesh, corrector_residual, dump_system, solve_correctors
from .config import ConfigError, RunConfig, load_config
from .core import CellGeometry, FlatSheet, InadmissibleMaterialError, check_admissibility
from .effective import ENZRegimeError, effective_tensor, enz_spacing
from .finescale import convergence_study, enz_sweep
from .tables import write_table

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_ENZ = 4


@dataclasses.dataclass
class Context:
    config: RunConfig
    out: Path
    threads: int

    @property
    def comment(self) -> str:
        return f"config_sha256={self.config.digest}, sheethom {__version__}"

    def write(self, name: str, columns: Sequence[str], rows) -> Path:
        return write_table(self.out / name, columns, rows, self.comment)

    def per_omega(self, func: Callable[[float, int], object]) -> list:
        """Runs ``func(omega, inner_workers)`` for every frequency, in order."""
        omegas = self.config.omegas
        if len(omegas) == 1 or self.threads == 1:
            return [func(w, self.threads) for w in omegas]
        inner = max(1, self.threads // len(omegas))
        with ThreadPoolExecutor(max_workers=min(self.threads, len(omegas))) as pool:
            return list(pool.map(lambda w: func(w, inner), omegas))


def _solve_cell(ctx: Context, omega: float):
    cfg = ctx.config
    geometry = cfg.require_geometry()
    system = assemble_cell_system(build_mesh(geometry), cfg.materials(omega), cfg.x_macro, eta=cfg.solver.eta)
    solution = solve_correctors(system, cfg.solver.tol, method=cfg.solver.method, max_iter=cfg.solver.max_iter)
    return system, solution


def cmd_cell(ctx: Context) -> int:
    """Corrector summary per frequency and direction."""
    cfg = ctx.config

    def run(omega, _workers):
        return omega, *_solve_cell(ctx, omega)

    rows = []
    for k, (omega, system, solution) in enumerate(ctx.per_omega(run)):
        weak = corrector_residual(solution, seed=cfg.seed)
        norms = solution.h_norms
        for j in range(3):
            rows.append([omega, j + 1, float(norms[j]), complex(solution.mean_values[j]),
                         float(solution.solver_residuals[j]), weak])
        if cfg.nodal:
            nodal = [[i, *map(float, system.mesh.nodes[i]), *map(complex, solution.chi[i])] for i in range(system.n)]
            ctx.write(f"cell_nodal_{k}.csv", ["node", "y1", "y2", "y3", "chi_1", "chi_2", "chi_3"], nodal)
        if cfg.dump_system:
            dump_system(system, ctx.out / f"cell_system_{k}.csv")
    ctx.write("cell_summary.csv", ["omega", "j", "h_norm", "mean", "solver_residual", "weak_residual"], rows)
    return EXIT_OK


def cmd_eff(ctx: Context) -> int:
    """Effective tensor from both formulas with the gap and coercivity margin."""

    def run(omega, _workers):
        _, solution = _solve_cell(ctx, omega)
        return omega, effective_tensor(solution), solution

    tensor_rows, summary = [], []
    for omega, eff, solution in ctx.per_omega(run):
        for formula, tensor in (("average", eff.eps_average), ("energy", eff.eps_energy)):
            for i in range(3):
                tensor_rows.append([omega, formula, i + 1, *map(complex, tensor[i])])
        summary.append([omega, eff.coercivity_margin, eff.formula_gap, ctx.config.solver.tol,
                        float(np.max(solution.solver_residuals))])
    ctx.write("eff_tensor.csv", ["omega", "formula", "row", "eps_1", "eps_2", "eps_3"], tensor_rows)
    ctx.write("eff_summary.csv", ["omega", "coercivity_margin", "formula_gap", "tol", "max_residual"], summary)
    return EXIT_OK


def _observed_orders(ds: Sequence[float], errors: Sequence[float]) -> list[float]:
    orders = [math.nan]
    for (d0, e0), (d1, e1) in zip(zip(ds, errors), zip(ds[1:], errors[1:])):
        orders.append(math.log(e0 / e1) / math.log(d0 / d1) if e0 > 0 and e1 > 0 else math.nan)
    return orders


def cmd_converge(ctx: Context) -> int:
    """Fine-scale versus homogenized error over the configured spacings."""
    cfg = ctx.config
    fs = cfg.require_finescale()

    def run(omega, workers):
        materials = cfg.materials(omega)
        eps_eff = None
        if cfg.geometry is not None:
            eps_eff = effective_tensor(_solve_cell(ctx, omega)[1]).eps_eff
        rows = convergence_study(
            materials, fs.L, fs.d, fs.window, eps_eff=eps_eff, sublayers=fs.sublayers, incidence=fs.incidence,
            eps_ext=fs.eps_ext, polarization=fs.polarization, workers=workers,
        )
        return omega, rows

    table = []
    for omega, rows in ctx.per_omega(run):
        orders = _observed_orders([r.d for r in rows], [r.error for r in rows])
        for r, order in zip(rows, orders):
            table.append([omega, r.d, r.n_sheets, r.error_E, r.error_H, r.error, order, r.monitor, r.energy_residual])
    ctx.write(
        "converge.csv",
        ["omega", "d", "n_sheets", "error_E", "error_H", "error", "observed_order", "monitor", "energy_residual"],
        table,
    )
    return EXIT_OK


def cmd_enz(ctx: Context) -> int:
    """Spacing for a vanishing in-plane permittivity and a sweep around it."""
    cfg = ctx.config
    enz = cfg.require_enz()
    factors = sorted(set(enz.factors) | {1.0})

    def profile(t):
        y = np.zeros(np.shape(t) + (3,))
        y[..., 2] = t
        return enz.f(y)

    def run(omega, workers):
        d0, rows = enz_sweep(
            enz.sigma_sheet, omega, enz.eps_host, f_profile=profile, factors=factors, L=enz.L, mu=cfg.mu,
            eps_ext=enz.eps_ext, sublayers=enz.sublayers, workers=workers,
        )
        return omega, d0, rows

    table, summary = [], []
    for omega, d0, rows in ctx.per_omega(run):
        for factor, r in zip(factors, rows):
            table.append([omega, factor, r.d, r.phase_delay, r.eps_tangential, r.arg_t, r.abs_t])
        best = min(rows, key=lambda r: r.phase_delay)
        nodes, weights = np.polynomial.legendre.leggauss(64)
        f_mean = float(np.real(np.sum(0.5 * weights * profile(0.5 * (nodes + 1.0)))))
        spacing = enz_spacing(enz.sigma_sheet, omega, enz.eps_host, f_mean)
        summary.append([omega, d0, spacing.residue, best.d])
    ctx.write("enz.csv", ["omega", "factor", "d", "phase_delay", "eps_tangential", "arg_t", "abs_t"], table)
    ctx.write("enz_summary.csv", ["omega", "d0", "residue", "d_min_phase_delay"], summary)
    return EXIT_OK


def cmd_check(ctx: Context) -> int:
    """Sampled coefficient bounds; exits 3 if any frequency fails."""
    cfg = ctx.config
    geometry: Optional[CellGeometry] = cfg.geometry
    normal_axis = geometry.sheet.normal_axis if geometry is not None and isinstance(geometry.sheet, FlatSheet) else 3

    def run(omega, _workers):
        return omega, check_admissibility(
            cfg.materials(omega), cfg.admissibility_samples, normal_axis=normal_axis, floor=cfg.admissibility_floor
        )

    rows = []
    for omega, rep in ctx.per_omega(run):
        rows.append([omega, rep.min_im_eps, rep.max_abs_eps, rep.min_re_sigma, rep.max_abs_sigma,
                     rep.sample_count, int(rep.passed)])
    ctx.write("check.csv", ["omega", "min_im_eps", "max_abs_eps", "min_re_sigma", "max_abs_sigma", "samples", "passed"],
              rows)
    if not all(r[-1] for r in rows):
        print("error: coefficients fail the admissibility bounds", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


COMMANDS = {"cell": cmd_cell, "eff": cmd_eff, "converge": cmd_converge, "enz": cmd_enz, "check": cmd_check}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sheethom", description="Effective permittivity of media with conducting sheets.")
    parser.add_argument("--version", action="version", version=f"sheethom {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in COMMANDS.items():
        p = sub.add_parser(name, help=func.__doc__.splitlines()[0])
        p.add_argument("--config", required=True, type=Path, help="YAML run configuration")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory (default: current)")
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: CPU count)")
        p.add_argument("--tol", type=float, default=None, help="override solver.tol")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.tol is not None:
            if not args.tol > 0:
                raise ConfigError("--tol: must be positive")
            config = dataclasses.replace(config, solver=dataclasses.replace(config.solver, tol=args.tol))
        threads = args.threads if args.threads is not None else (os.cpu_count() or 1)
        if threads < 1:
            raise ConfigError("--threads: must be at least 1")
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](Context(config, args.out, threads))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ENZRegimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENZ
    except (SolverError, InadmissibleMaterialError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
