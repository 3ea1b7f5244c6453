"""Command-line front end.

Every subcommand reads a JSON configuration (``--config``) and writes CSV
and JSON artifacts into ``--out``.  Exit codes: 0 success, 1 invalid input,
2 a solver failed to converge (or broke a scheme invariant), 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config, write_csv, write_json
from .exact import eval_value, exact_stationary_pdf, pasting_residuals, solve_smooth_pasting
from .exceptions import ConvergenceError, NoInteriorThreshold, SchemeViolation, ValidationError
from .fpe import CellGrid, solve_fpe_stationary
from .hjbe import Grid, Policy, extract_policy, solve_hjbe
from .model import regime_discharges
from .montecarlo import estimate_cost, simulate_paths
from .studies import convergence_study, run_pipeline

logger = logging.getLogger("delayed_impulse")

EXIT_OK, EXIT_VALIDATION, EXIT_CONVERGENCE, EXIT_IO = 0, 1, 2, 3


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.output or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_policy(args, cfg: RunConfig) -> Policy:
    if not args.policy:
        raise ValidationError("policy required (pass --policy PATH)")
    path = Path(args.policy)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    try:
        policy = Policy.from_dict(data.get("policy", data))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: {exc}") from None
    if policy.regime_count != cfg.model.regime_count:
        raise ValidationError(f"{path}: policy has {policy.regime_count} regimes, model has {cfg.model.regime_count}")
    return policy


def cmd_exact(args, cfg: RunConfig) -> Path:
    if cfg.model.regime_count != 1:
        raise ValidationError("exact solution requires single regime")
    out = _out_dir(args, cfg)
    sol = solve_smooth_pasting(cfg.model)
    x = np.linspace(0.0, 1.0, cfg.exact_samples)
    phi, hat = eval_value(x, sol)
    write_csv(out / "value.csv", ["x", "phi", "phi_hat"], zip(x, phi, hat))
    pdf = exact_stationary_pdf(cfg.model.lam, cfg.model.mu, cfg.model.speeds[0], sol.threshold)
    write_csv(out / "pdf.csv", ["x", "p_N", "p_W"], zip(x, pdf.density_N(x), pdf.density_W(x)))
    policy = Policy.from_thresholds([sol.threshold])
    write_json(out / "policy.json", policy.to_dict())
    r0, r1 = pasting_residuals(sol)
    write_json(out / "summary.json", {
        "threshold": sol.threshold,
        "coefficients": {"A": sol.A, "B": sol.B, "C": sol.C, "D": sol.D, "phi_at_one": sol.phi_at_one},
        "phi_hat": {"alpha": sol.hat.alpha, "beta": sol.hat.beta, "gamma": sol.hat.gamma},
        "pasting_residuals": [r0, r1],
        "dirac_weight_N": pdf.dirac_weight_N,
        "dirac_weight_W": pdf.dirac_weight_W,
        "resetting_mass": pdf.resetting_mass,
        "model": cfg.model.to_dict(),
    })
    return out


def cmd_solve_hjbe(args, cfg: RunConfig) -> Path:
    out = _out_dir(args, cfg)
    grid = Grid(cfg.hjbe_intervals)
    fields, it, history = solve_hjbe(
        cfg.model, cfg.chain, grid, dt=cfg.hjbe_dt, tol=cfg.hjbe_tol, max_iter=cfg.max_iter,
        interpolation=cfg.interpolation,
    )
    policy = extract_policy(fields, grid)
    active = fields.phi >= fields.phi_hat
    rows = (
        (i, x, fields.phi[i, l], fields.phi_hat[i, l], bool(active[i, l]))
        for i in range(cfg.model.regime_count) for l, x in enumerate(grid.x)
    )
    write_csv(out / "value.csv", ["regime", "x", "phi", "phi_hat", "active"], rows)
    write_json(out / "policy.json", policy.to_dict())
    write_json(out / "summary.json", {
        "iterations": it, "n_intervals": grid.n_intervals, "thresholds": policy.thresholds,
        "mode": policy.mode, "final_residual": history[-1] if history else None,
    })
    return out


def cmd_solve_fpe(args, cfg: RunConfig) -> Path:
    policy = _load_policy(args, cfg)
    out = _out_dir(args, cfg)
    grid = CellGrid(cfg.fpe_intervals)
    fields, summary, info = solve_fpe_stationary(
        cfg.model, cfg.chain, policy, grid, dt=cfg.fpe_dt, reconstruction=cfg.reconstruction,
        tol=cfg.fpe_tol, max_iter=cfg.max_iter,
    )
    rows = ((i, x, fields.p_N[i, l], fields.p_W[i, l]) for i in range(cfg.model.regime_count) for l, x in enumerate(grid.centers))
    write_csv(out / "density.csv", ["regime", "cell_center", "p_N", "p_W"], rows)
    data = summary.to_dict()
    data["mass_audit"] = {
        "total_mass": fields.total_mass(),
        "max_step_mass_change": info["max_step_mass_change"],
        "iterations": info["iterations"],
        "dt": info["dt"],
    }
    write_json(out / "summary.json", data)
    return out


def cmd_simulate(args, cfg: RunConfig) -> Path:
    policy = _load_policy(args, cfg)
    out = _out_dir(args, cfg)
    sim = cfg.simulation if args.seed is None else cfg.simulation.with_(rng_seed=args.seed)
    res = simulate_paths(cfg.model, cfg.chain, policy, sim)
    centers = res.bin_centers
    rows = (
        (i, x, res.p_N[i, b], res.p_W[i, b], res.p_N_se[i, b], res.p_W_se[i, b])
        for i in range(cfg.model.regime_count) for b, x in enumerate(centers)
    )
    write_csv(out / "histogram.csv", ["regime", "x_bin", "p_N", "p_W", "p_N_se", "p_W_se"], rows)
    write_json(out / "boundary.json", {**res.to_dict(), "config": sim.to_dict()})
    costs = [estimate_cost(cfg.model, cfg.chain, policy, s, sim) for s in cfg.cost_starts]
    write_csv(out / "cost.csv", ["regime", "x0", "mean", "stderr"], ((c.regime, c.x0, c.mean, c.stderr) for c in costs))
    return out


def cmd_sediment_build(args, cfg: RunConfig) -> Path:
    if "hydraulics" not in cfg.raw and "control" not in cfg.raw:
        raise ValidationError("sediment-build needs 'control' and 'hydraulics' sections")
    out = _out_dir(args, cfg)
    write_json(out / "model.json", {
        "model": cfg.model.to_dict(),
        "discharges": regime_discharges(cfg.model.regime_count).tolist(),
        "hydraulics": cfg.raw.get("hydraulics", {}),
        "time_unit_seconds": cfg.raw.get("time_unit_seconds", 1.0),
        "chain": {"matrix": cfg.chain.to_list()},
    })
    return out


def cmd_convergence_study(args, cfg: RunConfig) -> Path:
    out = _out_dir(args, cfg)
    tables = convergence_study(
        cfg.model, cfg.study_resolutions, cfg.study_base_intervals,
        interpolation=cfg.interpolation, reconstruction=cfg.reconstruction,
    )
    for name, (header, rows) in tables.table_rows().items():
        write_csv(out / f"{name}.csv", header, rows)
    write_json(out / "summary.json", {"exact_threshold": tables.exact_threshold, "resolutions": tables.resolutions})
    return out


def cmd_sweep_mu(args, cfg: RunConfig) -> Path:
    if not cfg.mu_sweep:
        raise ValidationError("mu_sweep: list of delay rates required")
    out = _out_dir(args, cfg)
    rows = []
    for mu in cfg.mu_sweep:
        res = run_pipeline(
            cfg.model.with_(mu=mu), cfg.chain, cfg.hjbe_intervals, cfg.fpe_intervals,
            interpolation=cfg.interpolation, reconstruction=cfg.reconstruction,
        )
        sub = out / f"mu_{mu:.17g}"
        write_json(sub / "policy.json", res.policy.to_dict())
        write_json(sub / "summary.json", res.summary.to_dict())
        s = res.summary
        rows.append([mu, s.P0, s.P1, s.P0 + s.P1] + [t for t in res.policy.thresholds])
    header = ["mu", "P0", "P1", "P0_plus_P1"] + [f"threshold_{i}" for i in range(cfg.model.regime_count)]
    write_csv(out / "sweep.csv", header, rows)
    return out


COMMANDS = {
    "exact": cmd_exact,
    "solve-hjbe": cmd_solve_hjbe,
    "solve-fpe": cmd_solve_fpe,
    "simulate": cmd_simulate,
    "sediment-build": cmd_sediment_build,
    "convergence-study": cmd_convergence_study,
    "sweep-mu": cmd_sweep_mu,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="delayed-impulse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output directory (default: config 'output' or ./out)")
        p.add_argument("--seed", type=int, help="override simulation.rng_seed")
        p.add_argument("--policy", help="policy JSON from 'exact' or 'solve-hjbe'")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None and args.seed < 0:
            raise ValidationError("--seed must be non-negative")
        out = COMMANDS[args.command](args, cfg)
    except (ValidationError, NoInteriorThreshold) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ConvergenceError, SchemeViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
