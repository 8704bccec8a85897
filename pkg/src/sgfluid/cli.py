"""Command-line driver: ``sgfluid {check,simulate,couple,mix,spectrum}``.

Exit codes: 0 success, 1 usage or configuration error, 2 infeasible
hypotheses or failed verdict, 3 blow-up.
"""

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import defaults, load_config, parse_field
from .coupling import CouplingConfig, contraction_experiment
from .errors import BlowUpError, ConfigError, InsufficientSignal, SgfluidError
from .integrator import simulate
from .mixing import build_dictionary, mixing_experiment, moment_experiment, moment_lines
from .noise import hypothesis_check
from .operators import estimate_theta

EXIT_OK, EXIT_CONFIG, EXIT_VERDICT, EXIT_BLOWUP = 0, 1, 2, 3
OUT_ENV = "SGFLUID_OUT"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="sgfluid", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"sgfluid {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI experiment file (defaults if omitted)")
    common.add_argument("--seed", type=int, help="override [sim] seed")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    common.add_argument("--out", type=Path, help=f"output directory (else ${OUT_ENV}, else config)")
    common.add_argument("--allow-infeasible", action="store_true",
                        help="run experiments even if the viscosity condition fails")
    sub.add_parser("check", parents=[common], help="evaluate the viscosity condition")
    sub.add_parser("simulate", parents=[common], help="one trajectory to CSV")
    c = sub.add_parser("couple", parents=[common], help="nudged coupling ensemble")
    c.add_argument("--negative-control", action="store_true",
                   help="rho = 0 with an independent follower noise")
    m = sub.add_parser("mix", parents=[common], help="distance decay and invariant moment")
    m.add_argument("--moment-only", action="store_true")
    sub.add_parser("spectrum", parents=[common], help="dump lattice tables")
    return p


# -- output helpers -------------------------------------------------------------


def _out_dir(args, cfg):
    d = args.out or os.environ.get(OUT_ENV) or cfg["outputs"]["directory"]
    d = Path(d)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _meta(schema, command, cfg):
    return [
        f"# sgfluid {__version__}",
        f"# schema: {schema}/1",
        f"# command: {command}",
        f"# seed: {cfg['sim']['seed']}",
    ]


def write_csv(path, schema, command, cfg, columns, rows, extra_meta=()):
    lines = _meta(schema, command, cfg) + [f"# {m}" for m in extra_meta]
    lines.append(",".join(columns))
    for r in np.atleast_2d(rows):
        lines.append(",".join("%.17g" % v for v in r))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_report(path, command, cfg, lines):
    head = _meta("report", command, cfg)
    Path(path).write_text("\n".join(head + list(lines)) + "\n", encoding="utf-8")


def _emit(lines):
    for line in lines:
        print(line)


# -- commands -----------------------------------------------------------------------


def _condition(cfg, sim):
    c = cfg["check"]
    theta = estimate_theta(sim.lattice, c["theta_samples"], c["theta_seed"], c["theta_refine"])
    if sim.noise is None:
        from .noise import NoiseSpec
        spec = NoiseSpec(sim.lattice, np.zeros(sim.lattice.n_modes))
    else:
        spec = sim.noise
    return hypothesis_check(spec, sim.lattice, sim.nu, theta)


def _gate(cfg, sim, args, out):
    """Feasibility gate for experiments; returns (report, overridden)."""
    rep = _condition(cfg, sim)
    allowed = args.allow_infeasible or cfg["check"]["allow_infeasible"]
    if not rep.feasible and not allowed:
        print("\n".join(rep.lines()), file=sys.stderr)
        print("viscosity condition not satisfied (use --allow-infeasible to run anyway)",
              file=sys.stderr)
        return rep, None
    return rep, (not rep.feasible)


def cmd_check(cfg, args, out):
    sim = cfg.sim()
    rep = _condition(cfg, sim)
    lines = rep.lines()
    _emit(lines)
    write_report(out / "check.txt", "check", cfg, lines)
    return EXIT_OK if rep.feasible else EXIT_VERDICT


def cmd_simulate(cfg, args, out):
    sim = cfg.sim()
    u0 = parse_field(cfg["coupling"]["x0"], sim.lattice)
    traj = simulate(u0, sim)
    from .integrator import Trajectory
    write_csv(out / "trajectory.csv", "trajectory", "simulate", cfg, Trajectory.COLUMNS, traj.rows())
    print(f"wrote {out / 'trajectory.csv'} ({len(traj.t)} rows)")
    return EXIT_OK


def cmd_couple(cfg, args, out):
    sim = cfg.sim()
    cond, overridden = _gate(cfg, sim, args, out)
    if overridden is None:
        return EXIT_VERDICT
    lat = sim.lattice
    x0 = parse_field(cfg["coupling"]["x0"], lat)
    x1 = parse_field(cfg["coupling"]["x0_tilde"], lat)
    cc = CouplingConfig(cfg["coupling"]["rho"], sim, x0, x1, cfg["coupling"]["stabilizing"])
    rep = contraction_experiment(cc, cfg["ensemble"]["n_paths"], negative_control=args.negative_control,
                                 theta=cond.theta, h_budget=cfg.h_budget(), seed=sim.seed,
                                 threads=args.threads)
    run = rep.run
    alive = run.alive
    mean = lambda a: a[:, alive].mean(axis=1) if alive.any() else np.full(len(run.t), np.nan)
    rows = np.column_stack([run.t, mean(run.r_vsq), mean(np.exp(run.t)[:, None] * run.r_vsq),
                            mean(run.h_sq_integral), mean(run.leader_wsq), mean(run.follower_wsq)])
    write_csv(out / "coupling.csv", "coupling", "couple", cfg, run.COLUMNS, rows,
              [f"ensemble mean over {int(alive.sum())} paths"])
    lines = rep.lines() + [f"hypotheses_overridden = {overridden}",
                           f"moment_gate_l0R_over_l = {sim.moment_bound:.10g}"]
    _emit(lines)
    write_report(out / "coupling_report.txt", "couple", cfg, lines)
    if args.negative_control:
        return EXIT_OK if rep.verdict == "no-decay" else EXIT_VERDICT
    return EXIT_OK if rep.verdict in ("contracting", "identical") else EXIT_VERDICT


def cmd_mix(cfg, args, out):
    sim = cfg.sim()
    lat = sim.lattice
    x0 = parse_field(cfg["coupling"]["x0"], lat)
    ens = cfg["ensemble"]
    if args.moment_only:
        m, n_blowup = moment_experiment(sim, x0, ens["n_paths"], cfg.checkpoints(), cfg.burnin(),
                                        args.threads)
        lines = moment_lines(m) + [f"n_blowup = {n_blowup}"]
        _emit(lines)
        write_report(out / "moment.txt", "mix", cfg, lines)
        return EXIT_OK if m.passed else EXIT_VERDICT
    _, overridden = _gate(cfg, sim, args, out)
    if overridden is None:
        return EXIT_VERDICT
    x1 = parse_field(cfg["coupling"]["x0_tilde"], lat)
    dictionary = build_dictionary(lat, ens["dictionary_size"], seed=sim.seed)
    rep = mixing_experiment(sim, x0, x1, ens["n_paths"], dictionary, cfg.checkpoints(), cfg.burnin(),
                            args.threads)
    write_csv(out / "mixing.csv", "mixing", "mix", cfg, rep.COLUMNS, rep.rows())
    lines = rep.lines() + [f"hypotheses_overridden = {overridden}"]
    _emit(lines)
    write_report(out / "mixing_report.txt", "mix", cfg, lines)
    return EXIT_OK if all(rep.verdicts().values()) else EXIT_VERDICT


def cmd_spectrum(cfg, args, out):
    lat = cfg.lattice()
    rows = np.column_stack([lat.modes, lat.ksq, lat.helm, lat.lam, lat.wmult])
    meta = [f"k_max = {lat.k_max}", f"alpha = {lat.alpha!r}", f"grid_n = {lat.grid_n}",
            f"P^2 = {lat.poincare_sq!r}", f"lambda1 = {lat.lambda1!r}",
            f"K^2 = {lat.stokes_constant_sq!r}"]
    write_csv(out / "spectrum.csv", "spectrum", "spectrum", cfg,
              ("k1", "k2", "ksq", "helm", "lambda", "wmult"), rows, meta)
    _emit(meta)
    return EXIT_OK


COMMANDS = {"check": cmd_check, "simulate": cmd_simulate, "couple": cmd_couple, "mix": cmd_mix,
            "spectrum": cmd_spectrum}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else defaults()
        if args.seed is not None:
            cfg = cfg.with_overrides(sim__seed=int(args.seed))
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        out = _out_dir(args, cfg)
        (out / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
        return COMMANDS[args.command](cfg, args, out)
    except BlowUpError as exc:
        print(f"sgfluid: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except (ConfigError, InsufficientSignal, SgfluidError) as exc:
        print(f"sgfluid: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
