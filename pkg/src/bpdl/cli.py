"""Command-line entry point.

    bpdl [--config FILE] <group> <command> [--seed S] [--json] [--out-dir DIR]
         [--set section.key=VALUE ...] [--<key> VALUE ...]

Exit codes: 0 success, 1 validation error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from . import config as cfgmod
from .errors import ConfigError, NumericalError, ValidationError
from .fke import (
    build_generator,
    detailed_balance_residual,
    edp_fke,
    enumerate_states,
    solve_fke,
    stationarity_residual,
    stationary_pi,
    states_manifest,
    tilted_pi,
)
from .fke import trajectory_columns as fke_columns
from .io import Table, dumps, write_csv, write_json, write_manifest
from .limits import (
    TABLE_HEADER,
    EnsembleSpec,
    ExperimentSetup,
    chaos_entropy_curve,
    concentration_experiment,
    entropy_table,
    recovery_entropy,
    superposition_mc,
)
from .meanfield import (
    SolverOptions,
    chain_rule_residual,
    edp_integrands,
    edp_mf,
    lagrangian_decomposition_check,
    solve_mf,
)
from .meanfield import trajectory_columns as mf_columns
from .particles import RngSpec, events_columns, initial_counts, simulate

COMMANDS: Dict[Tuple[str, ...], str] = {
    ("validate",): "",
    ("mf", "solve"): "mf",
    ("mf", "edp"): "mf",
    ("particles", "simulate"): "particles",
    ("fke", "solve"): "fke",
    ("fke", "edp"): "fke",
    ("fke", "balance"): "fke.balance",
    ("limits", "entropy"): "limits.entropy",
    ("limits", "chaos"): "limits.chaos",
    ("limits", "concentrate"): "limits.concentrate",
    ("limits", "superpose"): "limits.superpose",
}


def _need(sec: dict, key: str, name: str):
    if sec.get(key) is None:
        raise ConfigError(f"missing key {key!r} in section [{name}]")
    return sec[key]


def _table(header, rows) -> Table:
    return Table(list(header), [list(r) for r in rows])


class Run:
    """State shared by a single command invocation."""

    def __init__(self, cfg: dict, seed: int, out_dir: Path, section: str):
        self.cfg = cfg
        self.seed = seed
        self.out_dir = out_dir
        self.section = section
        self.sec = cfg.get(section, {}) if section else {}
        self.ts, self.k = cfgmod.build_space(cfg)
        self.outputs: List[str] = []

    def csv(self, name: str, table: Table):
        write_csv(table, self.out_dir / name)
        self.outputs.append(name)

    def json(self, name: str, obj):
        write_json(obj, self.out_dir / name)
        self.outputs.append(name)

    def need(self, key):
        return _need(self.sec, key, self.section)


def cmd_validate(run: Run) -> dict:
    space = enumerate_states(run.ts.K, 4) if run.ts.K <= 8 else enumerate_states(run.ts.K, 1)
    gen = build_generator(space, run.ts, run.k, 1.0)
    res = detailed_balance_residual(gen, stationary_pi(space, run.ts, 1.0))
    if res > 1e-12:
        raise ValidationError(f"detailed balance residual {res:.3e} exceeds 1e-12")
    return {
        "K": run.ts.K,
        "gamma_total": run.ts.total_mass,
        "c_sup_norm": run.k.sup_norm,
        "no_natural_death": True,
        "mutation_is_transpose": True,
        "detailed_balance_residual": res,
    }


def _mf_traj(run: Run):
    s = run.sec
    opts = SolverOptions(
        method=s["method"], dt=s["dt"], tol=s["tol"],
        picard_max_iters=s["picard_max_iters"], picard_tol=s["picard_tol"],
    )
    return solve_mf(run.ts, run.k, run.need("nu0"), s["T"], opts, s["scale_plus"], s["scale_minus"])


def cmd_mf_solve(run: Run) -> dict:
    traj = _mf_traj(run)
    run.csv("mf_trajectory.csv", _table(*mf_columns(traj)))
    return {
        "T": traj.T,
        "nodes": int(traj.times.size),
        "nu_T": traj.final.tolist(),
        "continuity_residual": traj.continuity_residual(),
        "solver": traj.stats,
    }


def cmd_mf_edp(run: Run) -> dict:
    traj = _mf_traj(run)
    rep = edp_mf(traj)
    parts = edp_integrands(traj)
    run.csv("mf_edp.csv", _table(["t", "R", "D", "F"], zip(traj.times, parts["R"], parts["D"], parts["F"])))
    out = rep.as_dict()
    out["abs_I"] = abs(rep.I)
    try:
        out["chain_rule_residual"] = chain_rule_residual(traj)
        sym, anti = lagrangian_decomposition_check(traj)
        out["lagrangian_sym_gap"], out["lagrangian_antisym_gap"] = sym, anti
    except NumericalError as exc:
        out["chain_rule_residual"] = None
        out["diagnostic"] = str(exc)
    return out


def cmd_particles_simulate(run: Run) -> dict:
    s = run.sec
    n = s["n"]
    N0 = s.get("N0")
    if N0 is None:
        N0 = initial_counts(run.need("nu0"), n).tolist()
    log = simulate(run.ts, run.k, N0, n, s["T"], RngSpec(run.seed, s["stream"]))
    run.csv("events.csv", _table(*events_columns(log)))
    summary = log.summary()
    run.json("particles_summary.json", summary)
    return summary


def _fke_setup(run: Run):
    s = run.sec
    n = s["n"]
    space = enumerate_states(run.ts.K, s["N_max"])
    if s.get("N0") is not None:
        P0 = space.point_mass(s["N0"], n)
    else:
        P0 = tilted_pi(space, run.need("nu0"), n)
    return space, n, P0


def cmd_fke_solve(run: Run) -> dict:
    s = run.sec
    space, n, P0 = _fke_setup(run)
    gen = build_generator(space, run.ts, run.k, n, s["birth_scale"], s["death_scale"])
    traj = solve_fke(gen, P0, s["T"], s["dt"], leak_budget=s["leak_budget"])
    run.csv("fke_trajectory.csv", _table(*fke_columns(traj, s["stride"])))
    run.json("fke_states.json", states_manifest(space))
    return {
        "states": space.size,
        "leak": traj.total_leak,
        "mean_nu_T": [traj.final.expectation(np.eye(run.ts.K)[i]) for i in range(run.ts.K)],
        "solver": traj.stats,
    }


def cmd_fke_edp(run: Run) -> dict:
    s = run.sec
    space, n, P0 = _fke_setup(run)
    ref = build_generator(space, run.ts, run.k, n)
    scaled = s["birth_scale"] != 1.0 or s["death_scale"] != 1.0
    used = build_generator(space, run.ts, run.k, n, s["birth_scale"], s["death_scale"]) if scaled else ref
    traj = solve_fke(used, P0, s["T"], s["dt"], leak_budget=s["leak_budget"])
    pi = stationary_pi(space, run.ts, n)
    fluxes = None
    if used is not ref:
        fl = [used.solution_fluxes(p) for p in traj.P]
        fluxes = (np.stack([a for a, _ in fl]), np.stack([b for _, b in fl]))
    rep = edp_fke(ref, pi, traj, fluxes)
    run.csv("fke_edp.csv", _table(["t", "R", "D", "F"], zip(traj.times, rep.R, rep.D, rep.F)))
    out = rep.as_dict()
    tol = max(1e-5, 10.0 * rep.leak)
    out.update(
        abs_I=abs(rep.I),
        tolerance=tol,
        within_tolerance=bool(abs(rep.I) <= tol),
        F_nonincreasing=bool(np.all(np.diff(rep.F) <= 0)),
        states=space.size,
    )
    return out


def cmd_fke_balance(run: Run) -> dict:
    s = run.sec
    rows = []
    for n in s["ns"]:
        for N_max in s["N_max_values"]:
            space = enumerate_states(run.ts.K, N_max)
            gen = build_generator(space, run.ts, run.k, n)
            pi = stationary_pi(space, run.ts, n)
            rows.append([n, N_max, space.size, detailed_balance_residual(gen, pi), stationarity_residual(gen, pi)])
    run.csv("fke_balance.csv", _table(["n", "N_max", "states", "detailed_balance", "stationarity"], rows))
    return {
        "max_detailed_balance": max(r[3] for r in rows),
        "max_stationarity": max(r[4] for r in rows),
    }


def cmd_limits_entropy(run: Run) -> dict:
    s = run.sec
    nu_bar, f = run.need("nu_bar"), run.need("f")
    table = entropy_table(run.ts, nu_bar, f, s["ns"])
    run.csv("limits_entropy.csv", _table(TABLE_HEADER, table.as_rows()))
    checks = []
    for n in s["direct_ns"]:
        closed, direct = recovery_entropy(run.ts, nu_bar, n)
        checks.append({"n": n, "closed_form": closed, "direct": direct, "gap": abs(closed - direct)})
    return {"recovery_checks": checks, "rows": len(table.rows)}


def _setup(run: Run, **kw) -> ExperimentSetup:
    return ExperimentSetup(run.ts, run.k, np.array(run.need("nu0"), dtype=float), seed=run.seed, **kw)


def cmd_limits_chaos(run: Run) -> dict:
    s = run.sec
    table = chaos_entropy_curve(_setup(run, dt=s["dt"]), s["ns"], s["t"])
    run.csv("limits_chaos.csv", _table(TABLE_HEADER, table.as_rows()))
    return {"meta": table.meta, "chaos_entropy": table.column("chaos_entropy").tolist()}


def cmd_limits_concentrate(run: Run) -> dict:
    s = run.sec
    setup = _setup(run, dt=s["dt"], runs=s["runs"], max_states=s["max_states"])
    table = concentration_experiment(setup, s["ns"], run.need("f"), s["t"])
    run.csv("limits_concentrate.csv", _table(TABLE_HEADER, table.as_rows()))
    return {"meta": table.meta, "var_obs": table.column("var_obs").tolist()}


def cmd_limits_superpose(run: Run) -> dict:
    s = run.sec
    spec = EnsembleSpec(run.need("atoms"), run.need("weights"), s["samples"], RngSpec(run.seed, 0))
    rep = superposition_mc(run.ts, run.k, spec, s["T"], SolverOptions(dt=s["dt"]))
    se = rep.stderr["I_infty_estimate"]
    run.csv(
        "limits_superpose.csv",
        _table(TABLE_HEADER, [[s["samples"], "I_infty_mc", rep.I_infty_estimate, 0.0, abs(rep.I_infty_estimate), se]]),
    )
    return rep.as_dict()


HANDLERS: Dict[Tuple[str, ...], Callable[[Run], dict]] = {
    ("validate",): cmd_validate,
    ("mf", "solve"): cmd_mf_solve,
    ("mf", "edp"): cmd_mf_edp,
    ("particles", "simulate"): cmd_particles_simulate,
    ("fke", "solve"): cmd_fke_solve,
    ("fke", "edp"): cmd_fke_edp,
    ("fke", "balance"): cmd_fke_balance,
    ("limits", "entropy"): cmd_limits_entropy,
    ("limits", "chaos"): cmd_limits_chaos,
    ("limits", "concentrate"): cmd_limits_concentrate,
    ("limits", "superpose"): cmd_limits_superpose,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config (default: bundled two-site canonical config)")
    common.add_argument("--seed", type=int, help="master seed for all randomness (overrides config)")
    common.add_argument("--json", action="store_true", help="print a machine-readable summary on stdout")
    common.add_argument("--out-dir", default="out", help="directory for CSV/JSON outputs (default: out)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config entry, e.g. --set mf.T=2.0")

    parser = argparse.ArgumentParser(prog="bpdl", description="Birth/death population toolkit on finite trait spaces.")
    groups = parser.add_subparsers(dest="group", required=True)
    subs: Dict[str, argparse._SubParsersAction] = {}
    for cmd, section in COMMANDS.items():
        if len(cmd) == 1:
            p = groups.add_parser(cmd[0], parents=[common], help="check a config and its kernel")
        else:
            if cmd[0] not in subs:
                g = groups.add_parser(cmd[0], help=f"{cmd[0]} commands")
                subs[cmd[0]] = g.add_subparsers(dest="command", required=True)
            p = subs[cmd[0]].add_parser(cmd[1], parents=[common])
        p.set_defaults(cmd=cmd, section=section)
        for key in cfgmod.SECTIONS.get(section, {}):
            p.add_argument(f"--{key}", dest=f"opt_{key}", metavar="VALUE",
                           help=f"override [{section}] {key} (TOML literal)")
    return parser


def _resolve_config(args) -> dict:
    doc = cfgmod.load(args.config)
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        cfgmod.set_key(doc, key.strip(), cfgmod.parse_value(value.strip()))
    for name, value in vars(args).items():
        if name.startswith("opt_") and value is not None:
            cfgmod.set_key(doc, f"{args.section}.{name[4:]}", cfgmod.parse_value(value))
    if args.seed is not None:
        doc["seed"] = args.seed
    return cfgmod.validate(doc)


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    cmd = args.cmd
    try:
        cfg = _resolve_config(args)
        out_dir = Path(args.out_dir)
        r = Run(cfg, cfg["seed"], out_dir, args.section)
        summary = HANDLERS[cmd](r)
        summary = {"command": " ".join(cmd), "ok": True, **summary}
        if cmd != ("validate",):
            r.json("summary.json", summary)
            section_cfg = {k: cfg[k] for k in ("K", "gamma", "c", "seed") if k in cfg}
            if args.section:
                section_cfg[args.section] = cfg[args.section]
            write_manifest(section_cfg, out_dir / "manifest.json", command=" ".join(cmd), outputs=r.outputs)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        if args.json:
            sys.stdout.write(dumps({"command": " ".join(cmd), "ok": False, "error": str(exc), "exit_code": 1}))
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        if args.json:
            sys.stdout.write(dumps({"command": " ".join(cmd), "ok": False, "error": str(exc), "exit_code": 2}))
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1
    if args.json:
        sys.stdout.write(dumps(summary))
    else:
        print(f"{' '.join(cmd)}: ok", file=sys.stderr)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
