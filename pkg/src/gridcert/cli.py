"""Command-line front end.

    gridcert {build|eig|cert|simulate|sweep|heatmap}
             [--network F] [--conductors F] [--scenario F] [--out DIR]
             [--tol X] [--methods LIST] [--jobs N] [--seed N]
             [--axis mp|mq] [--pair I,K] [--bracket LO,HI] [--no-loads]

Structured reports are JSON, grids and trajectories CSV; every report
carries the resolved configuration and the tool version so a run can be
reproduced byte for byte.  Exit codes: 0 success, 1 validation/usage error,
2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .admittance import build_matrices
from .certificate import check_network
from .errors import GridCertError, NumericalError, ValidationError
from .network import parse_conductors, parse_network
from .reduced import assemble_state_space, eigenvalues
from .simulator import Disturbance, SolverOptions, classify, simulate
from .sweep import (
    ConductorScenario,
    RatingScenario,
    boundaries,
    boundary_rows,
    heatmap,
    heatmap_rows,
    region_grid,
    region_grid_rows,
    write_csv,
)

SCENARIO_SCHEMA = "gridcert-scenario/1"


def _parser():
    p = argparse.ArgumentParser(prog="gridcert", description="Small-signal stability toolkit for droop-controlled microgrids")
    p.add_argument("command", choices=["build", "eig", "cert", "simulate", "sweep", "heatmap"])
    p.add_argument("--network", help="network JSON file")
    p.add_argument("--conductors", help="conductor library JSON file")
    p.add_argument("--scenario", help="scenario JSON file")
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.add_argument("--tol", type=float, default=1e-3, help="bisection tolerance in droop percent")
    p.add_argument("--methods", default="cert,eig", help="comma list of methods for sweeps")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="parallel workers for grids")
    p.add_argument("--seed", type=int, default=0, help="seed echoed into reports")
    p.add_argument("--axis", default="mp_percent", help="sweep axis: mp|mq")
    p.add_argument("--pair", help="comma-separated bus pair for boundary sweeps, e.g. 828,830")
    p.add_argument("--bracket", default="0.01,50", help="bisection bracket LO,HI in droop percent")
    p.add_argument("--no-loads", action="store_true", help="strip loads from the network before analysis")
    p.add_argument("--version", action="version", version=f"gridcert {__version__}")
    return p


def _config_echo(args) -> dict:
    keys = ("command", "network", "conductors", "scenario", "out", "tol", "methods", "jobs", "seed", "axis", "pair", "bracket")
    cfg = {k: getattr(args, k, None) for k in keys}
    cfg["no_loads"] = bool(args.no_loads)
    cfg["version"] = __version__
    return cfg


def _dump_json(path: Path, payload: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_model(args):
    if not args.network:
        raise ValidationError("--network is required for this command")
    model = parse_network(args.network, conductors=args.conductors)
    if args.no_loads:
        model = model.without_loads()
    return model


def _load_scenario(args) -> dict:
    if not args.scenario:
        return {}
    raw = json.loads(Path(args.scenario).read_text())
    if raw.get("schema", SCENARIO_SCHEMA) != SCENARIO_SCHEMA:
        raise ValidationError(f"unsupported scenario schema {raw.get('schema')!r}")
    return raw


def _cmd_build(args, out: Path):
    model = _load_model(args)
    ms = build_matrices(model)
    report = {
        "config": _config_echo(args),
        "model": {
            "name": model.name,
            "buses": len(model.buses),
            "inverters": list(ms.bus_ids),
            "lines": len(model.lines),
            "loads": len(model.loads),
            "s_base_va": model.s_base,
            "v_base_volts": model.v_base,
        },
        "diagnostics": {k: v for k, v in ms.diagnostics.items()},
        "tau_s": ms.tau,
    }
    _dump_json(out / "model.json", report)
    print(f"built {model.name}: N={ms.n}, sym defect {ms.diagnostics['sym_defect']:.3e}")
    return 0


def _cmd_eig(args, out: Path):
    model = _load_model(args)
    rep = eigenvalues(assemble_state_space(build_matrices(model)))
    payload = {
        "config": _config_echo(args),
        "stable": rep.stable,
        "spectral_abscissa": rep.spectral_abscissa,
        "margin": rep.margin,
        "zero_mode_excluded": rep.zero_mode_excluded,
        "eigenvalues": [[float(z.real), float(z.imag)] for z in rep.eigenvalues],
    }
    _dump_json(out / "eigen.json", payload)
    write_csv(out / "eigenvalues.csv", ["re", "im"], [[float(z.real), float(z.imag)] for z in rep.eigenvalues])
    print(f"stable={rep.stable} spectral_abscissa={rep.spectral_abscissa:.6g}")
    return 0


def _cmd_cert(args, out: Path):
    model = _load_model(args)
    rep = check_network(build_matrices(model))
    def safe(x):
        return float(x) if np.isfinite(x) else None

    pairs = []
    for p in rep.pairs:
        pairs.append(
            {
                "pair": list(p.pair),
                "satisfied": p.satisfied,
                "conditions": {k: {"slack": safe(c["slack"]), "satisfied": c["satisfied"]} for k, c in p.conditions.items()},
                "c5_printed_slack": safe(p.c5_printed_slack),
                "c5_forms_disagree": p.c5_forms_disagree,
            }
        )
    payload = {
        "config": _config_echo(args),
        "certified": rep.certified,
        "regime_ok": rep.regime_ok,
        "regime_notes": list(rep.regime_notes),
        "pairs": pairs,
    }
    _dump_json(out / "certificate.json", payload)
    print(f"certified={rep.certified}  ({len(rep.pairs)} neighboring pairs)")
    width = max((len(f"{p.pair[0]}-{p.pair[1]}") for p in rep.pairs), default=4)
    print(f"{'pair':<{width}}  " + "  ".join(f"{c:>10}" for c in ("C1", "C2", "C3", "C4", "C5", "C6")) + "  verdict")
    for p in rep.pairs:
        slacks = "  ".join(f"{p.conditions[c]['slack']:>10.3g}" for c in ("C1", "C2", "C3", "C4", "C5", "C6"))
        print(f"{p.pair[0]}-{p.pair[1]:<{width - len(str(p.pair[0])) - 1}}  {slacks}  {'ok' if p.satisfied else 'VIOLATED'}")
    return 0


def _parse_disturbances(entries):
    return [
        Disturbance(
            time=float(e["time"]),
            bus=str(e["bus"]),
            quantity=str(e.get("quantity", "P_set")),
            delta=float(e["delta"]),
        )
        for e in entries
    ]


def _solver_options(sc: dict) -> SolverOptions:
    s = sc.get("solver", {})
    return SolverOptions(
        rtol=float(s.get("rtol", 1e-7)),
        atol_scale=float(s.get("atol_scale", 1e-9)),
        method=str(s.get("method", "Radau")),
        max_step=float(s.get("max_step", np.inf)),
        output_dt=float(s.get("output_dt", 1e-3)),
    )


def _cmd_simulate(args, out: Path):
    model = _load_model(args)
    sc = _load_scenario(args)
    horizon = float(sc.get("horizon_s", 5.0))
    dists = _parse_disturbances(sc.get("disturbances", []))
    droops = sc.get("droops")
    traj = simulate(model, dists, horizon, droops=droops, opts=_solver_options(sc))
    verdict = classify(traj) if traj.t.size and traj.t[-1] - traj.t_last_disturbance >= 2.0 else "unclassified"
    header = ["t"]
    for b in traj.bus_ids:
        header += [f"delta_{b}", f"omega_{b}", f"v_{b}", f"P_{b}", f"Q_{b}"]
    rows = []
    for k in range(len(traj.t)):
        row = [traj.t[k]]
        for j in range(len(traj.bus_ids)):
            row += [traj.delta[k, j], traj.omega[k, j], traj.v[k, j], traj.P_f[k, j], traj.Q_f[k, j]]
        rows.append(row)
    write_csv(out / "trajectory.csv", header, rows)
    _dump_json(
        out / "simulate.json",
        {
            "config": _config_echo(args),
            "horizon_s": horizon,
            "classification": verdict,
            "diverged": traj.diverged,
            "samples": int(len(traj.t)),
        },
    )
    print(f"simulated {horizon} s: classification={verdict} diverged={traj.diverged}")
    return 0


def _cmd_sweep(args, out: Path):
    model = _load_model(args)
    sc = _load_scenario(args)
    kind = sc.get("kind", "boundary" if (args.pair or sc.get("buses")) else "region")
    methods = [m.strip() for m in (sc.get("methods") or args.methods.split(",")) if m]
    if kind == "region":
        mp_lo, mp_hi = sc.get("mp_range", [0.1, 10.0])
        mq_lo, mq_hi = sc.get("mq_range", [0.1, 10.0])
        steps = sc.get("steps", [50, 50])
        mp = np.linspace(float(mp_lo), float(mp_hi), int(steps[0]))
        mq = np.linspace(float(mq_lo), float(mq_hi), int(steps[1]))
        grids = region_grid(model, mp, mq, methods=tuple(methods), jobs=args.jobs)
        header, rows = region_grid_rows(mp, mq, grids)
        write_csv(out / "region_grid.csv", header, rows)
        _dump_json(
            out / "sweep.json",
            {
                "config": _config_echo(args),
                "kind": "region",
                "counts": {m: int(g.sum()) for m, g in grids.items()},
                "cells": int(mp.size * mq.size),
            },
        )
        print("region grid: " + ", ".join(f"{m}: {int(g.sum())}/{g.size} pass" for m, g in grids.items()))
        return 0
    if kind != "boundary":
        raise ValidationError(f"unknown sweep scenario kind {kind!r}")
    if args.pair:
        buses = tuple(s.strip() for s in args.pair.split(","))
    else:
        buses = tuple(sc.get("buses") or ())
    if not buses:
        buses = None
    bracket = sc.get("bracket") or [float(x) for x in args.bracket.split(",")]
    tol = float(sc.get("tol", args.tol))
    axis = sc.get("axis", args.axis)
    dists = _parse_disturbances(sc.get("disturbances", []))
    res = boundaries(
        model,
        methods,
        bracket,
        buses=buses,
        axis=axis,
        tol=tol,
        disturbances=dists,
        horizon=float(sc.get("horizon_s", 5.0)),
        sim_opts=_solver_options(sc),
    )
    summary = {}
    for m, r in res.items():
        header, rows = boundary_rows(r)
        write_csv(out / f"boundary_{m}.csv", header, rows)
        summary[m] = r.value
    _dump_json(
        out / "sweep.json",
        {"config": _config_echo(args), "kind": "boundary", "axis": axis, "buses": list(buses or model.inverter_buses), "boundaries": summary},
    )
    print("boundaries: " + ", ".join(f"{m}={v:.4g}%" for m, v in summary.items()))
    return 0


def _cmd_heatmap(args, out: Path):
    model = _load_model(args)
    sc = _load_scenario(args)
    if not sc:
        raise ValidationError("heatmap needs a --scenario file with pairs and a scenario block")
    pairs = [tuple(p) for p in sc["pairs"]]
    sdef = sc["scenario"]
    stype = sdef.get("type")
    if stype == "conductor":
        if not args.conductors:
            raise ValidationError("conductor scenarios need --conductors")
        scenario = ConductorScenario(values=tuple(sdef["values"]), library=parse_conductors(args.conductors))
    elif stype == "rating":
        scenario = RatingScenario(values=tuple(float(v) for v in sdef["values"]), vary=sdef.get("vary", "second"))
    else:
        raise ValidationError(f"unknown heatmap scenario type {stype!r}")
    table = heatmap(
        model,
        pairs,
        scenario,
        ref_method=sc.get("ref_method", "eig"),
        bracket=tuple(sc.get("bracket", (1e-2, 50.0))),
        tol=float(sc.get("tol", args.tol)),
        axis=sc.get("axis", "mp_percent"),
    )
    header, rows = heatmap_rows(table)
    write_csv(out / "heatmap.csv", header, rows)
    _dump_json(
        out / "heatmap.json",
        {
            "config": _config_echo(args),
            "ref_method": table.ref_method,
            "rows": table.rows,
            "columns": [str(c) for c in table.columns],
            "values": [[float(v) for v in row] for row in table.values],
            "boundaries": {f"{k[0]}|{k[1]}": v for k, v in sorted(table.boundaries.items())},
        },
    )
    print(f"heatmap {len(table.rows)}x{len(table.columns)} written (ref={table.ref_method})")
    return 0


COMMANDS = {
    "build": _cmd_build,
    "eig": _cmd_eig,
    "cert": _cmd_cert,
    "simulate": _cmd_simulate,
    "sweep": _cmd_sweep,
    "heatmap": _cmd_heatmap,
}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, out)
    except (ValidationError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (NumericalError, GridCertError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
