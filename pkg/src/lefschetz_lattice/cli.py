"""
Command line interface
======================

::

    lefschetz-lattice [--out DIR] [--threads N] [--seed S] [--csv | --json] COMMAND ...

Commands take a scenario (a TOML path or the id of a bundled scenario):

``exhaustion-check``  nestedness, delta and U-regularity ratios per stage
``heat-trace``        graded and ungraded localized heat traces per (t, j)
``commutator-test``   localized commutator trace of the scenario's families
``index-verify``      both sides of the localized index and the verdicts
``scenario run``      ``commutator-test`` or ``index-verify``, by scenario content
``scenario list``     bundled scenarios

Per-stage tables go to CSV files in ``--out`` (default: the current
directory) and a summary goes to ``<id>-<command>-summary.json`` (or
``.csv``). The exit code is 0 iff every verdict passes, 1 if one fails and
2 on errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .asymptotic_trace import asymptotic_trace_test, families_from_spec
from .clifford_dirac import commutator_norm
from .config import bundled_scenarios, build_scenario, load_scenario
from .exhaustion_functional import tr_u_phi_functional, u_regularity_ratio
from .heat_engine import heat_family
from .index_verify import run_scenario, truncation_error_bound

log = logging.getLogger("lefschetz_lattice")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else str(x)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_csv(path: Path, rows) -> int:
    rows = list(rows)
    if not rows:
        path.write_text("")
        return 0
    fields = list(rows[0])
    for r in rows[1:]:
        fields += [k for k in r if k not in fields]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        w.writerows(rows)
    return len(rows)


def _write_summary(args, name: str, summary: dict) -> Path:
    out = Path(args.out)
    if args.format == "csv":
        path = out / f"{name}-summary.csv"
        flat = {}
        for k, v in summary.items():
            flat[k] = json.dumps(_jsonable(v)) if isinstance(v, (dict, list)) else _jsonable(v)
        write_csv(path, [flat])
    else:
        path = out / f"{name}-summary.json"
        path.write_text(json.dumps(_jsonable(summary), indent=2) + "\n")
    return path


def _finish(args, sc_id: str, command: str, tables: dict, summary: dict, verdicts: dict) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = f"{sc_id}-{command}"
    for label, rows in tables.items():
        write_csv(out / f"{name}-{label}.csv", rows)
    summary = {"scenario": sc_id, "command": command, "seed": args.seed, **summary,
               "verdicts": verdicts, "passed": all(verdicts.values())}
    path = _write_summary(args, name, summary)
    for k, v in verdicts.items():
        print(f"{sc_id} {command} {k}: {'PASS' if v else 'FAIL'}")
    print(f"summary: {path}")
    return 0 if all(verdicts.values()) else 1


# --- commands ---------------------------------------------------------------

def cmd_exhaustion_check(args) -> int:
    sc = build_scenario(load_scenario(args.scenario))
    plan = sc.plan
    radii = [float(r) for r in (args.r or sc.config["grids"]["r"])]
    chk = plan.check()
    rows = []
    for j in plan.stages:
        row = {"j": j, "n_M_j": len(plan.M(j)), "n_U_j": len(plan.U_j(j)), "vol_U_j": plan.vol_U(j)}
        for r in radii:
            row[f"u_ratio_r{r:g}"] = u_regularity_ratio(plan, r, j)
        rows.append(row)
    verdicts = {"nested": bool(chk["nested"])}
    if "delta_positive" in chk:
        verdicts["delta_positive"] = bool(chk["delta_positive"])
    last = [rows[-1][f"u_ratio_r{r:g}"] for r in radii]
    summary = {"exhausts": chk["exhausts"], "delta": chk.get("delta"), "last_u_ratios": last}
    return _finish(args, sc.id, "exhaustion-check", {"stages": rows}, summary, verdicts)


def cmd_heat_trace(args) -> int:
    sc = build_scenario(load_scenario(args.scenario))
    cfg, plan, pair, D = sc.config, sc.plan, sc.pair, sc.D
    tol = cfg["tolerances"]
    H = heat_family(D)
    rows, values = [], {}
    for t in sc.t_grid:
        for graded in (False, True):
            F = tr_u_phi_functional(plan, pair, H, t, graded, D.grading, tol["cluster_tol"],
                                    tol["burn_in"], cfg["exhaustion"]["rule"], threads=args.threads)
            values[(float(t), graded)] = F.value
            for j, vol, v in zip(F.stages, F.volumes, F.values):
                rows.append({"t": float(t), "graded": graded, "j": int(j), "vol_U_j": float(vol),
                             "value": float(v),
                             "truncation_bound": truncation_error_bound(plan, pair, t, j,
                                                                        D.bundle.fiber_dim)})
    certified = any(r["truncation_bound"] <= tol["truncation_tol"] for r in rows)
    summary = {"functional": [{"t": t, "graded": g, "value": v} for (t, g), v in values.items()],
               "commutator_norm_D_Phi": commutator_norm(D, pair, seed=args.seed)}
    return _finish(args, sc.id, "heat-trace", {"stages": rows}, summary, {"certified": certified})


def cmd_commutator_test(args) -> int:
    cfg = load_scenario(args.scenario)
    if "commutator" not in cfg:
        raise ValueError(f"scenario {cfg['id']!r} has no [commutator] block")
    sc = build_scenario(cfg)
    c = cfg["commutator"]
    tol = cfg["tolerances"]
    A, B = families_from_spec(sc.D, c)
    rep = asymptotic_trace_test(sc.pair, A, B, sc.plan, sc.t_grid, c.get("j_schedule"),
                                c.get("r", 1.0), c.get("tol", 1e-4), tol["cluster_tol"],
                                tol["burn_in"], cfg["exhaustion"]["rule"],
                                c.get("with_bounds", True), args.threads)
    stage_rows = []
    for t, F in zip(rep.t_values, rep.functionals):
        stage_rows += [{"t": float(t), **r} for r in F.rows()]
    summary = {"t": rep.t_values, "values": rep.values, "final_value": rep.final_value,
               "slope": rep.slope, "monotone": rep.monotone}
    tables = {"regions": rep.rows(), "stages": stage_rows}
    return _finish(args, sc.id, "commutator-test", tables, summary, {"asymptotic_trace": rep.passed})


def cmd_index_verify(args) -> int:
    cfg = load_scenario(args.scenario)
    rep = run_scenario(cfg, threads=args.threads)
    tables = {"analytic": rep.analytic_rows(), "geometric": rep.geometric_rows()}
    if rep.displacement is not None:
        tables["displacement"] = rep.displacement.rows()
    summary = rep.summary()
    summary.pop("verdicts")
    summary.pop("passed")
    summary.pop("scenario")
    return _finish(args, rep.scenario_id, "index-verify", tables, summary, rep.verdicts)


def cmd_scenario_run(args) -> int:
    cfg = load_scenario(args.file)
    if "commutator" in cfg:
        return cmd_commutator_test(argparse.Namespace(**{**vars(args), "scenario": args.file}))
    return cmd_index_verify(argparse.Namespace(**{**vars(args), "scenario": args.file}))


def cmd_scenario_list(args) -> int:
    for sid in bundled_scenarios():
        print(f"{sid:24s} {load_scenario(sid)['description']}")
    return 0


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lefschetz-lattice",
                                description="Localized Lefschetz index experiments on lattice models.")
    p.add_argument("--out", default=".", help="output directory for CSV tables and the summary")
    p.add_argument("--threads", type=int, default=1, help="worker threads for stage evaluation")
    p.add_argument("--seed", type=int, default=0, help="seed for randomized diagnostics")
    fmt = p.add_mutually_exclusive_group()
    fmt.add_argument("--csv", dest="format", action="store_const", const="csv",
                     help="write the summary as CSV")
    fmt.add_argument("--json", dest="format", action="store_const", const="json",
                     help="write the summary as JSON (default)")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(format="json")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("exhaustion-check", help="stage table of the exhaustion")
    s.add_argument("scenario")
    s.add_argument("--r", type=float, nargs="+", help="penumbra radii (default: grids.r)")
    s.set_defaults(func=cmd_exhaustion_check)

    s = sub.add_parser("heat-trace", help="localized heat traces per (t, j)")
    s.add_argument("scenario")
    s.set_defaults(func=cmd_heat_trace)

    s = sub.add_parser("commutator-test", help="asymptotic trace property")
    s.add_argument("scenario")
    s.set_defaults(func=cmd_commutator_test)

    s = sub.add_parser("index-verify", help="analytic and geometric sides")
    s.add_argument("scenario")
    s.set_defaults(func=cmd_index_verify)

    s = sub.add_parser("scenario", help="run or list scenarios")
    ss = s.add_subparsers(dest="action", required=True)
    r = ss.add_parser("run", help="run a scenario file or bundled id")
    r.add_argument("file")
    r.set_defaults(func=cmd_scenario_run)
    ls = ss.add_parser("list", help="list bundled scenarios")
    ls.set_defaults(func=cmd_scenario_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except SystemExit:
        raise
    except Exception as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        if args.verbose:
            raise
        return 2


if __name__ == "__main__":
    sys.exit(main())
