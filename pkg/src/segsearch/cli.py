"""Command-line front end.

    segsearch equilibrium --scenario s.json [--out r.json] [--format json|csv]
    segsearch first-best | hosios | design | oracle | compare ...
    segsearch design --batch scenarios/ --out results/

Exit codes: 0 success, 2 invalid input, 3 solver failure, 4 failed model
assumption.  Failures print ``{"code", "message", "context"}`` to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from .designer import design
from .efficiency import check_hosios, hosios_compatible_split
from .equilibrium import solve_equilibrium
from .errors import SegSearchError, ValidationError
from .meeting import classify_odds
from .oracle import MAX_ENUM_N, enumerate_bp, find_u_bar, lp_value
from .planner import solve_first_best
from .scenario import Scenario, canonical_json, load_scenario

COMMANDS = ("equilibrium", "first-best", "hosios", "design", "oracle", "compare")
DEFAULT_ENUM_N = 8


def _rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["%.17g" % v if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def _equilibrium_rows(sc: Scenario, seg, eq):
    mf = sc.meeting
    rows = []
    for i, (w, x, t) in enumerate(zip(seg.weights, eq.means, eq.tightness)):
        m = float(mf.m(float(t)))
        buyer = mf.beta if t == 0 else m / float(t)
        rows.append([i, float(x), float(w), float(t), float(buyer), m, sc.k * float(w) * m * float(x)])
    return rows


EQ_HEADER = ["submarket_index", "posterior_mean", "weight", "tightness",
             "meet_prob_buyer", "meet_prob_seller", "surplus_contrib"]


def cmd_equilibrium(sc: Scenario, args):
    seg = sc.segmentation()
    eq = solve_equilibrium(sc.prior, seg, sc.meeting, sc.k, sc.split)
    out = {
        "u_star": eq.u_star,
        "tightness": eq.tightness,
        "buyer_payoff": eq.buyer_payoff,
        "total_surplus": eq.total_surplus,
        "active": eq.active.tolist(),
        "posterior_means": eq.means,
        "weights": seg.weights,
    }
    return out, (EQ_HEADER, _equilibrium_rows(sc, seg, eq))


def cmd_first_best(sc: Scenario, args):
    seg = sc.segmentation()
    fb = solve_first_best(sc.prior, seg, sc.meeting, sc.k)
    out = {
        "eta": fb.eta,
        "tightness": fb.tightness,
        "surplus": fb.total_surplus,
        "active": fb.active.tolist(),
        "posterior_means": fb.means,
        "weights": seg.weights,
    }
    rows = []
    for w, x, t in zip(seg.weights, fb.means, fb.tightness):
        meet = sc.k * float(w) * float(sc.meeting.m(float(t)))
        share = meet * float(x) / fb.total_surplus if fb.total_surplus > 0 else 0.0
        rows.append([float(x), float(w), float(t), meet, share])
    return out, (["submarket_mean", "weight", "tightness", "meetings", "surplus_share"], rows)


def cmd_hosios(sc: Scenario, args):
    tol = args.tol if args.tol is not None else sc.options.get("tol", 1e-7)
    lam_c = sc.options.get("lambda_at_cutoff")
    split = sc.split
    out = {}
    if lam_c is not None:
        hs = hosios_compatible_split(sc.prior, sc.meeting, sc.k, float(lam_c))
        split = hs.split
        out["lambda_table"] = hs.split.values
        out["clamped"] = hs.clamped
    rep = check_hosios(sc.prior, sc.meeting, sc.k, split, tol=tol)
    out.update(rep.to_dict())
    lam = split.on(sc.prior)
    rows = [[float(x), float(v)] for x, v in zip(sc.prior.grid, lam)]
    return out, (["theta", "lambda"], rows)


def _require_constant(sc: Scenario) -> float:
    if not sc.split.is_constant:
        raise ValidationError("this command needs a constant buyer share (lambda.kind = constant)")
    return sc.split.ell


def cmd_design(sc: Scenario, args):
    ell = _require_constant(sc)
    mesh = args.mesh if args.mesh is not None else sc.options.get("mesh")
    method = sc.options.get("method", "auto")
    res = design(sc.prior, sc.meeting, sc.k, ell, method=method, mesh=mesh)
    out = {
        "curvature": res.curvature.kind.value,
        "method": res.method,
        "segmentation": res.segmentation.to_dict(),
        "u_bar": res.u_bar,
        "surplus": res.surplus,
        "tightness": res.equilibrium.tightness,
        "posterior_means": res.equilibrium.means,
    }
    if res.cutoff is not None:
        out["theta_c"] = res.cutoff.theta_c
    if res.certificate is not None:
        out["certificate"] = res.certificate.to_dict()
    if res.alternative_surplus is not None:
        out["alternative_surplus"] = res.alternative_surplus
    if mesh is not None or sc.options.get("oracle"):
        u_lp = find_u_bar(sc.meeting, sc.prior, ell, mesh, sc.k)
        out["oracle_gap"] = abs(res.u_bar - u_lp) / ell
    seg = res.segmentation
    return out, (EQ_HEADER, _equilibrium_rows(sc, seg, res.equilibrium))


def cmd_oracle(sc: Scenario, args):
    mesh = args.mesh if args.mesh is not None else sc.options.get("mesh")
    exhaustive = bool(args.exhaustive or sc.options.get("exhaustive", False))
    max_n = args.max_n if args.max_n is not None else sc.options.get("max_n", DEFAULT_ENUM_N)
    out: dict = {}
    rows = []
    if sc.split.is_constant:
        u_bar = find_u_bar(sc.meeting, sc.prior, sc.split.ell, mesh, sc.k)
        sol = lp_value(sc.meeting, sc.prior, sc.split.ell, u_bar, mesh)
        out.update({"u_bar": u_bar, "value": sol.value, "support": sol.support,
                    "masses": sol.support_masses, "duality_gap": sol.duality_gap})
        rows = [[float(x), float(h)] for x, h in zip(sol.support, sol.support_masses)]
    if sc.prior.n <= min(int(max_n), MAX_ENUM_N):
        bp = enumerate_bp(sc.prior, sc.meeting, sc.k, sc.split, exhaustive=exhaustive, max_n=int(max_n))
        out["enumeration"] = dict(bp.to_dict(), mode="exhaustive" if exhaustive else "interval")
    elif not sc.split.is_constant:
        raise ValidationError("non-constant lambda needs enumeration; grid exceeds --max-n",
                              n=sc.prior.n, max_n=int(max_n))
    return out, (["point", "mass"], rows)


def cmd_compare(sc: Scenario, args):
    seg = sc.segmentation()
    fb = solve_first_best(sc.prior, seg, sc.meeting, sc.k)
    eq = solve_equilibrium(sc.prior, seg, sc.meeting, sc.k, sc.split)
    gap = eq.total_surplus / fb.total_surplus
    delta = eq.tightness - fb.tightness
    out = {
        "efficiency_gap": gap,
        "first_best": {"eta": fb.eta, "tightness": fb.tightness, "surplus": fb.total_surplus},
        "equilibrium": {"u_star": eq.u_star, "tightness": eq.tightness, "surplus": eq.total_surplus},
        "tightness_delta": delta,
        "curvature": classify_odds(sc.meeting).kind.value,
    }
    rows = [[i, float(x), float(w), float(a), float(b), float(d)]
            for i, (x, w, a, b, d) in enumerate(zip(fb.means, seg.weights, fb.tightness, eq.tightness, delta))]
    return out, (["submarket_index", "posterior_mean", "weight", "tightness_fb", "tightness_eq", "delta"], rows)


HANDLERS = {
    "equilibrium": cmd_equilibrium,
    "first-best": cmd_first_best,
    "hosios": cmd_hosios,
    "design": cmd_design,
    "oracle": cmd_oracle,
    "compare": cmd_compare,
}


def render(command: str, sc: Scenario, args, fmt: str) -> str:
    out, (header, rows) = HANDLERS[command](sc, args)
    if fmt == "csv":
        return _rows_to_csv(header, rows)
    out = dict(out, command=command)
    seed = args.seed if args.seed is not None else sc.seed
    if seed is not None:
        out["seed"] = seed
    return canonical_json(out)


def run(command: str, scenario_path, output_path=None, fmt: str = "json", args=None) -> int:
    """Run one scenario; returns the exit code."""
    if args is None:
        args = build_parser().parse_args([command, "--scenario", str(scenario_path)])
    try:
        if fmt not in ("json", "csv"):
            raise ValidationError(f"unknown format {fmt!r}")
        sc = load_scenario(scenario_path)
        text = render(command, sc, args, fmt)
    except SegSearchError as exc:
        sys.stderr.write(json.dumps(exc.to_dict(), sort_keys=True, default=_jsonable) + "\n")
        return exc.exit_code
    except (ValueError, FloatingPointError, ArithmeticError) as exc:
        err = {"code": "solver", "message": str(exc), "context": {"type": type(exc).__name__}}
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return 3
    if output_path is None:
        sys.stdout.write(text)
    else:
        try:
            Path(output_path).write_text(text)
        except OSError as exc:
            err = ValidationError(f"cannot write output: {exc}", path=str(output_path))
            sys.stderr.write(json.dumps(err.to_dict(), sort_keys=True) + "\n")
            return err.exit_code
    return 0


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    return str(o)


def run_batch(command: str, directory, out_dir, fmt: str, args) -> int:
    directory = Path(directory)
    if not directory.is_dir():
        err = ValidationError("batch path is not a directory", path=str(directory))
        sys.stderr.write(json.dumps(err.to_dict(), sort_keys=True) + "\n")
        return err.exit_code
    out_dir = Path(out_dir) if out_dir is not None else directory
    out_dir.mkdir(parents=True, exist_ok=True)
    worst = 0
    for path in sorted(directory.glob("*.json")):
        code = run(command, path, out_dir / f"{path.stem}.{command}.{fmt}", fmt, args)
        worst = max(worst, code)
    return worst


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segsearch", description="Segmented directed-search solvers.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--scenario", help="scenario JSON file")
        src.add_argument("--batch", help="directory of scenario JSON files")
        p.add_argument("--out", help="output file (directory with --batch); stdout if omitted")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--mesh", type=int, default=None, help="LP point-set size")
        p.add_argument("--tol", type=float, default=None, help="verification tolerance (hosios)")
        p.add_argument("--seed", type=int, default=None, help="echoed in the output")
        p.add_argument("--exhaustive", action="store_true", help="enumerate all set partitions")
        p.add_argument("--max-n", dest="max_n", type=int, default=None, help="largest grid to enumerate")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.batch is not None:
        return run_batch(args.command, args.batch, args.out, args.format, args)
    return run(args.command, args.scenario, args.out, args.format, args)


if __name__ == "__main__":
    sys.exit(main())
