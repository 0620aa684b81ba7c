"""Command-line front end: ``rsmdp <command> [options]``.

Exit codes: 0 success, 2 invalid model, 3 Doeblin failure,
4 theorem contradiction, 5 iteration budget exceeded.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .certify import DEFAULT_ALPHAS, TheoremViolation, check_membership, verify_characterization
from .chain import check_doeblin, expected_hitting_time, tail_bound
from .evaluation import MarkovPolicy, finite_horizon_cost, long_run_average
from .fixtures import ladder_jstar, ladder_model, ladder_regime
from .model import (
    Mdp,
    ModelError,
    StationaryPolicy,
    dump_model,
    load_model_file,
    max_cost_norm,
    policy_count,
)
from .optimal import (
    DIVERGENCE_CAP,
    LEVEL_TOL,
    MAX_ITER,
    SOLVE_TOL,
    DoeblinFailure,
    level_sets,
    optimal_average,
    solve_optimality_equation,
    verify_minmax,
)
from .simulate import mc_certain_equivalent, mc_hitting_tail

log = logging.getLogger("rsmdp")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DOEBLIN = 3
EXIT_CONTRADICTION = 4
EXIT_BUDGET = 5


class CommandError(Exception):
    def __init__(self, code: int, report: dict):
        super().__init__(report.get("error", ""))
        self.code = code
        self.report = report


# ---------------------------------------------------------------------------
# output


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _flatten(obj, path, rows, states):
    if isinstance(obj, dict):
        for k, v in obj.items():
            _flatten(v, path + [str(k)], rows, states)
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _flatten(v, path + [str(i)], rows, states)
    elif len(path) > 1 and path[-1] in states:
        rows.append((".".join(path[:-1]), path[-1], obj))
    else:
        rows.append((".".join(path), "", obj))


def render(report: dict, fmt: str, states=()) -> str:
    report = _jsonable(report)
    if fmt == "json":
        return json.dumps(report, indent=2) + "\n"
    rows = []
    _flatten(report, [], rows, set(states))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "state", "value"])
    w.writerows(rows)
    return buf.getvalue()


def _emit(args, report: dict, states=()) -> None:
    text = render(report, args.output, states)
    if args.out and args.command != "example22":
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# helpers


def _load(args) -> Mdp:
    if not args.model:
        raise CommandError(EXIT_INVALID, {"valid": False, "error": "--model is required"})
    try:
        return load_model_file(args.model)
    except OSError as exc:
        raise CommandError(EXIT_INVALID, {"valid": False, "error": f"cannot read model: {exc}"})
    except ModelError as exc:
        raise CommandError(
            EXIT_INVALID,
            {
                "valid": False,
                "error": str(exc),
                "state": getattr(exc, "state", None),
                "action": getattr(exc, "action", None),
            },
        )


def _lambda(args) -> float:
    if args.lam is None or not args.lam > 0:
        raise CommandError(EXIT_INVALID, {"error": "--lambda must be given and positive"})
    return args.lam


def _state(m: Mdp, name) -> int:
    try:
        return m.state_index(name)
    except KeyError as exc:
        raise CommandError(EXIT_INVALID, {"error": str(exc)})


def _doeblin(m: Mdp, args) -> dict:
    """Check the Doeblin condition at --z, or search every state; raise with a witness on failure."""
    zs = [_state(m, args.z)] if args.z is not None else range(m.n_states)
    first = None
    for z in zs:
        rep = check_doeblin(m, z)
        if rep.passed:
            return {"report": rep, "dict": rep.to_dict(m)}
        first = first or rep
    raise CommandError(EXIT_DOEBLIN, {"error": "Doeblin condition fails", "doeblin": first.to_dict(m)})


def _policy(m: Mdp, text: str | None) -> StationaryPolicy:
    if text is None:
        return StationaryPolicy(tuple(acts[0] for acts in m.admissible))
    try:
        return StationaryPolicy.from_names(m, [s.strip() for s in text.split(",")])
    except (KeyError, ValueError) as exc:
        raise CommandError(EXIT_INVALID, {"error": f"bad policy: {exc}"})


def _vec(m: Mdp, v) -> dict:
    return dict(zip(m.states, np.asarray(v, dtype=float).tolist()))


def _provenance(args, m: Mdp | None = None) -> dict:
    prov = {
        "version": __version__,
        "tolerance": args.tol,
        "max_iter": args.max_iter,
        "divergence_cap": DIVERGENCE_CAP,
        "level_tolerance": LEVEL_TOL,
        "seed": args.seed,
    }
    if m is not None and m.metadata.get("fixture") == "example22" and args.lam:
        prov["regime"] = ladder_regime(float(m.metadata["rho"]), args.lam)
    return prov


# ---------------------------------------------------------------------------
# commands


def cmd_validate(args) -> int:
    m = _load(args)
    _emit(
        args,
        {
            "valid": True,
            "states": list(m.states),
            "actions": list(m.actions),
            "stationary_policies": policy_count(m),
            "cost_norm": max_cost_norm(m),
        },
    )
    return EXIT_OK


def cmd_doeblin(args) -> int:
    m = _load(args)
    zs = [_state(m, args.z)] if args.z is not None else range(m.n_states)
    reports = [check_doeblin(m, z).to_dict(m) for z in zs]
    passed = [r for r in reports if r["pass"]]
    _emit(args, {"pass": bool(passed), "checks": reports})
    return EXIT_OK if passed else EXIT_DOEBLIN


def cmd_solve(args) -> int:
    m = _load(args)
    lam = _lambda(args)
    d = _doeblin(m, args)
    z = d["report"].z
    sol = optimal_average(m, lam, z=z, check=False)
    ok, resid = verify_minmax(m, sol.jstar)
    report = {
        "lambda": lam,
        "doeblin": d["dict"],
        **sol.to_dict(m),
        "level_sets": level_sets(sol.jstar).to_dict(m),
        "minmax": {"holds": ok, "residuals": _vec(m, resid)},
        "provenance": _provenance(args, m),
    }
    if args.optimality_equation:
        report["optimality_equation"] = solve_optimality_equation(
            m, lam, z, tol=args.tol, max_iter=args.max_iter
        ).to_dict(m)
    _emit(args, report, m.states)
    return EXIT_OK


def cmd_certify(args) -> int:
    m = _load(args)
    lam = _lambda(args)
    d = _doeblin(m, args)
    z = d["report"].z
    alphas = args.alpha or list(DEFAULT_ALPHAS)
    if any(not 0 < a < 1 for a in alphas):
        raise CommandError(EXIT_INVALID, {"error": "every --alpha must lie in (0, 1)"})
    opts = {"tol": args.tol, "max_iter": args.max_iter}
    try:
        rep = verify_characterization(m, lam, z, alphas, strict=False, **opts)
    except TheoremViolation as exc:
        raise CommandError(EXIT_CONTRADICTION, {"error": str(exc), "doeblin": d["dict"]})
    probe = check_membership(m, lam, rep.jstar, **opts)
    report = {
        "doeblin": d["dict"],
        **rep.to_dict(m),
        "jstar_probe": {
            "status": probe.status,
            "reason": probe.report.reason,
            "iterations": probe.report.iterations,
        },
        "provenance": _provenance(args, m),
    }
    failures = []
    code = EXIT_OK
    for r in rep.results:
        if not r.certificate.certified:
            failures.append(f"alpha={r.alpha}: {r.certificate.status} ({r.certificate.report.reason})")
            budget = "budget" in r.certificate.report.reason
            code = max(code, EXIT_BUDGET if budget else EXIT_CONTRADICTION)
        elif r.identity_error > 1e-12:
            failures.append(f"alpha={r.alpha}: identity error {r.identity_error}")
            code = max(code, EXIT_CONTRADICTION)
        if not np.all(np.isfinite(r.deviation)) or r.deviation[z] > 1e-9:
            failures.append(f"alpha={r.alpha}: deviation function infinite or positive at z")
            code = max(code, EXIT_CONTRADICTION)
    if not rep.monotone:
        failures.append("gaps do not shrink with alpha")
        code = max(code, EXIT_CONTRADICTION)
    report["failures"] = failures
    _emit(args, report, m.states)
    return code


def cmd_example22(args) -> int:
    if args.rho is None or not 0 < args.rho < 1:
        raise CommandError(EXIT_INVALID, {"error": "--rho must lie in (0, 1)"})
    lam = _lambda(args)
    if not args.out:
        raise CommandError(EXIT_INVALID, {"error": "--out PATH is required"})
    m = ladder_model(args.rho)
    out = Path(args.out)
    out.write_text(dump_model(m) + "\n")
    sidecar = out.with_name(out.stem + ".expected.json")
    expected = {
        "rho": args.rho,
        "lambda": lam,
        "regime": ladder_regime(args.rho, lam),
        "jstar": _vec(m, ladder_jstar(args.rho, lam)),
        "cost_norm": 2.0,
    }
    sidecar.write_text(render(expected, "json"))
    sys.stdout.write(render({"model": str(out), "expected": str(sidecar), **expected}, args.output, m.states))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    m = _load(args)
    lam = _lambda(args)
    f = _policy(m, args.policy)
    report = {
        "lambda": lam,
        "policy": f.names(m),
        "long_run_average": _vec(m, long_run_average(m, f, lam)),
    }
    if args.horizon:
        jn = finite_horizon_cost(m, MarkovPolicy.stationary(m, f, args.horizon), lam, args.horizon)
        report["horizon"] = args.horizon
        report["finite_horizon_cost"] = _vec(m, jn)
        report["finite_horizon_average"] = _vec(m, jn / args.horizon)
    if args.z is not None:
        z = _state(m, args.z)
        report["expected_hitting_time"] = _vec(m, expected_hitting_time(m, f, z))
        try:
            beta0, beta = tail_bound(m, f, z)
            report["tail_bound"] = {"beta0": beta0, "beta": beta}
        except ValueError as exc:
            report["tail_bound"] = {"error": str(exc)}
    _emit(args, report, m.states)
    return EXIT_OK


def cmd_simulate(args) -> int:
    m = _load(args)
    lam = _lambda(args)
    f = _policy(m, args.policy)
    x = _state(m, args.x if args.x is not None else m.states[0])
    n = args.horizon or 10
    est = mc_certain_equivalent(m, f, lam, x, n, args.samples, args.seed)
    report = {
        "lambda": lam,
        "policy": f.names(m),
        "start": m.states[x],
        "horizon": n,
        "samples": args.samples,
        "seed": args.seed,
        "certain_equivalent": {"estimate": est.estimate, "stderr": est.stderr, "heavy_tail": est.heavy_tail},
    }
    if args.z is not None:
        tail = mc_hitting_tail(m, f, _state(m, args.z), n, args.samples, args.seed)
        report["hitting_tail"] = {str(k): _vec(m, tail[k]) for k in range(n + 1)}
    _emit(args, report, m.states)
    return EXIT_OK


COMMANDS = {
    "validate": (cmd_validate, "validate a model file"),
    "doeblin": (cmd_doeblin, "check the simultaneous Doeblin condition"),
    "solve": (cmd_solve, "optimal average cost, policies, level sets"),
    "certify": (cmd_certify, "certify alpha J* + (1 - alpha) ||C|| for a grid of alphas"),
    "example22": (cmd_example22, "write the three-state ladder model and its expected values"),
    "evaluate": (cmd_evaluate, "evaluate one stationary policy"),
    "simulate": (cmd_simulate, "Monte Carlo estimates for one stationary policy"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", metavar="PATH", help="model JSON file")
    common.add_argument("--lambda", dest="lam", type=float, metavar="FLOAT", help="risk coefficient (> 0)")
    common.add_argument("--alpha", type=float, action="append", metavar="FLOAT", help="damping factor in (0,1); repeatable")
    common.add_argument("--z", metavar="STATE", help="distinguished state (searched when omitted)")
    common.add_argument("--tol", type=float, default=SOLVE_TOL, metavar="FLOAT")
    common.add_argument("--max-iter", type=int, default=MAX_ITER, metavar="INT")
    common.add_argument("--seed", type=int, default=0, metavar="INT")
    common.add_argument("--output", choices=("json", "csv"), default="json")
    common.add_argument("--out", metavar="PATH", help="write the report here instead of stdout")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="rsmdp", description="Risk-sensitive average-cost MDP toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    parsers = {name: sub.add_parser(name, parents=[common], help=doc) for name, (_, doc) in COMMANDS.items()}
    parsers["solve"].add_argument(
        "--optimality-equation", action="store_true", help="also run relative value iteration at z"
    )
    parsers["example22"].add_argument("--rho", type=float, metavar="FLOAT")
    for name in ("evaluate", "simulate"):
        parsers[name].add_argument("--policy", metavar="A0,A1,...", help="action per state, in state order")
        parsers[name].add_argument("--horizon", type=int, metavar="INT")
    parsers["simulate"].add_argument("--x", metavar="STATE", help="start state")
    parsers["simulate"].add_argument("--samples", type=int, default=10_000, metavar="INT")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.tol <= 0 or args.max_iter <= 0:
        sys.stderr.write(render({"error": "--tol and --max-iter must be positive"}, "json"))
        return EXIT_INVALID
    func = COMMANDS[args.command][0]
    try:
        return func(args)
    except CommandError as exc:
        sys.stdout.write(render(exc.report, "json"))
        return exc.code
    except DoeblinFailure as exc:
        sys.stdout.write(render({"error": str(exc)}, "json"))
        return EXIT_DOEBLIN
    except TheoremViolation as exc:
        sys.stdout.write(render({"error": str(exc)}, "json"))
        return EXIT_CONTRADICTION


if __name__ == "__main__":
    sys.exit(main())
