"""Command-line entry point.

Subcommands:
  solve    solve a model by the grid sweep or constraint generation
  oracle   brute-force value / per-policy growth rates
  verify   re-check a solve report against the dynamic-programming equations
  example  closed forms and diagnostics for the built-in two-state chain

Reports are JSON with a fixed key order so byte-level diffs are meaningful;
only the "timings" block varies between identical runs.  Exit codes:
0 success, 2 model error, 3 guard violation, 4 solver failure,
5 verification residual above tolerance.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import certify, game, oracle
from .errors import GuardError, ModelError
from .lp import LpError
from .model import MdpModel, StationaryPolicy, parse_model

EXIT_OK = 0
EXIT_MODEL = 2
EXIT_GUARD = 3
EXIT_SOLVER = 4
EXIT_RESIDUAL = 5

REPORT_VERSION = 1


def canonical_json(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False)


def model_digest(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _load_raw(path: str) -> tuple[dict, MdpModel]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ModelError(f"cannot read model file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ModelError(f"model file {path} is not valid JSON: {exc}") from exc
    return raw, parse_model(raw)


def load_policy(path: str, model: MdpModel) -> StationaryPolicy:
    """Read a policy file: {"policy": {state: action}} for pure policies or
    {"policy": {state: {action: weight}}} for randomized ones."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelError(f"cannot read policy file {path}: {exc}") from exc
    table = raw.get("policy") if isinstance(raw, dict) else None
    if not isinstance(table, dict):
        raise ModelError("policy file must contain a 'policy' object")
    act_index = {a: u for u, a in enumerate(model.actions)}
    rows = np.zeros((model.num_states, model.num_actions))
    for i, state in enumerate(model.states):
        if state not in table:
            raise ModelError(f"policy file misses state {state!r}")
        entry = table[state]
        if isinstance(entry, str):
            if entry not in act_index:
                raise ModelError(f"unknown action {entry!r} at state {state!r}")
            rows[i, act_index[entry]] = 1.0
        elif isinstance(entry, dict):
            for a, wgt in entry.items():
                if a not in act_index:
                    raise ModelError(f"unknown action {a!r} at state {state!r}")
                rows[i, act_index[a]] = float(wgt)
        else:
            raise ModelError(f"policy entry for state {state!r} must be an action "
                             "name or an action->weight object")
    return StationaryPolicy(rows)


def _vec(a) -> list:
    return [float(x) for x in np.asarray(a).ravel()]


def _mat(a) -> list:
    return [[float(x) for x in row] for row in np.asarray(a)]


def _policy_map(model: MdpModel, pure) -> dict:
    return {model.states[i]: model.actions[u] for i, u in enumerate(pure.choice)}


def _oracle_block(model: MdpModel, lambda_solve: float):
    try:
        bf = oracle.brute_force_lambda_star(model)
    except GuardError:
        return None
    return {
        "value": bf.value,
        "per_state": _vec(bf.per_state),
        "argmin": _policy_map(model, bf.argmin),
        "converged": bf.converged,
        "gap": abs(lambda_solve - bf.value),
    }


def _certificate_block(model: MdpModel, phi, v, level_tol=certify.DEFAULT_LEVEL_TOL):
    cert = certify.build_certificate(model, phi, v, level_tol)
    tw = cert.residual_star
    return cert, {
        "levels": [[model.states[i] for i in lvl] for lvl in cert.partition.levels],
        "level_values": _vec(cert.partition.values),
        "residual_dp1": _vec(cert.residual_dp1),
        "residual_dp2": _vec(cert.residual_dp2),
        "twisted_top": tw.top,
        "twisted_eigen": _vec(tw.eigen),
        "twisted_averaging": _vec(tw.averaging),
    }


def _normalized_potentials(phi, v) -> np.ndarray:
    """Shift potentials so each level's minimum is 0; the certification
    residuals are invariant under per-level shifts, so this only makes
    reports comparable across runs and gauge choices."""
    try:
        partition = certify.build_partition(phi)
    except certify.CertificationError:
        return np.asarray(v, dtype=float)
    out = np.asarray(v, dtype=float).copy()
    for members in partition.levels:
        out[list(members)] -= out[list(members)].min()
    return out


def _solution_block(model: MdpModel, sol: game.GameSolution) -> dict:
    return {
        "phi_star": _vec(sol.value),
        "potentials": _vec(_normalized_potentials(sol.value, sol.potentials)),
        "q_star": _mat(sol.maximizer.entries),
        "v_star": _policy_map(model, sol.minimizer_pure),
        "minimizer": _mat(sol.minimizer.rows),
        "dual_w": _vec(sol.dual_w),
        "duality_gap": sol.duality_gap,
        "num_constraints": sol.num_constraints,
        "flagged_states": [model.states[i] for i in sol.flagged_states],
    }


def cmd_solve(args, argv) -> int:
    raw, model = _load_raw(args.model)
    timings = {}
    t0 = time.perf_counter()
    if args.method == "grid":
        rep = game.solve_sequence(model, args.n_start, args.n_max, args.stop_tol)
        sol = rep.final
        method_block = {
            "resolutions": list(rep.resolutions),
            "beta_trace": [_vec(b) for b in rep.beta_trace],
            "stopping_reason": rep.stopping_reason,
            "feasibility_violation": rep.feasibility_violation,
            "feasibility_samples": rep.feasibility_samples,
        }
    else:
        sol = game.solve_congen(model, args.inner_tol, args.max_rounds)
        method_block = {
            "rounds": sol.rounds,
            "certified": sol.certified,
            "inner_tol": args.inner_tol,
        }
    timings["solve"] = time.perf_counter() - t0
    lambda_bar = sol.lambda_bar

    t0 = time.perf_counter()
    oracle_block = _oracle_block(model, lambda_bar)
    timings["oracle"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        _, cert_block = _certificate_block(model, sol.value, sol.potentials)
    except certify.CertificationError as exc:
        cert_block = {"error": str(exc)}
    timings["certify"] = time.perf_counter() - t0

    report = {
        "report_version": REPORT_VERSION,
        "command": argv,
        "model_digest": model_digest(raw),
        "method": args.method,
        **method_block,
        "lambda_bar": lambda_bar,
        **_solution_block(model, sol),
        "oracle": oracle_block,
        "certificate": cert_block,
        "timings": timings,
    }
    print(f"lambda_bar = {lambda_bar:.6f}")
    print("v* :", ", ".join(f"{s} -> {a}" for s, a in
                            _policy_map(model, sol.minimizer_pure).items()))
    _emit(report, args.out)
    return EXIT_OK


def cmd_oracle(args, argv) -> int:
    raw, model = _load_raw(args.model)
    timings = {}
    t0 = time.perf_counter()
    if args.policy:
        policy = load_policy(args.policy, model)
        rates = oracle.growth_rate(model, policy)
        body = {
            "mode": "policy",
            "policy_file": args.policy,
            "per_state": _vec(rates.lam),
            "lambda_max": rates.lambda_max,
            "iterations": rates.iterations,
            "converged": rates.converged,
        }
        print(f"lambda_max = {rates.lambda_max:.6f}")
    else:
        bf = oracle.brute_force_lambda_star(model)
        body = {
            "mode": "brute_force",
            "value": bf.value,
            "per_state": _vec(bf.per_state),
            "argmin": _policy_map(model, bf.argmin),
            "converged": bf.converged,
        }
        print(f"lambda_bar = {bf.value:.6f}")
        print("argmin :", ", ".join(f"{s} -> {a}" for s, a in body["argmin"].items()))
    timings["oracle"] = time.perf_counter() - t0
    report = {
        "report_version": REPORT_VERSION,
        "command": argv,
        "model_digest": model_digest(raw),
        **body,
        "timings": timings,
    }
    _emit(report, args.out)
    return EXIT_OK


def cmd_verify(args, argv) -> int:
    raw, model = _load_raw(args.model)
    try:
        solution = json.loads(Path(args.solution).read_text(encoding="utf-8"))
        phi = np.asarray(solution["phi_star"], dtype=float)
        v = np.asarray(solution["potentials"], dtype=float)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"cannot read solution report {args.solution}: {exc}") from exc
    t0 = time.perf_counter()
    try:
        cert, cert_block = _certificate_block(model, phi, v)
    except certify.CertificationError as exc:
        report = {
            "report_version": REPORT_VERSION,
            "command": argv,
            "model_digest": model_digest(raw),
            "tolerance": args.tol,
            "passed": False,
            "error": str(exc),
        }
        print(f"FAIL: {exc}", file=sys.stderr)
        _emit(report, args.out)
        return EXIT_RESIDUAL
    elapsed = time.perf_counter() - t0
    # multiplicative residuals are compared relative to their own scale so
    # one tolerance covers both forms of the equations
    tw = cert.residual_star
    scaled_eigen = tw.eigen / (cert.lambda_twisted * cert.psi)
    scaled_avg = tw.averaging / np.maximum(cert.lambda_twisted, 1e-300)
    checks = {
        "dp1": cert.residual_dp1,
        "dp2": cert.residual_dp2,
        "twisted_eigen_rel": scaled_eigen,
        "twisted_averaging_rel": scaled_avg,
    }
    worst_name, worst_state, worst_val = None, None, -1.0
    for name, arr in checks.items():
        k = int(np.argmax(arr))
        if float(arr[k]) > worst_val:
            worst_name, worst_state, worst_val = name, k, float(arr[k])
    passed = worst_val <= args.tol
    report = {
        "report_version": REPORT_VERSION,
        "command": argv,
        "model_digest": model_digest(raw),
        "tolerance": args.tol,
        "passed": passed,
        "worst": {"check": worst_name, "state": model.states[worst_state],
                  "residual": worst_val},
        **cert_block,
        "timings": {"certify": elapsed},
    }
    if passed:
        print(f"OK: worst residual {worst_val:.3e} ({worst_name}) within {args.tol:g}")
    else:
        print(f"FAIL: {worst_name} residual {worst_val:.3e} at state "
              f"{model.states[worst_state]} exceeds {args.tol:g}", file=sys.stderr)
    _emit(report, args.out)
    return EXIT_OK if passed else EXIT_RESIDUAL


def cmd_example(args, argv) -> int:
    ana = certify.analytic_example(args.rho)
    model = certify.two_state_model(args.rho)
    poisson_block = None
    if ana.supercritical:
        scan = certify.poisson_insolvability(args.rho)
        poisson_block = {
            "satisfying_pairs": scan.satisfying_pairs,
            "total_pairs": scan.total_pairs,
            "insolvable": scan.satisfying_pairs == 0 and scan.reduction_impossible,
        }
    t0 = time.perf_counter()
    rep = game.solve_sequence(model, 2, 8, 1e-4)
    elapsed = time.perf_counter() - t0
    gap = abs(rep.lambda_bar - ana.lambda_bar)
    report = {
        "report_version": REPORT_VERSION,
        "command": argv,
        "rho": args.rho,
        "supercritical": ana.supercritical,
        "phi_star": _vec(ana.phi_star),
        "q22": ana.q22,
        "lambda_bar": ana.lambda_bar,
        "poisson": poisson_block,
        "lp_lambda_bar": rep.lambda_bar,
        "lp_q22": float(rep.final.maximizer.entries[1, 1]),
        "lp_gap": gap,
        "timings": {"solve": elapsed},
    }
    print(f"lambda_bar = {ana.lambda_bar:.6f}  (q22 = {ana.q22:.6f})")
    if poisson_block is not None:
        print("poisson_insolvable =", str(poisson_block["insolvable"]).lower())
    print(f"lp solve gap = {gap:.3e}")
    _emit(report, args.out)
    return EXIT_OK


def _emit(report: dict, out: str | None) -> None:
    text = canonical_json(report)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="riskmdp",
        description="Risk-sensitive cost minimization on finite controlled "
                    "Markov chains via single-controller ergodic-game LPs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve a model and write a report")
    p.add_argument("--model", required=True)
    p.add_argument("--n-start", type=int, default=2)
    p.add_argument("--n-max", type=int, default=8)
    p.add_argument("--stop-tol", type=float, default=1e-4)
    p.add_argument("--method", choices=("grid", "congen"), default="grid")
    p.add_argument("--inner-tol", type=float, default=1e-6)
    p.add_argument("--max-rounds", type=int, default=50)
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("oracle", help="brute-force value or per-policy rates")
    p.add_argument("--model", required=True)
    p.add_argument("--policy")
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("verify", help="re-check a solve report")
    p.add_argument("--model", required=True)
    p.add_argument("--solution", required=True)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("example", help="built-in two-state chain diagnostics")
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_example)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, ["riskmdp"] + argv)
    except ModelError as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except GuardError as exc:
        print(f"guard violation: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (LpError, game.MonotonicityError, oracle.DegenerateChainError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
