"""``gwinf`` command line.

Exit codes: 0 success, 1 validation failure, 2 numeric failure (including a
theorem check that does not pass), 3 I/O failure, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Sequence

import numpy as np

from . import asymptotics as asy
from . import gfiter, meanmatrix, montecarlo, reporting
from .model import ModelSpec, SpecError, build_model, load_spec, validate_spec

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO, EXIT_USAGE = 0, 1, 2, 3, 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--model", required=True, help="model JSON path or bundled model name")
    common.add_argument("--truncation", type=int, help="override truncation_N")
    common.add_argument("--tail-policy", choices=["discard", "project"], help="override tail policy")
    common.add_argument("--n", type=int, default=1000, help="generations / horizon")
    common.add_argument("--trials", type=int, default=100_000)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None, help="default: $GWINF_THREADS or 1")
    common.add_argument("--csv", help="CSV output path")
    common.add_argument("--json", help="JSON output path (default stdout)")

    p = _Parser(prog="gwinf", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("validate", parents=[common], help="check a model spec")
    sub.add_parser("matrix", parents=[common], help="eigenvectors and class checks")
    sub.add_parser("iterate", parents=[common], help="generating-function iteration at s = 0")
    fit = sub.add_parser("phi-fit", parents=[common], help="sample Phi and fit the tail index")
    fit.add_argument("--points", type=int, default=40)
    pr = sub.add_parser("predict", parents=[common], help="survival prediction from Phi")
    pr.add_argument("--points", type=int, default=40)
    pr.add_argument("--method", choices=["closed", "quadrature", "auto"], default="auto")
    pr.add_argument("--with-iteration", action="store_true", help="add the iterated q(n) for comparison")
    sim = sub.add_parser("simulate", parents=[common], help="Monte Carlo survival estimates")
    sim.add_argument("--start-type", type=int, default=1)
    sim.add_argument("--record-at", type=_ints, default=[])
    y = sub.add_parser("yaglom", parents=[common], help="conditional Laplace transforms")
    y.add_argument("--start-type", type=int, default=1)
    y.add_argument("--t", type=_floats, default=[0.5, 1.0, 2.0])
    ver = sub.add_parser("verify", parents=[common], help="one-shot theorem report")
    ver.add_argument("--mc-n", type=int, default=200, help="Monte Carlo horizon")
    ver.add_argument("--start-types", type=_ints, default=[1, 2])
    ver.add_argument("--t", type=_floats, default=[0.5, 1.0, 2.0])
    return p


def _load(args) -> ModelSpec:
    spec = load_spec(args.model)
    if args.truncation:
        spec = spec.replace(truncation_N=args.truncation)
    if args.tail_policy:
        spec = spec.replace(tail_policy=args.tail_policy)
    return spec


def _prepare(spec: ModelSpec):
    model = build_model(spec)
    M = meanmatrix.build_truncated(model)
    es = meanmatrix.eigen_pair(M)
    return model, M, es


def _emit(args, spec: ModelSpec, body: dict) -> None:
    cfg = {k: v for k, v in vars(args).items() if k not in ("json", "csv", "threads")}
    cfg["spec"] = spec.to_dict()
    body = dict(body)
    body["provenance"] = reporting.provenance(cfg, args.seed)
    reporting.write_json(args.json, body)


def cmd_validate(args) -> int:
    spec = _load(args)
    rep = validate_spec(spec)
    _emit(args, spec, {"command": "validate", "report": rep.to_dict()})
    return EXIT_OK if rep.valid else EXIT_VALIDATION


def cmd_matrix(args) -> int:
    spec = _load(args)
    model, M, es = _prepare(spec)
    rep = meanmatrix.check_class_m1(model, M, es)
    if args.csv:
        reporting.write_eigen_csv(args.csv, es)
    _emit(args, spec, {
        "command": "matrix",
        "eigen": {"rho": es.rho, "U": es.U, "residual_left": es.residual_left,
                  "residual_right": es.residual_right, "iterations": es.iterations},
        "tail_bound": M.tail_bound,
        "W": M.W,
        "class_report": rep.to_dict(),
    })
    return EXIT_OK


def cmd_iterate(args) -> int:
    spec = _load(args)
    model, M, es = _prepare(spec)
    trace = gfiter.survival_curve(model, args.n, es, keep=None)
    if args.csv:
        reporting.write_trace_csv(args.csv, trace)
    diag = gfiter.ratio_diagnostic(trace, es)
    _emit(args, spec, {
        "command": "iterate",
        "n": args.n,
        "q_final": float(trace.q[-1]),
        "sup_Q_final": float(trace.sup_Q[-1]),
        "ratio_sup_final": float(trace.ratio_sup[-1]),
        "ratio_n0": diag.n0,
        "first_positive_extinction_max": int(trace.first_extinction.max()),
    })
    return EXIT_OK


def _fit(model, es, points):
    curve = gfiter.phi_curve(model, es, n_points=points)
    return curve, asy.fit_alpha(curve)


def cmd_phi_fit(args) -> int:
    spec = _load(args)
    model, M, es = _prepare(spec)
    curve, fit = _fit(model, es, args.points)
    if args.csv:
        reporting.write_csv(args.csv, ["x", "phi", "ell_hat"], zip(curve.x, curve.phi, fit.ell_values))
    _emit(args, spec, {
        "command": "phi-fit",
        "alpha_hat": fit.alpha_hat,
        "ell_constant": fit.ell_constant,
        "fit_rmse": fit.fit_rmse,
        "U": curve.U,
    })
    return EXIT_OK


def cmd_predict(args) -> int:
    spec = _load(args)
    model, M, es = _prepare(spec)
    curve, fit = _fit(model, es, args.points)
    n_grid = np.unique(np.geomspace(1, args.n, 60).astype(int))
    method = {"closed": asy.Method.CLOSED_FORM, "quadrature": asy.Method.QUADRATURE, "auto": None}[args.method]
    pred = asy.predict_q(curve, 1.0, n_grid, method=method)
    cols = [pred.n, pred.q_pred, pred.ell1_proxy]
    header = ["n", "q_pred", "ell1_proxy"]
    if args.with_iteration:
        trace = gfiter.survival_curve(model, args.n, es, keep=None, with_phi=False)
        cols.append(trace.q[n_grid])
        header.append("q_iterated")
    if args.csv:
        reporting.write_csv(args.csv, header, zip(*cols))
    _emit(args, spec, {
        "command": "predict",
        "method": pred.method.value,
        "alpha": pred.alpha,
        "q_pred_final": float(pred.q_pred[-1]),
        "ell1_proxy_final": float(pred.ell1_proxy[-1]),
    })
    return EXIT_OK


def _simulate(args, model, start_type, record_at=()):
    cfg = montecarlo.SimConfig(root_seed=args.seed, trials=args.trials, horizon=args.n,
                               start_type=start_type, record_at=tuple(record_at), threads=args.threads)
    return montecarlo.run_trials(cfg, model)


def cmd_simulate(args) -> int:
    spec = _load(args)
    model, M, es = _prepare(spec)
    rec = _simulate(args, model, args.start_type, args.record_at)
    trace = gfiter.survival_curve(model, args.n, es, keep=list(rec.checkpoints), with_phi=False)
    if args.csv:
        reporting.write_trials_csv(args.csv, rec)
    rows = []
    for n in rec.checkpoints:
        est = montecarlo.estimate_survival(rec, n)
        ref = float(trace.Q_vectors[n][args.start_type - 1])
        rows.append({**reporting.to_jsonable(est), "Q_gfiter": ref, "zscore": est.zscore(ref)})
    _emit(args, spec, {"command": "simulate", "start_type": args.start_type, "estimates": rows})
    return EXIT_OK


def cmd_yaglom(args) -> int:
    spec = _load(args)
    model, M, es = _prepare(spec)
    trace = gfiter.survival_curve(model, args.n, es, keep=None, with_phi=False)
    q_n = float(trace.q[-1])
    rec = _simulate(args, model, args.start_type)
    curve, fit = _fit(model, es, 40)
    out = []
    for t in args.t:
        est = montecarlo.empirical_laplace(rec, args.n, t, q_n, seed=args.seed)
        out.append({"t": t, "estimate": est.estimate, "ci": [est.ci_low, est.ci_high],
                    "limit": asy.xi_laplace(t, fit.alpha_hat), "survivors": est.survivors})
    if args.csv:
        reporting.write_conditioned_csv(args.csv, rec, args.n, q_n)
    _emit(args, spec, {"command": "yaglom", "n": args.n, "q_n": q_n, "alpha_hat": fit.alpha_hat,
                       "start_type": args.start_type, "transforms": out})
    return EXIT_OK


def cmd_verify(args) -> int:
    spec = _load(args)
    vrep = validate_spec(spec)
    if vrep.linear:
        report = asy.TheoremReport(refused=True, reason="F(s) = Ms: excluded by the theorem hypothesis")
        _emit(args, spec, {"command": "verify", "theorem_report": report.to_dict()})
        return EXIT_VALIDATION
    model, M, es = _prepare(spec)
    cls = meanmatrix.check_class_m1(model, M, es)
    trace = gfiter.survival_curve(model, args.n, es, keep=None)
    curve, fit = _fit(model, es, 40)
    mc_trace = gfiter.survival_curve(model, args.mc_n, es, keep=None, with_phi=False)
    q_n = float(mc_trace.q[-1])
    ests = []
    for st in args.start_types:
        if st > model.N:
            continue
        cfg = montecarlo.SimConfig(root_seed=args.seed + st, trials=args.trials, horizon=args.mc_n,
                                   start_type=st, threads=args.threads)
        rec = montecarlo.run_trials(cfg, model)
        for t in args.t:
            ests.append(montecarlo.empirical_laplace(rec, args.mc_n, t, q_n, seed=args.seed))
    report = asy.verify_theorem(model, es, trace, fit, ests, t_grid=args.t)
    _emit(args, spec, {
        "command": "verify",
        "class_flags": cls.flags,
        "alpha_hat": fit.alpha_hat,
        "theorem_report": report.to_dict(),
    })
    return EXIT_OK if report.all_passed else EXIT_NUMERIC


COMMANDS = {
    "validate": cmd_validate,
    "matrix": cmd_matrix,
    "iterate": cmd_iterate,
    "phi-fit": cmd_phi_fit,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "yaglom": cmd_yaglom,
    "verify": cmd_verify,
}


def execute(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command != "validate":
        try:
            spec = _load(args)
        except (OSError, json.JSONDecodeError) as exc:
            sys.stderr.write(f"gwinf: cannot read model: {exc}\n")
            return EXIT_IO
        rep = validate_spec(spec)
        if not rep.valid:
            sys.stderr.write("gwinf: invalid model: " + "; ".join(rep.violations) + "\n")
            return EXIT_VALIDATION
    try:
        return COMMANDS[args.command](args)
    except (OSError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"gwinf: I/O failure: {exc}\n")
        return EXIT_IO
    except (SpecError, KeyError, TypeError) as exc:
        sys.stderr.write(f"gwinf: validation failure: {exc}\n")
        return EXIT_VALIDATION
    except (meanmatrix.NumericError, asy.FitError, montecarlo.FewSurvivorsError, ValueError,
            FloatingPointError) as exc:
        sys.stderr.write(f"gwinf: numeric failure: {exc}\n")
        return EXIT_NUMERIC


def main() -> None:
    raise SystemExit(execute())


if __name__ == "__main__":
    main()
