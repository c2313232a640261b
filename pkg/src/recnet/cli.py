"""Command-line front end: ``recnet {gen,sim,fit,check,forecast,roc}``.

Every command writes its outputs plus ``<output>.manifest.json`` recording
the resolved configuration, seed, paths, library version and duration.
Exit codes: 0 success, 1 usage error, 2 numeric failure, 3 I/O failure.
"""
import argparse
import dataclasses
import json
import logging
import sys
import time

import numpy as np

from . import __version__
from .errors import ConvergenceError, DegenerateGainError, NonFiniteError, SimulationDivergence
from .evaluate import (DEFAULT_LAMBDAS, forecast_error, forecast_study, roc_study, thread_count)
from .io import (FormatError, read_observations, read_params, write_observations, write_params,
                 write_table)
from .model import Penalty, PenaltySpec, residual_sigma
from .rns import RnsConfig, fit_rns
from .s3 import S3Config, fit_s3
from .sigreg import fit_network_univariate
from .simulate import GenConfig, SimConfig, generate_params, simulate_sde
from .stability import check_stability

log = logging.getLogger("recnet")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad arguments; route them to exit code 1
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


class _JsonFormatter(logging.Formatter):
    def format(self, record):
        return json.dumps({"time": round(record.created, 3), "level": record.levelname,
                           "logger": record.name, "message": record.getMessage()})


def _setup_logging(quiet, json_logs):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonFormatter() if json_logs else logging.Formatter("%(levelname)s %(message)s"))
    root = logging.getLogger("recnet")
    root.handlers[:] = [handler]
    root.setLevel(logging.WARNING if quiet else logging.INFO)
    root.propagate = False


def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (set, frozenset)):
        return sorted(_jsonable(v) for v in obj)
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def _write_manifest(out_path, command, config, seed, inputs, outputs, started):
    manifest = {
        "command": command,
        "config": _jsonable(config),
        "seed": seed,
        "inputs": inputs,
        "outputs": outputs,
        "version": __version__,
        "duration_s": round(time.perf_counter() - started, 6),
    }
    path = f"{out_path}.manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    return path


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    """``"1,5,10"`` or a range ``"1:90"`` (inclusive)."""
    try:
        if ":" in text:
            lo, hi = (int(v) for v in text.split(":"))
            return list(range(lo, hi + 1))
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers like '1,5,10' or '1:90', got {text!r}") from None


def _say(args, text):
    if not args.quiet:
        print(text)


# ---------------------------------------------------------------------------
# commands

def cmd_gen(args, started):
    cfg = GenConfig(n=args.n, seed=args.seed, p_link=args.p_link, sigma=args.sigma,
                    stability=args.stability)
    params = generate_params(cfg)
    write_params(args.out, params)
    _write_manifest(args.out, "gen", cfg, args.seed, {}, {"params": args.out}, started)
    _say(args, f"wrote {args.out} (n={params.n}, links={int(np.count_nonzero(params.A))})")


def cmd_sim(args, started):
    params = read_params(args.params)
    if args.sigma is not None:
        params = params.replace(sigma=args.sigma)
    x0 = None
    if args.x0 is not None:
        if len(args.x0) != params.n:
            raise ValueError(f"--x0 has {len(args.x0)} values but the network has {params.n} nodes")
        x0 = tuple(args.x0)
    cfg = SimConfig(t_end=args.t_end, sample_period=args.dt, internal_step=args.delta, x0=x0,
                    seed=args.seed)
    obs = simulate_sde(params, cfg)
    write_observations(args.out, obs)
    _write_manifest(args.out, "sim", {"sim": cfg, "sigma": params.sigma}, args.seed,
                    {"params": args.params}, {"observations": args.out}, started)
    _say(args, f"wrote {args.out} ({obs.T + 1} time points, {obs.n} nodes)")


def _fit(args, obs):
    """Returns (params without sigma, trace header, trace rows, config)."""
    method = args.method
    if method == "prototype":
        spec = PenaltySpec(Penalty(args.penalty), lam=args.lam, eta=args.eta)
        res = fit_network_univariate(obs, spec, max_iter=args.max_iter, tol=args.tol)
        rows = [(i, k, v) for i, f in enumerate(res.fits) for k, v in enumerate(f.objective_trace)]
        cfg = {"penalty": args.penalty, "lam": args.lam, "eta": args.eta,
               "max_iter": args.max_iter, "tol": args.tol}
        return res.params, ["node", "iteration", "objective"], rows, cfg
    if method == "rns":
        if args.m is None:
            raise UsageError("fit --method rns requires --m")
        cfg = RnsConfig(m=args.m, eta=args.eta, tol=args.tol, max_iter=args.max_iter)
        res = fit_rns(obs, cfg)
        rows = [(k, v, m, s) for k, (v, m, s) in
                enumerate(zip(res.objective_trace, res.m_schedule, res.support_sizes))]
        return res.params(), ["iteration", "objective", "m", "support"], rows, cfg
    cfg = S3Config(lam=args.lam, tol=args.tol, max_iter=args.max_iter or 1000)
    res = fit_s3(obs, cfg)
    rows = [(k, v, s) for k, (v, s) in enumerate(zip(res.objective_trace, res.slack_trace))]
    return res.params(), ["iteration", "objective", "stability_slack"], rows, cfg


def cmd_fit(args, started):
    obs = read_observations(args.obs)
    params, header, rows, cfg = _fit(args, obs)
    params = params.replace(sigma=residual_sigma(params, obs))
    write_params(args.out, params)
    write_table(args.trace, header, rows)
    _write_manifest(args.out, "fit", {"method": args.method, "fit": cfg}, None,
                    {"observations": args.obs}, {"params": args.out, "trace": args.trace}, started)
    _say(args, f"wrote {args.out} and {args.trace} (method={args.method}, "
               f"links={int(np.count_nonzero(params.A))}, sigma={params.sigma:.4g})")


def cmd_check(args, started):
    params = read_params(args.params)
    report = check_stability(params).to_dict()
    with open(args.out, "w") as fh:
        json.dump(_jsonable(report), fh, indent=1)
        fh.write("\n")
    _write_manifest(args.out, "check", {}, None, {"params": args.params}, {"report": args.out}, started)
    _say(args, json.dumps(_jsonable(report)))


def cmd_forecast(args, started):
    horizons = args.h
    if args.trials is not None:
        sigma = 0.5 if args.sigma is None else args.sigma
        cfg = {"n": args.n, "T": args.T, "n_valid": args.n_valid, "horizons": horizons,
               "trials": args.trials, "seed": args.seed, "methods": args.methods,
               "lambdas": args.lambdas, "sigma": sigma, "max_iter": args.max_iter,
               "threads": thread_count(args.threads)}
        study = forecast_study(n=args.n, T=args.T, n_valid=args.n_valid, horizons=horizons,
                               trials=args.trials, seed=args.seed, methods=tuple(args.methods),
                               lambdas=tuple(args.lambdas), sigma=sigma,
                               max_iter=args.max_iter, threads=args.threads)
        rows = []
        for m in args.methods:
            for t in range(args.trials):
                rows += [(m, t, int(h), float(v), study.chosen_lambda[m][t])
                         for h, v in zip(horizons, study.fe[m][t])]
        footer = [f"median {m} h={h}: {v:.6g}" for m in args.methods
                  for h, v in zip(horizons, study.median(m))]
        write_table(args.out, ["method", "trial", "h", "fe", "lambda"], rows, footer)
        _write_manifest(args.out, "forecast", cfg, args.seed, {}, {"table": args.out}, started)
        for line in footer:
            _say(args, line)
        return
    if args.params is None or args.truth is None:
        raise UsageError("forecast needs --params and --truth, or --trials for a generated study")
    params = read_params(args.params)
    truth = read_observations(args.truth)
    if truth.n != params.n:
        raise ValueError(f"--truth has {truth.n} nodes but --params describes {params.n}")
    res = forecast_error(params, truth, horizons, seed=args.seed, sigma=args.sigma,
                         n_draws=args.draws)
    rows = [(int(h), float(v)) for h, v in zip(res.horizons, res.fe)]
    write_table(args.out, ["h", "fe"], rows)
    _write_manifest(args.out, "forecast", {"horizons": horizons, "sigma": args.sigma,
                                           "draws": args.draws}, args.seed,
                    {"params": args.params, "truth": args.truth}, {"table": args.out}, started)
    _say(args, " ".join(f"h={h}:{v:.6g}" for h, v in rows))


def cmd_roc(args, started):
    cfg = {"n": args.n, "T": args.T, "trials": args.trials, "seed": args.seed,
           "methods": args.methods, "m_values": args.m, "sigma": args.sigma,
           "threads": thread_count(args.threads)}
    study = roc_study(n=args.n, T=args.T, trials=args.trials, seed=args.seed,
                      methods=tuple(args.methods), m_values=args.m, sigma=args.sigma,
                      threads=args.threads)
    rows = [(m, t, p.m, p.tpr, p.fpr) for m in args.methods
            for t, curve in enumerate(study.curves[m]) for p in curve.points]
    footer = [f"auc {m} trial {t}: {a:.6g}" for m in args.methods for t, a in enumerate(study.auc[m])]
    footer += [f"median auc {m}: {study.median_auc(m):.6g}" for m in args.methods]
    write_table(args.out, ["method", "trial", "m", "tpr", "fpr"], rows, footer)
    _write_manifest(args.out, "roc", cfg, args.seed, {}, {"table": args.out}, started)
    for m in args.methods:
        _say(args, f"median auc {m}: {study.median_auc(m):.4f}")


# ---------------------------------------------------------------------------
# parser

def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--quiet", action="store_true", help="only print warnings and errors")
    common.add_argument("--json-logs", action="store_true", help="log records as JSON lines on stderr")

    p = _Parser(prog="recnet", description="Sigmoidal recurrent network simulation and learning.",
                parents=[common])
    p.add_argument("--version", action="version", version=f"recnet {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="generate random network parameters")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--sigma", type=float, default=0.5)
    g.add_argument("--p-link", type=float, default=None, help="default 1/(2n)")
    g.add_argument("--stability", choices=["A3a", "none"], default="A3a")
    g.add_argument("--out", default="params.json")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("sim", parents=[common], help="simulate observations from parameters")
    s.add_argument("--params", default="params.json")
    s.add_argument("--t-end", type=float, required=True)
    s.add_argument("--dt", type=float, default=1.0, help="sampling period")
    s.add_argument("--delta", type=float, default=None, help="internal Euler step (default dt/100)")
    s.add_argument("--sigma", type=float, default=None, help="override the diffusion scale")
    s.add_argument("--x0", type=_float_list, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default="obs.csv")
    s.set_defaults(func=cmd_sim)

    f = sub.add_parser("fit", parents=[common], help="estimate parameters from observations")
    f.add_argument("--obs", default="obs.csv")
    f.add_argument("--method", choices=["prototype", "rns", "s3"], required=True)
    f.add_argument("--m", type=int, default=None, help="link budget (rns)")
    f.add_argument("--lam", type=float, default=0.1, help="penalty level (prototype, s3)")
    f.add_argument("--penalty", choices=[k.value for k in Penalty if k is not Penalty.CARDINALITY],
                   default="l1", help="prototype penalty")
    f.add_argument("--eta", type=float, default=1e-3, help="ridge weight (rns, l0l2)")
    f.add_argument("--max-iter", type=int, default=None)
    f.add_argument("--tol", type=float, default=1e-8)
    f.add_argument("--out", default="fit.json")
    f.add_argument("--trace", default="trace.csv")
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("check", parents=[common], help="stability report for parameters")
    c.add_argument("--params", default="params.json")
    c.add_argument("--out", default="report.json")
    c.set_defaults(func=cmd_check)

    fc = sub.add_parser("forecast", parents=[common], help="multi-step forecast error")
    fc.add_argument("--params", default=None, help="fitted parameters")
    fc.add_argument("--truth", default=None, help="observations starting at the forecast origin")
    fc.add_argument("--h", type=_int_list, default=[1, 5, 10, 15, 20], help="horizons")
    fc.add_argument("--sigma", type=float, default=None,
                    help="forecast noise (default: from --params; 0.5 in study mode)")
    fc.add_argument("--draws", type=int, default=1)
    fc.add_argument("--seed", type=int, default=0)
    fc.add_argument("--trials", type=int, default=None, help="run a generated study instead")
    fc.add_argument("--n", type=int, default=20)
    fc.add_argument("--T", type=int, default=20)
    fc.add_argument("--n-valid", type=int, default=200)
    fc.add_argument("--methods", type=lambda t: t.split(","), default=["s3", "sigspar"])
    fc.add_argument("--lambdas", type=_float_list, default=list(DEFAULT_LAMBDAS))
    fc.add_argument("--max-iter", type=int, default=300)
    fc.add_argument("--threads", type=int, default=None, help="default: RECNET_THREADS or 1")
    fc.add_argument("--out", default="forecast.csv")
    fc.set_defaults(func=cmd_forecast)

    r = sub.add_parser("roc", parents=[common], help="ROC sweep on generated networks")
    r.add_argument("--n", type=int, default=10)
    r.add_argument("--T", type=int, default=100)
    r.add_argument("--trials", type=int, default=10)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--sigma", type=float, default=0.5)
    r.add_argument("--methods", type=lambda t: t.split(","), default=["rns", "correlation"])
    r.add_argument("--m", type=_int_list, default=None, help="link budgets, default 1:n(n-1)")
    r.add_argument("--threads", type=int, default=None, help="default: RECNET_THREADS or 1")
    r.add_argument("--out", default="roc.csv")
    r.set_defaults(func=cmd_roc)
    return p


def _check_args(args):
    if getattr(args, "methods", None) is not None:
        known = {"forecast": {"s3", "sigspar"}, "roc": {"rns", "correlation", "random"}}[args.command]
        bad = [m for m in args.methods if m not in known]
        if bad:
            raise UsageError(f"--methods: unknown method(s) {', '.join(bad)}; choose from {sorted(known)}")
    if args.command == "fit" and args.max_iter is None and args.method != "rns":
        args.max_iter = 1000


def run_cli(argv=None):
    started = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        _check_args(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _setup_logging(args.quiet, args.json_logs)
    try:
        args.func(args, started)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (FormatError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except (NonFiniteError, SimulationDivergence, ConvergenceError, DegenerateGainError,
            FloatingPointError, np.linalg.LinAlgError) as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    return EXIT_OK


def main():
    sys.exit(run_cli())
