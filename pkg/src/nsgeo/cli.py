"""Command-line front end: ``nsgeo {fit,predict,simulate,study,compare}``.

Exit codes: 0 success, 2 usage/config/data error, 3 non-convergence.
Tables go to stdout, diagnostics to stderr.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import io
from .kernels import SchemaError
from .likelihood import OptimizationError, SingularCovarianceError, compare, fit
from .predict import predict_grid
from .simulate import run_study, sample_tables

EXIT_OK, EXIT_USAGE, EXIT_NOT_CONVERGED = 0, 2, 3

log = logging.getLogger("nsgeo")


class UsageError(Exception):
    pass


def _fmt_num(x: float) -> str:
    if x != x:
        return "nan"
    if x == 0 or 1e-4 <= abs(x) < 1e6:
        return f"{x:.4f}"
    return f"{x:.4e}"


def format_parameter_table(fit) -> str:
    """Estimate and 95% CI per estimated parameter, then AIC/BIC."""
    rows = [("Parameter", "Estimate", "95% CI")]
    for name, est, lo, hi in fit.parameter_table():
        rows.append((name, _fmt_num(est), f"({_fmt_num(lo)}, {_fmt_num(hi)})"))
    w0 = max(len(r[0]) for r in rows)
    w1 = max(len(r[1]) for r in rows)
    lines = [f"{a:<{w0}}  {b:>{w1}}  {c}" for a, b, c in rows]
    lines.append(f"{'loglik':<{w0}}  {_fmt_num(fit.loglik):>{w1}}")
    lines.append(f"{'AIC':<{w0}}  {_fmt_num(fit.aic):>{w1}}")
    lines.append(f"{'BIC':<{w0}}  {_fmt_num(fit.bic):>{w1}}")
    if not fit.information_ok:
        lines.append("# observed information is singular; intervals unavailable")
    if not fit.converged:
        lines.append(f"# not converged (max |gradient| = {fit.grad_inf:.3g})")
    return "\n".join(lines)


def _load(args, need_model=True):
    if not args.config:
        raise UsageError("--config is required")
    cfg = io.parse_config(args.config[0])
    if args.seed is not None:
        cfg = cfg.model_copy(update={"fit": cfg.fit.model_copy(update={"seed": args.seed})})
    _merge_run(args, cfg)
    if not args.verbose and cfg.run.verbose:
        _set_verbosity(cfg.run.verbose)
    mc = io.model_config(cfg) if need_model else None
    return cfg, mc


def _merge_run(args, cfg) -> None:
    """Fill unset flags from the config's data/run sections."""
    args.data = args.data or cfg.data.path
    args.grid = args.grid or cfg.data.grid
    args.out = args.out or cfg.run.out
    args.threads = args.threads or cfg.run.threads
    if getattr(args, "fit", None) is None and hasattr(args, "fit"):
        args.fit = cfg.run.fit_path


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_fit(args) -> int:
    cfg, mc = _load(args)
    if not args.data:
        raise UsageError("--data is required")
    data = io.load_observations(args.data, mc, cfg.data.outcome)
    res = fit(data, mc)
    out = _out_dir(args)
    io.write_fit(res, out / "fit.json", cfg.resolved())
    print(format_parameter_table(res))
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def cmd_predict(args) -> int:
    cfg, mc = _load(args)
    if not args.data or not args.grid:
        raise UsageError("--data and --grid are required")
    data = io.load_observations(args.data, mc, cfg.data.outcome)
    out = _out_dir(args)
    if args.fit:
        res = io.read_fit(args.fit)
        mc = res.config
    else:
        res = fit(data, mc)
        io.write_fit(res, out / "fit.json", cfg.resolved())
    grid = io.load_grid(args.grid, mc)
    pred = predict_grid(res, data, grid, batch_size=cfg.predict.batch_size,
                        threads=args.threads or 1)
    io.write_predictions(pred, out / "predictions.csv")
    io.write_json(cfg.resolved(), out / "predict_config.json")
    print(f"wrote {len(pred)} predictions to {out / 'predictions.csv'}")
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def cmd_simulate(args) -> int:
    cfg, _ = _load(args, need_model=False)
    scenarios = io.scenario_configs(cfg, seed=args.seed)
    pick = args.scenario or scenarios[0].name
    chosen = [s for s in scenarios if s.name == pick or str(s.index) == pick]
    if not chosen:
        raise UsageError(f"no scenario named {pick!r}; have {[s.name for s in scenarios]}")
    sc = chosen[0]
    obs, held = sample_tables(sc, args.replicate)
    out = _out_dir(args)
    io.write_table(obs, out / "observations.csv")
    io.write_table(held, out / "heldout.csv")
    io.write_json(cfg.resolved(), out / "simulate_config.json")
    print(f"{sc.name} replicate {args.replicate}: {len(obs)} observed, {len(held)} held out")
    return EXIT_OK


def cmd_study(args) -> int:
    cfg, _ = _load(args, need_model=False)
    scenarios = io.scenario_configs(cfg, seed=args.seed)
    threads = args.threads or os.cpu_count() or 1
    report = run_study(scenarios, cfg.study.fit_forms, threads=threads,
                       progress=lambda line: print(line, file=sys.stderr, flush=True))
    out = _out_dir(args)
    p1, p2 = io.write_study(report, out)
    resolved = cfg.resolved()
    if args.seed is not None:
        resolved["study"]["master_seed"] = args.seed
    io.write_json(resolved, out / "study_config.json")
    for row in report.prediction_rows:
        print(f"{row['scenario']}\t{row['model']}\tbias={_fmt_num(row['bias'])}\t"
              f"rmse={_fmt_num(row['rmse'])}\tcp={_fmt_num(row['cp'])}\tused={row['n_used']}")
    return EXIT_OK


def cmd_compare(args) -> int:
    if not args.config or len(args.config) < 2:
        raise UsageError("compare needs at least two --config files")
    if not args.data:
        raise UsageError("--data is required")
    docs = [io.parse_config(c) for c in args.config]
    _merge_run(args, docs[0])
    configs = []
    for d in docs:
        mc = io.model_config(d)
        if args.seed is not None:
            mc = mc.with_options(seed=args.seed)
        configs.append(mc)
    outcome = docs[0].data.outcome
    needed = tuple(dict.fromkeys(n for c in configs
                                 for n in c.mean_covariate_names + c.cov_covariate_names))
    table = io.read_table(args.data, outcome=outcome, require_outcome=True, required=needed)
    rows = compare(configs, table)
    out = _out_dir(args)
    header = ("label", "loglik", "k", "aic", "bic", "converged", "status")
    io._write_csv(out / "compare.csv", header,
                  [[r.label, float(r.loglik), r.k, float(r.aic), float(r.bic), r.converged, r.status]
                   for r in rows])
    io.write_json({"configs": [d.resolved() for d in docs]}, out / "compare_config.json")
    w = max([5] + [len(r.label) for r in rows])
    print(f"{'model':<{w}} {'loglik':>12} {'k':>3} {'AIC':>12} {'BIC':>12}  status")
    for r in rows:
        print(f"{r.label:<{w}} {_fmt_num(r.loglik):>12} {r.k:>3} {_fmt_num(r.aic):>12} "
              f"{_fmt_num(r.bic):>12}  {r.status}")
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "simulate": cmd_simulate,
            "study": cmd_study, "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nsgeo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", action="append", help="config JSON (repeat for compare)")
        p.add_argument("--data", help="observation CSV")
        p.add_argument("--grid", help="prediction grid CSV")
        p.add_argument("--out", help="output directory (default: current)")
        p.add_argument("--seed", type=int, help="override the fit seed or study master seed")
        p.add_argument("--threads", type=int, help="parallel workers for study/predict")
        p.add_argument("--verbose", "-v", action="count", default=0)
        if name == "predict":
            p.add_argument("--fit", help="reuse a fit.json instead of refitting")
        if name == "simulate":
            p.add_argument("--scenario", help="scenario name or index (default: first)")
            p.add_argument("--replicate", type=int, default=0)
    return parser


def _set_verbosity(v: int) -> None:
    log.setLevel(logging.WARNING - 10 * min(v, 2))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    _set_verbosity(args.verbose)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, io.ConfigError, io.DataError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OptimizationError, SingularCovarianceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
