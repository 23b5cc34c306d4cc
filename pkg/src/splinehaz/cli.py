"""Command-line interface.

Verbs:

* ``fit``: fit one dataset file, print a posterior summary table.
* ``simulate``: write the simulated dataset for one study replicate.
* ``run-study``: run or resume a full simulation study from a YAML config.
* ``summarize``: recompute performance.csv from stored study records.

``run-study`` and ``simulate`` require an explicit --seed so results are
reproducible by construction; a config that pins base_seed must agree with
the flag.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .basis import BasisError, make_knots
from .dataio import DataFormatError, dataset_to_text, read_dataset
from .estimands import summarize as summarize_estimand
from .inference import FitOptions, laplace_sample, mcmc_sample
from .model import ModelSpec
from .study import ConfigError, load_config, run_study, simulate_replicate, summarize_study


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splinehaz",
        description="Bayesian spline-hazard survival models and simulation studies")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit one dataset and print posterior summaries")
    fit.add_argument("dataset", help="delimited text file with a time,event[,...] header")
    fit.add_argument("--df", type=int, default=10, help="basis degrees of freedom")
    fit.add_argument("--mode", choices=("none", "ph", "nonph"), default=None,
                     help="covariate handling (default: ph when covariates exist)")
    fit.add_argument("--no-bsmooth", action="store_true",
                     help="use the standard basis without the flat upper boundary")
    fit.add_argument("--smoothing", choices=("random_walk", "exchangeable"),
                     default="random_walk")
    fit.add_argument("--fit-method", "--method", dest="fit_method",
                     choices=("mcmc", "laplace"), default="mcmc")
    fit.add_argument("--chains", type=int, default=4)
    fit.add_argument("--draws", type=int, default=2000)
    fit.add_argument("--warmup", type=int, default=None,
                     help="warmup iterations per chain (default: same as --draws)")
    fit.add_argument("--seed", type=int, required=True)
    fit.add_argument("--backend", choices=("compiled", "numpy"), default=None)
    fit.add_argument("--rmst", type=float, metavar="HORIZON", default=None,
                     help="also report restricted mean survival time to HORIZON")
    fit.add_argument("--curves", metavar="PREFIX", default=None,
                     help="write survival/hazard (and HR) curve CSVs named "
                          "PREFIX_survival.csv etc.")
    fit.add_argument("--curve-points", type=int, default=100,
                     help="grid size for --curves output")
    fit.add_argument("--save-draws", metavar="PATH", default=None,
                     help="write posterior draws to a CSV file")

    sim = sub.add_parser("simulate", help="write one replicate's simulated dataset")
    sim.add_argument("--config", required=True, help="study YAML file")
    sim.add_argument("--replicate", type=int, required=True)
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--output", default="-", help="output path (default: stdout)")

    run = sub.add_parser("run-study", help="run or resume a simulation study")
    run.add_argument("--config", required=True)
    run.add_argument("--outdir", required=True)
    run.add_argument("--seed", type=int, required=True,
                     help="base seed for data and fits (must match any configured "
                          "base_seed)")
    run.add_argument("--quiet", action="store_true")

    summ = sub.add_parser("summarize", help="recompute performance.csv from records")
    summ.add_argument("--config", required=True)
    summ.add_argument("--outdir", required=True)
    return parser


def _write_curve_file(path, ts, values) -> None:
    """One curve CSV: t, posterior median, equal-tailed 95% limits."""
    lo, med, hi = np.quantile(values, [0.025, 0.5, 0.975], axis=0)
    with open(path, "w", newline="") as fh:
        fh.write("t,median,ci_low,ci_high\n")
        for row in zip(ts, med, lo, hi):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _write_curves(prefix, spec, fit, n_points) -> list[str]:
    from .estimands import hazard_draws, hazard_ratio_draws, survival_draws

    upper = spec.config.boundary_knots[1]
    ts = np.linspace(upper / n_points, upper, n_points)
    profile = None if spec.ncov == 0 else np.zeros(spec.ncov)
    written = []
    for name, fn in (("survival", survival_draws), ("hazard", hazard_draws)):
        path = f"{prefix}_{name}.csv"
        _write_curve_file(path, ts, fn(spec, fit.draws, ts, profile))
        written.append(path)
    if spec.ncov >= 1:
        x1 = np.zeros(spec.ncov)
        x1[0] = 1.0
        path = f"{prefix}_hr.csv"
        _write_curve_file(path, ts, hazard_ratio_draws(spec, fit.draws, ts, x1, profile))
        written.append(path)
    return written


def _cmd_fit(args) -> int:
    data = read_dataset(args.dataset)
    mode = args.mode
    if mode is None:
        mode = "ph" if data.ncov else "none"
    if mode != "none" and data.ncov == 0:
        raise DataFormatError(f"mode {mode!r} needs covariate columns in the dataset")
    events = data.time[data.event == 1.0]
    spline = make_knots(events, df=args.df, bsmooth=not args.no_bsmooth,
                        upper=float(data.time.max()))
    spec = ModelSpec(config=spline, mode=mode, ncov=data.ncov, smoothing=args.smoothing)
    options = FitOptions(chains=args.chains, draws=args.draws, warmup=args.warmup)
    if args.fit_method == "mcmc":
        fit = mcmc_sample(spec, data, seed=args.seed, backend=args.backend,
                          options=options)
    else:
        fit = laplace_sample(spec, data, n_draws=args.chains * args.draws,
                             seed=args.seed, backend=args.backend, options=options)

    print(f"# method={fit.method} draws={fit.draws.shape[0]} "
          f"df={spline.df} mode={mode} knots={len(spline.interior_knots)}")
    header = f"{'parameter':<14s} {'median':>10s} {'sd':>10s} {'2.5%':>10s} " \
             f"{'97.5%':>10s} {'rhat':>7s} {'ess_bulk':>9s} {'ess_tail':>9s}"
    print(header)
    for j, name in enumerate(fit.names):
        col = fit.draws[:, j]
        lo, med, hi = np.quantile(col, [0.025, 0.5, 0.975])
        rh = fit.rhat[j]
        eb = fit.ess_bulk[j]
        et = fit.ess_tail[j]
        print(f"{name:<14s} {med:10.4f} {col.std(ddof=1):10.4f} {lo:10.4f} {hi:10.4f} "
              f"{rh:7.3f} {eb:9.0f} {et:9.0f}")
    if args.rmst is not None:
        from .estimands import rmst_draws

        profile = None if data.ncov == 0 else np.zeros(data.ncov)
        s = summarize_estimand(rmst_draws(spec, fit.draws, args.rmst, profile),
                               name="rmst")
        print(f"rmst[{args.rmst:g}]    {s.point:10.4f} {s.sd:10.4f} "
              f"{s.ci_low:10.4f} {s.ci_high:10.4f}")
    if args.curves:
        for path in _write_curves(args.curves, spec, fit, args.curve_points):
            print(f"# curve written to {path}")
    if fit.method == "mcmc":
        print(f"# rhat_max={fit.rhat_max:.4f} ess_bulk_min={fit.ess_bulk_min:.0f} "
              f"ess_tail_min={fit.ess_tail_min:.0f} divergent={fit.n_divergent} "
              f"converged={'yes' if fit.converged else 'NO'}")
    print(f"# runtime={fit.runtime_seconds:.2f}s")
    if args.save_draws:
        with open(args.save_draws, "w", newline="") as fh:
            fh.write(",".join(fit.names) + "\n")
            for row in fit.draws:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        print(f"# draws written to {args.save_draws}")
    if fit.method == "mcmc" and not fit.converged:
        return 3
    return 0


def _cmd_simulate(args) -> int:
    config = load_config(args.config)
    if config.base_seed is not None and config.base_seed != args.seed:
        raise ConfigError(f"--seed {args.seed} conflicts with configured base_seed "
                          f"{config.base_seed}")
    if not 0 <= args.replicate < config.n_replicates:
        raise ConfigError(f"replicate must be in [0, {config.n_replicates})")
    from .study import StudyConfig

    resolved = StudyConfig.from_dict({**config.to_dict(), "base_seed": args.seed})
    data = simulate_replicate(resolved, args.replicate)
    text = dataset_to_text(data)
    if args.output == "-":
        sys.stdout.write(text)
    else:
        with open(args.output, "w", newline="") as fh:
            fh.write(text)
        print(f"wrote {data.n_obs} rows to {args.output}")
    return 0


def _cmd_run_study(args) -> int:
    config = load_config(args.config)
    progress = None if args.quiet else lambda msg: print(msg, flush=True)
    run_study(config, args.outdir, seed=args.seed, progress=progress)
    print(f"study complete: {args.outdir}/performance.csv")
    return 0


def _cmd_summarize(args) -> int:
    config = load_config(args.config)
    rows = summarize_study(config, args.outdir)
    cols = ["cell", "n_reps", "bias", "empse", "coverage_pct", "mean_post_sd",
            "pct_rhat_high", "pct_any_divergent"]
    print("  ".join(f"{c:>16s}" for c in cols))
    for row in rows:
        cells = []
        for c in cols:
            v = row[c]
            cells.append(f"{v:>16s}" if isinstance(v, str) else f"{v:16.4f}")
        print("  ".join(cells))
    print(f"written: {args.outdir}/performance.csv")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "fit": _cmd_fit,
        "simulate": _cmd_simulate,
        "run-study": _cmd_run_study,
        "summarize": _cmd_summarize,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, DataFormatError, BasisError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
