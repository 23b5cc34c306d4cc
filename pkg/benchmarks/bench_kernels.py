"""Compare the compiled and numpy posterior kernels on representative fits.

Run:  python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from splinehaz import _kernels
from splinehaz.basis import make_knots
from splinehaz.inference import FitOptions, mcmc_sample
from splinehaz.model import LogPosterior, ModelSpec, ParamVector, SurvivalDataset
from splinehaz.simgen import ConstantHR, ExponentialDGM, simulate_trial


def make_case(mode, ncov, n_obs, df, seed=0):
    rng = np.random.default_rng(seed)
    if ncov:
        data = simulate_trial(ExponentialDGM(0.2), ConstantHR(0.7), n_obs // 2, rng,
                              censor_time=5.0)
    else:
        t = rng.exponential(5.0, n_obs)
        data = SurvivalDataset(time=t, event=np.ones(n_obs))
    spline = make_knots(data.time[data.event == 1], df=df, upper=float(data.time.max()))
    return ModelSpec(config=spline, mode=mode, ncov=ncov), data


def bench_evals(spec, data, n_eval=20000):
    pv = ParamVector(spec)
    rng = np.random.default_rng(1)
    thetas = pv.default_init()[None, :] + rng.normal(0, 0.3, (n_eval, pv.size))
    out = {}
    for backend in ("compiled", "numpy"):
        if backend == "compiled" and not _kernels.HAVE_COMPILED:
            out[backend] = float("nan")
            continue
        post = LogPosterior(spec, data, backend=backend)
        post.value_and_grad(thetas[0])
        t0 = time.perf_counter()
        for th in thetas:
            post.value_and_grad(th)
        out[backend] = (time.perf_counter() - t0) / n_eval
    return out


def bench_fit(spec, data, backend):
    t0 = time.perf_counter()
    fit = mcmc_sample(spec, data, seed=7, backend=backend,
                      options=FitOptions(chains=2, draws=500))
    return time.perf_counter() - t0, fit


def main():
    print(f"compiled extension available: {_kernels.HAVE_COMPILED}")
    print(f"{'case':<28s} {'compiled':>12s} {'numpy':>12s} {'speedup':>8s}")
    cases = [
        ("baseline n=500 df=10", *make_case("none", 0, 500, 10)),
        ("ph n=1000 df=10", *make_case("ph", 1, 1000, 10)),
        ("nonph n=1000 df=10", *make_case("nonph", 1, 1000, 10)),
    ]
    for label, spec, data in cases:
        res = bench_evals(spec, data)
        speed = res["numpy"] / res["compiled"] if res["compiled"] > 0 else float("nan")
        print(f"{label:<28s} {res['compiled'] * 1e6:9.1f} us {res['numpy'] * 1e6:9.1f} us "
              f"{speed:7.1f}x")

    label, spec, data = cases[1]
    print("\nfull NUTS fit (2 chains x 500+500), ph n=1000 df=10:")
    for backend in ("compiled", "numpy"):
        if backend == "compiled" and not _kernels.HAVE_COMPILED:
            continue
        dt, fit = bench_fit(spec, data, backend)
        print(f"  {backend:<9s} {dt:6.1f}s  rhat_max={fit.rhat_max:.3f} "
              f"divergent={fit.n_divergent}")


if __name__ == "__main__":
    main()
