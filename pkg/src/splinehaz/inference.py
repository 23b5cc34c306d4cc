"""Model fitting: posterior mode, Laplace approximation, and MCMC.

``fit_map`` maximizes the joint posterior with L-BFGS plus a Newton polish
on the analytic gradient; ``laplace_sample`` draws from the Gaussian
approximation at the mode; ``mcmc_sample`` runs adaptive NUTS chains and
attaches convergence diagnostics.  All three accept an optional ``fix``
mapping from parameter names to values, which pins those coordinates and
works on the remaining free subspace.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .diagnostics import summarize_draws
from .model import LogPosterior, ModelSpec, ParamVector, SurvivalDataset
from .samplers import nuts_chain

RHAT_THRESHOLD = 1.05
ESS_THRESHOLD = 400.0


def _seed_entropy(seed) -> list[int]:
    """Normalize an int or sequence-of-ints seed into an entropy list."""
    if isinstance(seed, (int, np.integer)):
        return [int(seed)]
    return [int(s) for s in seed]


@dataclass(frozen=True)
class FitOptions:
    """Sampler and optimizer settings shared by the fitting entry points."""

    chains: int = 4
    draws: int = 2000
    warmup: int | None = None
    max_depth: int = 10
    target_accept: float = 0.8
    init_jitter: float = 0.5
    gtol: float = 1e-6
    max_newton: int = 25

    def resolved_warmup(self) -> int:
        return self.draws if self.warmup is None else self.warmup


@dataclass
class MapFit:
    """Posterior mode with the observed-information Hessian at the mode."""

    theta: np.ndarray
    value: float
    grad_norm: float
    hessian: np.ndarray
    names: list[str]
    fixed: dict[str, float]
    n_newton: int


@dataclass
class PosteriorDraws:
    """Posterior draws with per-parameter diagnostics.

    ``draws`` stacks all chains; ``by_chain`` keeps them separate for
    diagnostics.  Laplace fits have one pseudo-chain and NaN diagnostics.
    """

    draws: np.ndarray
    by_chain: np.ndarray
    names: list[str]
    method: str
    rhat: np.ndarray
    ess_bulk: np.ndarray
    ess_tail: np.ndarray
    n_divergent: int
    step_sizes: list[float] = field(default_factory=list)
    runtime_seconds: float = 0.0
    jitter_used: float = 0.0

    @property
    def rhat_max(self) -> float:
        finite = self.rhat[np.isfinite(self.rhat)]
        return float(finite.max()) if finite.size else float("nan")

    @property
    def ess_bulk_min(self) -> float:
        finite = self.ess_bulk[np.isfinite(self.ess_bulk)]
        return float(finite.min()) if finite.size else float("nan")

    @property
    def ess_tail_min(self) -> float:
        finite = self.ess_tail[np.isfinite(self.ess_tail)]
        return float(finite.min()) if finite.size else float("nan")

    @property
    def converged(self) -> bool:
        if self.method == "laplace":
            return True
        return bool(self.rhat_max <= RHAT_THRESHOLD)

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.names.index(name)]


class _FixedSubspace:
    """Maps the free subvector into the full parameter vector and back."""

    def __init__(self, params: ParamVector, fix: dict[str, float] | None):
        fix = dict(fix or {})
        unknown = set(fix) - set(params.names)
        if unknown:
            raise ValueError(f"unknown parameter names in fix: {sorted(unknown)}")
        self.full_size = params.size
        self.fixed_idx = np.array([params.index(k) for k in fix], dtype=int)
        self.fixed_val = np.array([float(v) for v in fix.values()])
        self.free_idx = np.array([i for i in range(params.size)
                                  if params.names[i] not in fix], dtype=int)
        if self.free_idx.size == 0:
            raise ValueError("all parameters fixed, nothing to fit")
        self.fix = fix

    def embed(self, free: np.ndarray) -> np.ndarray:
        full = np.empty(self.full_size)
        full[self.free_idx] = free
        full[self.fixed_idx] = self.fixed_val
        return full

    def restrict(self, full: np.ndarray) -> np.ndarray:
        return np.asarray(full)[self.free_idx]

    def wrap(self, post: LogPosterior):
        def f(free):
            v, g = post.value_and_grad(self.embed(free))
            return v, g[self.free_idx]

        return f


def _fd_hessian(value_and_grad, theta, h_scale=1e-5):
    """Central finite differences of the analytic gradient, symmetrized."""
    dim = theta.shape[0]
    hess = np.empty((dim, dim))
    for j in range(dim):
        h = h_scale * max(1.0, abs(theta[j]))
        tp = theta.copy()
        tp[j] += h
        tm = theta.copy()
        tm[j] -= h
        _, gp = value_and_grad(tp)
        _, gm = value_and_grad(tm)
        hess[:, j] = (gp - gm) / (2.0 * h)
    return 0.5 * (hess + hess.T)


def fit_map(spec: ModelSpec, data: SurvivalDataset, *, fix=None, backend=None,
            options: FitOptions | None = None) -> MapFit:
    """Maximize the posterior; returns the mode and the negated Hessian there."""
    options = options or FitOptions()
    post = LogPosterior(spec, data, backend=backend)
    sub = _FixedSubspace(post.params, fix)
    f = sub.wrap(post)

    def neg(free):
        v, g = f(free)
        return -v, -g

    x0 = sub.restrict(post.params.default_init())
    res = minimize(neg, x0, jac=True, method="L-BFGS-B",
                   options={"maxiter": 1000, "ftol": 1e-14, "gtol": 1e-10})
    x = res.x
    value, grad = f(x)

    n_newton = 0
    while np.max(np.abs(grad)) > options.gtol and n_newton < options.max_newton:
        hess = _fd_hessian(f, x)
        try:
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            break
        # quadratic-model gain; once it is below float resolution we are done
        predicted = 0.5 * float(grad @ step)
        if not np.isfinite(predicted) or predicted <= 1e-12 * (1.0 + abs(value)):
            break
        # backtrack until the posterior improves
        scale = 1.0
        improved = False
        for _ in range(40):
            cand = x + scale * step
            v_new, g_new = f(cand)
            if np.isfinite(v_new) and v_new >= value:
                x, value, grad = cand, v_new, g_new
                improved = True
                break
            scale *= 0.5
        n_newton += 1
        if not improved:
            break

    hess_full = -_fd_hessian(f, x)  # negative log posterior curvature
    return MapFit(theta=sub.embed(x), value=float(value),
                  grad_norm=float(np.max(np.abs(grad))), hessian=hess_full,
                  names=[post.params.names[i] for i in sub.free_idx],
                  fixed=sub.fix, n_newton=n_newton)


def laplace_sample(spec: ModelSpec, data: SurvivalDataset, *, n_draws=8000, seed=0,
                   fix=None, backend=None,
                   options: FitOptions | None = None) -> PosteriorDraws:
    """Gaussian approximation at the mode; jitters the Hessian if non-PD."""
    t0 = time.perf_counter()
    fit = fit_map(spec, data, fix=fix, backend=backend, options=options)
    hess = fit.hessian
    dim = hess.shape[0]
    jitter_used = 0.0
    chol = None
    for expo in range(-12, 4):
        jitter = 0.0 if expo == -12 else 10.0 ** expo
        try:
            chol = np.linalg.cholesky(hess + jitter * np.eye(dim))
            jitter_used = jitter
            break
        except np.linalg.LinAlgError:
            continue
    if chol is None:
        raise RuntimeError("Hessian not positive definite even after jitter")

    rng = np.random.default_rng(np.random.SeedSequence(_seed_entropy(seed)))
    z = rng.standard_normal((n_draws, dim))
    # solve L' u = z so the draws have covariance inv(hess)
    free_draws = fit.theta[None, :].repeat(n_draws, 0)
    post = LogPosterior(spec, data, backend=backend)
    sub = _FixedSubspace(post.params, fix)
    offsets = np.linalg.solve(chol.T, z.T).T
    free_draws[:, sub.free_idx] = sub.restrict(fit.theta)[None, :] + offsets

    nan = np.full(post.params.size, np.nan)
    return PosteriorDraws(
        draws=free_draws, by_chain=free_draws[None, :, :],
        names=list(post.params.names), method="laplace",
        rhat=nan.copy(), ess_bulk=nan.copy(), ess_tail=nan.copy(),
        n_divergent=0, step_sizes=[],
        runtime_seconds=time.perf_counter() - t0, jitter_used=jitter_used)


def mcmc_sample(spec: ModelSpec, data: SurvivalDataset, *, seed=0, fix=None,
                backend=None, options: FitOptions | None = None) -> PosteriorDraws:
    """Adaptive NUTS on the joint posterior with per-chain seed streams."""
    options = options or FitOptions()
    t0 = time.perf_counter()
    post = LogPosterior(spec, data, backend=backend)
    sub = _FixedSubspace(post.params, fix)
    f = sub.wrap(post)
    x0 = sub.restrict(post.params.default_init())
    warmup = options.resolved_warmup()

    chains = []
    for c in range(options.chains):
        rng = np.random.default_rng(np.random.SeedSequence(_seed_entropy(seed) + [c]))
        init = x0 + rng.uniform(-options.init_jitter, options.init_jitter, x0.shape)
        chains.append(nuts_chain(f, init, options.draws, warmup, rng,
                                 max_depth=options.max_depth,
                                 target_accept=options.target_accept))

    free_by_chain = np.stack([ch.draws for ch in chains])
    nchain, ndraw, nfree = free_by_chain.shape
    by_chain = np.empty((nchain, ndraw, post.params.size))
    by_chain[:, :, sub.free_idx] = free_by_chain
    if sub.fixed_idx.size:
        by_chain[:, :, sub.fixed_idx] = sub.fixed_val[None, None, :]

    diag = summarize_draws(free_by_chain)
    rhat = np.full(post.params.size, np.nan)
    ess_b = np.full(post.params.size, np.nan)
    ess_t = np.full(post.params.size, np.nan)
    rhat[sub.free_idx] = diag["rhat"]
    ess_b[sub.free_idx] = diag["ess_bulk"]
    ess_t[sub.free_idx] = diag["ess_tail"]

    return PosteriorDraws(
        draws=by_chain.reshape(-1, post.params.size), by_chain=by_chain,
        names=list(post.params.names), method="mcmc",
        rhat=rhat, ess_bulk=ess_b, ess_tail=ess_t,
        n_divergent=int(sum(ch.divergent.sum() for ch in chains)),
        step_sizes=[ch.step_size for ch in chains],
        runtime_seconds=time.perf_counter() - t0)
