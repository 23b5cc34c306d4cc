"""Survival model built on the M-spline hazard basis.

The hazard for a subject with covariate row x is

    h(t | x) = eta(x) * sum_i p_i(x) b_i(t),

where b_i are the M-spline basis terms, p(x) is a softmax over basis
coefficients, and eta(x) = exp(log_eta + beta' x) is a proportional scale.
The softmax logits are

    gamma_i(x) = mu_i + delta_i' x + sigma * eps_i,      gamma_1 = 0,

with mu the fixed calibration offsets that make theta = 0 correspond to a
constant hazard, eps a smoothing field with a logistic random-walk (or
exchangeable logistic) prior, and delta per-basis covariate effects that
produce non-proportional hazards.  Three nested modes are supported:

* ``"none"``: no covariates (baseline hazard only),
* ``"ph"``: proportional hazards through beta,
* ``"nonph"``: beta plus per-basis delta effects with hierarchical scale tau.

This module holds the user-facing model functions plus a straightforward
numpy implementation of the log prior and log likelihood.  The fast kernels
under ``_kernels`` compute the same posterior with gradients; the two code
paths are written independently and tested against each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from types import SimpleNamespace

import numpy as np

from .basis import SplineConfig, constant_coefs, get_basis

MODES = ("none", "ph", "nonph")
SMOOTHING = ("random_walk", "exchangeable")


@dataclass(frozen=True)
class ModelSpec:
    """Model structure and prior constants.

    sigma and tau use Gamma(shape, rate) priors on the original scale and
    are sampled as logs; eta_sd and beta_sd are normal prior standard
    deviations for log_eta and beta.
    """

    config: SplineConfig
    mode: str = "none"
    ncov: int = 0
    smoothing: str = "random_walk"
    eta_sd: float = 20.0
    beta_sd: float = 20.0
    sigma_shape: float = 2.0
    sigma_rate: float = 1.0
    tau_shape: float = 2.0
    tau_rate: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.smoothing not in SMOOTHING:
            raise ValueError(f"smoothing must be one of {SMOOTHING}, got {self.smoothing!r}")
        if self.mode == "none" and self.ncov != 0:
            raise ValueError("mode 'none' cannot have covariates")
        if self.mode != "none" and self.ncov < 1:
            raise ValueError(f"mode {self.mode!r} needs ncov >= 1")
        for name in ("eta_sd", "beta_sd", "sigma_shape", "sigma_rate", "tau_shape", "tau_rate"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class SurvivalDataset:
    """Right-censored survival data: times, event flags, optional covariates."""

    time: np.ndarray
    event: np.ndarray
    covariates: np.ndarray | None = None
    covariate_names: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        time = np.ascontiguousarray(self.time, dtype=float)
        event = np.ascontiguousarray(self.event, dtype=float)
        if time.ndim != 1 or event.shape != time.shape:
            raise ValueError("time and event must be matching 1-d arrays")
        if np.any(time <= 0) or not np.all(np.isfinite(time)):
            raise ValueError("times must be positive and finite")
        if not np.all((event == 0.0) | (event == 1.0)):
            raise ValueError("event flags must be 0 or 1")
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)
        if self.covariates is not None:
            x = np.ascontiguousarray(self.covariates, dtype=float)
            if x.ndim == 1:
                x = x[:, None]
            if x.shape[0] != time.shape[0]:
                raise ValueError("covariate rows must match the number of subjects")
            if not np.all(np.isfinite(x)):
                raise ValueError("covariates must be finite")
            object.__setattr__(self, "covariates", x)
            if self.covariate_names and len(self.covariate_names) != x.shape[1]:
                raise ValueError("covariate_names length mismatch")

    @property
    def n_obs(self) -> int:
        return self.time.shape[0]

    @property
    def ncov(self) -> int:
        return 0 if self.covariates is None else self.covariates.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.event.sum())


class ParamVector:
    """Flat parameter layout for a model spec.

    Order: log_eta, beta (ph and nonph), log_sigma, eps_2..eps_n, the
    (n-1) x ncov delta block row-major by basis term (nonph), log_tau
    (nonph).  eps_1 and delta_1 are pinned to zero and not stored.
    """

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        n, nc = spec.config.df, spec.ncov
        names = ["log_eta"]
        pos = 1
        if spec.mode != "none":
            self.sl_beta = slice(pos, pos + nc)
            names += [f"beta[{s + 1}]" for s in range(nc)]
            pos += nc
        else:
            self.sl_beta = slice(pos, pos)
        self.i_log_sigma = pos
        names.append("log_sigma")
        pos += 1
        self.sl_eps = slice(pos, pos + n - 1)
        names += [f"eps[{i}]" for i in range(2, n + 1)]
        pos += n - 1
        if spec.mode == "nonph":
            self.sl_delta = slice(pos, pos + (n - 1) * nc)
            names += [f"delta[{i},{s + 1}]" for i in range(2, n + 1) for s in range(nc)]
            pos += (n - 1) * nc
            self.sl_tau = slice(pos, pos + nc)
            names += [f"log_tau[{s + 1}]" for s in range(nc)]
            pos += nc
        else:
            self.sl_delta = slice(pos, pos)
            self.sl_tau = slice(pos, pos)
        self.size = pos
        self.names = names
        self._index = {name: i for i, name in enumerate(names)}

    def index(self, name: str) -> int:
        return self._index[name]

    def unpack(self, theta: np.ndarray) -> SimpleNamespace:
        """Expand a flat vector into named blocks, restoring the pinned zeros."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.size,):
            raise ValueError(f"expected theta of length {self.size}, got {theta.shape}")
        n, nc = self.spec.config.df, self.spec.ncov
        eps = np.zeros(n)
        eps[1:] = theta[self.sl_eps]
        delta = np.zeros((n, nc))
        if self.spec.mode == "nonph":
            delta[1:] = theta[self.sl_delta].reshape(n - 1, nc)
        return SimpleNamespace(
            log_eta=float(theta[0]),
            beta=theta[self.sl_beta].copy(),
            log_sigma=float(theta[self.i_log_sigma]),
            eps=eps,
            delta=delta,
            log_tau=theta[self.sl_tau].copy(),
        )

    def default_init(self) -> np.ndarray:
        """Prior-centred start: zero effects, scales at their prior means."""
        theta = np.zeros(self.size)
        theta[self.i_log_sigma] = np.log(self.spec.sigma_shape / self.spec.sigma_rate)
        if self.spec.mode == "nonph":
            theta[self.sl_tau] = np.log(self.spec.tau_shape / self.spec.tau_rate)
        return theta


def calibration_offsets(config: SplineConfig) -> np.ndarray:
    """Logit offsets mu with softmax(mu) equal to the constant-hazard coefficients."""
    p = constant_coefs(config)
    return np.log(p / p[0])


def rw_weights(config: SplineConfig) -> np.ndarray:
    """Random-walk step scales w_i, one per basis term (w_1 unused).

    Each scale is the mean distinct-knot gap across the basis term's
    support, in time units.  Terms spanning wider knot regions are allowed
    larger steps, and refining the knot grid shrinks every step, so the
    implied prior spread of the whole log-coefficient field is governed by
    the observed time span rather than by the number of basis terms.
    """
    return get_basis(config).support_mean_gaps()


def _logistic_logpdf(x, loc, scale):
    z = (np.asarray(x, dtype=float) - loc) / scale
    az = np.abs(z)
    return -az - 2.0 * np.log1p(np.exp(-az)) - np.log(scale)


def gamma_logits(spec: ModelSpec, theta: np.ndarray, x=None) -> np.ndarray:
    """Softmax logits gamma for covariate rows x; shape (m, n)."""
    pv = ParamVector(spec)
    parts = pv.unpack(theta)
    mu = calibration_offsets(spec.config)
    sigma = np.exp(parts.log_sigma)
    base = mu + sigma * parts.eps
    if x is None:
        x = np.zeros((1, spec.ncov))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return base[None, :] + x @ parts.delta.T


def coefficients(spec: ModelSpec, theta: np.ndarray, x=None) -> np.ndarray:
    """Basis mixture weights p(x) on the simplex; shape (m, n)."""
    g = gamma_logits(spec, theta, x)
    g = g - g.max(axis=1, keepdims=True)
    e = np.exp(g)
    return e / e.sum(axis=1, keepdims=True)


def _eta(spec: ModelSpec, theta: np.ndarray, x) -> np.ndarray:
    pv = ParamVector(spec)
    parts = pv.unpack(theta)
    if x is None:
        x = np.zeros((1, spec.ncov))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return np.exp(parts.log_eta + x @ parts.beta)


def hazard(spec: ModelSpec, theta: np.ndarray, t, x=None) -> np.ndarray:
    """h(t | x) for one covariate profile; returns an array over t."""
    b = get_basis(spec.config).mspline(t)
    p = coefficients(spec, theta, x)[0]
    return float(_eta(spec, theta, x)[0]) * (b @ p)


def cumhaz(spec: ModelSpec, theta: np.ndarray, t, x=None) -> np.ndarray:
    """H(t | x) for one covariate profile."""
    ib = get_basis(spec.config).ispline(t)
    p = coefficients(spec, theta, x)[0]
    return float(_eta(spec, theta, x)[0]) * (ib @ p)


def survival(spec: ModelSpec, theta: np.ndarray, t, x=None) -> np.ndarray:
    """S(t | x) = exp(-H(t | x)) for one covariate profile."""
    return np.exp(-cumhaz(spec, theta, t, x))


def log_likelihood(spec: ModelSpec, theta: np.ndarray, data: SurvivalDataset) -> float:
    """Right-censored log likelihood, plain numpy route."""
    if data.ncov != spec.ncov:
        raise ValueError(f"dataset has {data.ncov} covariates, model expects {spec.ncov}")
    basis = get_basis(spec.config)
    b = basis.mspline(data.time)
    ib = basis.ispline(data.time)
    x = data.covariates
    p = coefficients(spec, theta, x if spec.mode == "nonph" else None)
    if spec.mode != "nonph":
        p = np.broadcast_to(p[0], b.shape)
    hb = np.sum(p * b, axis=1)
    hi = np.sum(p * ib, axis=1)
    if spec.mode == "none":
        eta = np.full(data.n_obs, float(_eta(spec, theta, None)[0]))
    else:
        eta = _eta(spec, theta, x)
    d = data.event
    with np.errstate(divide="ignore"):
        terms = d * (np.log(eta) + np.log(hb)) - eta * hi
    return float(terms.sum())


def log_prior(spec: ModelSpec, theta: np.ndarray) -> float:
    """Joint log prior of the free parameters, including log-scale Jacobians."""
    pv = ParamVector(spec)
    parts = pv.unpack(theta)
    n = spec.config.df

    lp = -0.5 * (parts.log_eta / spec.eta_sd) ** 2 \
        - 0.5 * np.log(2.0 * np.pi) - np.log(spec.eta_sd)
    # Gamma(shape a, rate b) on sigma, parameterized by log_sigma:
    # a*ls - b*exp(ls) plus constants
    a, rate = spec.sigma_shape, spec.sigma_rate
    from scipy.special import gammaln

    lp += a * parts.log_sigma - rate * np.exp(parts.log_sigma) \
        + a * np.log(rate) - gammaln(a)

    if spec.smoothing == "random_walk":
        w = rw_weights(spec.config)
        for i in range(1, n):
            lp += _logistic_logpdf(parts.eps[i], parts.eps[i - 1], w[i])
    else:
        lp += _logistic_logpdf(parts.eps[1:], 0.0, 1.0).sum()

    if spec.mode != "none":
        lp += np.sum(
            -0.5 * (parts.beta / spec.beta_sd) ** 2
            - 0.5 * np.log(2.0 * np.pi) - np.log(spec.beta_sd)
        )
    if spec.mode == "nonph":
        tau = np.exp(parts.log_tau)
        at, bt = spec.tau_shape, spec.tau_rate
        lp += np.sum(at * parts.log_tau - bt * tau + at * np.log(bt) - gammaln(at))
        dl = parts.delta[1:]
        lp += np.sum(
            -0.5 * (dl / tau[None, :]) ** 2
            - 0.5 * np.log(2.0 * np.pi) - np.log(tau)[None, :]
        )
    return float(lp)


def log_posterior(spec: ModelSpec, theta: np.ndarray, data: SurvivalDataset) -> float:
    return log_prior(spec, theta) + log_likelihood(spec, theta, data)


class LogPosterior:
    """Posterior density with gradient for one model and dataset.

    Precomputes the basis tables and calibration constants once, then
    delegates each evaluation to the selected kernel backend.  Instances
    are callables returning the log density; ``value_and_grad`` returns
    the density and its gradient together.
    """

    def __init__(self, spec: ModelSpec, data: SurvivalDataset, backend: str | None = None):
        if data.ncov != spec.ncov:
            raise ValueError(f"dataset has {data.ncov} covariates, model expects {spec.ncov}")
        self.spec = spec
        self.data = data
        self.params = ParamVector(spec)
        basis = get_basis(spec.config)
        from . import _kernels

        x = data.covariates if spec.ncov else np.zeros((data.n_obs, 0))
        self._kernel = _kernels.make_posterior(
            b=basis.mspline(data.time),
            ib=basis.ispline(data.time),
            event=data.event,
            x=np.ascontiguousarray(x),
            mu=calibration_offsets(spec.config),
            w=rw_weights(spec.config),
            mode={"none": 0, "ph": 1, "nonph": 2}[spec.mode],
            exchangeable=spec.smoothing == "exchangeable",
            eta_sd=spec.eta_sd,
            beta_sd=spec.beta_sd,
            sigma_shape=spec.sigma_shape,
            sigma_rate=spec.sigma_rate,
            tau_shape=spec.tau_shape,
            tau_rate=spec.tau_rate,
            backend=backend,
        )
        self.backend = self._kernel.backend

    @cached_property
    def dim(self) -> int:
        return self.params.size

    def _check(self, theta) -> np.ndarray:
        theta = np.ascontiguousarray(theta, dtype=float)
        if theta.shape != (self.params.size,):
            raise ValueError(f"expected theta of length {self.params.size}, got {theta.shape}")
        if not np.all(np.isfinite(theta)):
            bad = int(np.nonzero(~np.isfinite(theta))[0][0])
            raise ValueError(f"non-finite parameter {self.params.names[bad]!r} (index {bad})")
        return theta

    def __call__(self, theta) -> float:
        return self.value_and_grad(theta)[0]

    def value_and_grad(self, theta) -> tuple[float, np.ndarray]:
        """Posterior log density and gradient; -inf (zero grad) on overflow."""
        return self._kernel.value_and_grad(self._check(theta))
