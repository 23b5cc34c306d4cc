"""Data-generating mechanisms for simulation studies.

A mechanism exposes ``hazard(t)`` and ``cumhaz(t)``; event times are drawn
by inverting the cumulative hazard at unit-exponential deviates with a
bracketed false-position solver, so closed-form and spline-based mechanisms
share one sampling path.  Treatment arms are built from a control mechanism
and a time-varying hazard-ratio function; their cumulative hazard uses
fixed-order Gauss-Legendre quadrature from zero.

``true_rmst`` and ``true_rmst_difference`` compute the target estimands by
adaptive quadrature of the survival function, independent of the model code.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.special import erfc

from .model import SurvivalDataset

_GL_ORDER = 100


@dataclass(frozen=True)
class ExponentialDGM:
    """Constant hazard."""

    rate: float

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("rate must be positive")

    def hazard(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.rate)

    def cumhaz(self, t):
        return self.rate * np.asarray(t, dtype=float)


@dataclass(frozen=True)
class WeibullDGM:
    """Weibull hazard h(t) = (shape/scale) * (t/scale)**(shape-1)."""

    shape: float
    scale: float

    def __post_init__(self):
        if self.shape <= 0 or self.scale <= 0:
            raise ValueError("shape and scale must be positive")

    def hazard(self, t):
        t = np.asarray(t, dtype=float)
        return (self.shape / self.scale) * (t / self.scale) ** (self.shape - 1.0)

    def cumhaz(self, t):
        t = np.asarray(t, dtype=float)
        return (t / self.scale) ** self.shape


@dataclass(frozen=True)
class RoystonParmarDGM:
    """Flexible mechanism with log cumulative hazard spline in log time.

    log H(t) = c0 + c1*x + sum_j c_{j+1} v_j(x) at x = log t, where v_j are
    natural cubic spline terms for the interior knots (linear beyond the
    boundary knots).  The spline must be strictly increasing, which is
    checked on a wide grid at construction.
    """

    log_time_knots: tuple[float, ...]
    coefs: tuple[float, ...]

    def __post_init__(self):
        knots = np.asarray(self.log_time_knots, dtype=float)
        if knots.size < 2 or np.any(np.diff(knots) <= 0):
            raise ValueError("need at least two strictly increasing log-time knots")
        if len(self.coefs) != knots.size:
            raise ValueError(f"need {knots.size} coefficients, got {len(self.coefs)}")
        grid = np.linspace(knots[0] - 3.0, knots[-1] + 3.0, 601)
        if np.min(self._slope(grid)) <= 0:
            raise ValueError("log cumulative hazard spline must be strictly increasing")

    def _basis(self, x):
        knots = np.asarray(self.log_time_knots, dtype=float)
        kmin, kmax = knots[0], knots[-1]
        cols = [np.ones_like(x), x]
        for kj in knots[1:-1]:
            lam = (kmax - kj) / (kmax - kmin)
            cols.append(np.clip(x - kj, 0, None) ** 3
                        - lam * np.clip(x - kmin, 0, None) ** 3
                        - (1 - lam) * np.clip(x - kmax, 0, None) ** 3)
        return np.stack(cols, axis=-1)

    def _slope_basis(self, x):
        knots = np.asarray(self.log_time_knots, dtype=float)
        kmin, kmax = knots[0], knots[-1]
        cols = [np.zeros_like(x), np.ones_like(x)]
        for kj in knots[1:-1]:
            lam = (kmax - kj) / (kmax - kmin)
            cols.append(3.0 * (np.clip(x - kj, 0, None) ** 2
                               - lam * np.clip(x - kmin, 0, None) ** 2
                               - (1 - lam) * np.clip(x - kmax, 0, None) ** 2))
        return np.stack(cols, axis=-1)

    def _spline(self, x):
        return self._basis(x) @ np.asarray(self.coefs)

    def _slope(self, x):
        return self._slope_basis(x) @ np.asarray(self.coefs)

    def cumhaz(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        pos = t > 0
        out[pos] = np.exp(self._spline(np.log(t[pos])))
        return out

    def hazard(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        pos = t > 0
        x = np.log(t[pos])
        out[pos] = np.exp(self._spline(x)) * self._slope(x) / t[pos]
        return out


@dataclass(frozen=True)
class ConstantHR:
    """Time-constant hazard ratio."""

    value: float = 0.7

    def __call__(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.value)


@dataclass(frozen=True)
class TanhWaningHR:
    """Early benefit that wanes: log HR = base + amp * tanh(rate*t - shift)."""

    base: float = -0.38
    amp: float = 0.38
    rate: float = 0.8
    shift: float = 1.2

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(self.base + self.amp * np.tanh(self.rate * t - self.shift))


def emg_pdf(x, mu, sigma, lam):
    """Exponentially modified Gaussian density."""
    x = np.asarray(x, dtype=float)
    expo = 0.5 * lam * (2.0 * mu + lam * sigma ** 2 - 2.0 * x)
    tail = erfc((mu + lam * sigma ** 2 - x) / (np.sqrt(2.0) * sigma))
    return 0.5 * lam * np.exp(expo) * tail


@dataclass(frozen=True)
class EMGDelayedHR:
    """Delayed-onset effect: log HR proportional to an EMG density bump."""

    coef: float = -2.8
    mu: float = 0.8
    sigma: float = 0.4
    lam: float = 0.35

    def __call__(self, t):
        return np.exp(self.coef * emg_pdf(t, self.mu, self.sigma, self.lam))


@dataclass(frozen=True)
class TreatedArm:
    """Control mechanism with a multiplicative time-varying hazard ratio."""

    control: object
    hr: object
    _gl: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        gx, gw = np.polynomial.legendre.leggauss(_GL_ORDER)
        object.__setattr__(self, "_gl", (0.5 * (gx + 1.0), 0.5 * gw))

    def hazard(self, t):
        t = np.asarray(t, dtype=float)
        return self.control.hazard(t) * self.hr(t)

    def cumhaz(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        nodes01, w01 = self._gl
        u = np.outer(t, nodes01)
        vals = self.control.hazard(u) * self.hr(u)
        return t * (vals @ w01)


def invert_cumhaz(cumhaz_fn, targets, hi_init=None, tol=1e-10, max_iter=200):
    """Solve cumhaz(t) = target per element with bracketed false position.

    Targets must be positive.  The bracket is grown by doubling when no
    upper bound is supplied; the Illinois weighting keeps the bracket
    shrinking even for one-sided convergence.
    """
    e = np.asarray(targets, dtype=float)
    lo = np.zeros_like(e)
    flo = -e.copy()
    if hi_init is None:
        hi = np.ones_like(e)
    else:
        hi = np.full_like(e, float(hi_init))
    fhi = np.asarray(cumhaz_fn(hi), dtype=float) - e
    for _ in range(100):
        need = fhi < 0
        if not np.any(need):
            break
        lo[need] = hi[need]
        flo[need] = fhi[need]
        hi[need] = hi[need] * 2.0
        fhi[need] = np.asarray(cumhaz_fn(hi[need]), dtype=float) - e[need]
    else:
        raise RuntimeError("could not bracket the event time; cumulative hazard "
                           "may be bounded below the target")

    side = np.zeros(e.shape, dtype=np.int8)
    active = np.ones(e.shape, dtype=bool)
    for _ in range(max_iter):
        active = (hi - lo) > tol * np.maximum(1.0, hi)
        if not np.any(active):
            break
        la, ha, fla, fha = lo[active], hi[active], flo[active], fhi[active]
        t = ha - fha * (ha - la) / (fha - fla)
        # guard against stagnation at an endpoint
        mid_ok = (t > la) & (t < ha)
        t = np.where(mid_ok, t, 0.5 * (la + ha))
        ft = np.asarray(cumhaz_fn(t), dtype=float) - e[active]
        up = ft > 0
        new_side = np.where(up, np.int8(1), np.int8(-1))
        stuck = new_side == side[active]
        ha2 = np.where(up, t, ha)
        fha2 = np.where(up, ft, np.where(stuck, 0.5 * fha, fha))
        la2 = np.where(up, la, t)
        fla2 = np.where(up, np.where(stuck, 0.5 * fla, fla), ft)
        lo[active], hi[active] = la2, ha2
        flo[active], fhi[active] = fla2, fha2
        side[active] = new_side
    return 0.5 * (lo + hi)


def simulate_arm(dgm, n, rng, censor_time=None, chunk=50_000):
    """Draw n right-censored samples from one arm; returns (time, event)."""
    time_out = np.empty(n)
    event_out = np.empty(n)
    h_cens = float(dgm.cumhaz(np.array([censor_time]))[0]) if censor_time else None
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        e = rng.exponential(1.0, stop - start)
        t = np.empty_like(e)
        d = np.ones_like(e)
        if censor_time is not None:
            censored = e > h_cens
            t[censored] = censor_time
            d[censored] = 0.0
            solve = ~censored
            if np.any(solve):
                t[solve] = invert_cumhaz(dgm.cumhaz, e[solve], hi_init=censor_time)
        else:
            t = invert_cumhaz(dgm.cumhaz, e)
        time_out[start:stop] = t
        event_out[start:stop] = d
    return time_out, event_out


def simulate_trial(control, hr, n_per_arm, rng, censor_time=None) -> SurvivalDataset:
    """Two-arm trial: control (treat=0) and treated (treat=1) of equal size."""
    treated = TreatedArm(control=control, hr=hr)
    t0, d0 = simulate_arm(control, n_per_arm, rng, censor_time)
    t1, d1 = simulate_arm(treated, n_per_arm, rng, censor_time)
    x = np.concatenate([np.zeros(n_per_arm), np.ones(n_per_arm)])[:, None]
    return SurvivalDataset(time=np.concatenate([t0, t1]),
                           event=np.concatenate([d0, d1]),
                           covariates=x, covariate_names=("treat",))


def true_rmst(dgm, horizon: float) -> float:
    """Restricted mean survival time of a mechanism by adaptive quadrature."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")

    def surv(t):
        return float(np.exp(-dgm.cumhaz(np.array([t]))[0]))

    val, err = quad(surv, 0.0, horizon, epsabs=1e-12, epsrel=1e-12, limit=300)
    if err > 1e-8:
        raise RuntimeError(f"quadrature error {err} too large")
    return float(val)


def true_rmst_difference(control, hr, horizon: float) -> float:
    """True treated-minus-control RMST difference for a scenario."""
    return true_rmst(TreatedArm(control=control, hr=hr), horizon) - true_rmst(control, horizon)


def true_hazard_ratio(hr, t):
    """Evaluate a scenario's hazard-ratio function on a grid."""
    return np.asarray(hr(np.asarray(t, dtype=float)), dtype=float)


DGM_TYPES = {
    "exponential": ExponentialDGM,
    "weibull": WeibullDGM,
    "royston_parmar": RoystonParmarDGM,
}

HR_TYPES = {
    "constant": ConstantHR,
    "tanh_waning": TanhWaningHR,
    "emg_delayed": EMGDelayedHR,
}


def make_dgm(kind: str, **params):
    if kind not in DGM_TYPES:
        raise ValueError(f"unknown mechanism {kind!r}; choose from {sorted(DGM_TYPES)}")
    return DGM_TYPES[kind](**params)


def make_hr(kind: str, **params):
    if kind not in HR_TYPES:
        raise ValueError(f"unknown hazard-ratio form {kind!r}; choose from {sorted(HR_TYPES)}")
    return HR_TYPES[kind](**params)
