"""Cubic M-spline hazard basis: knot placement, evaluation, integrals, calibration.

The hazard model downstream is a weighted sum of M-spline basis functions.
M-splines are non-negative piecewise polynomials that each integrate to one
over the knot span [L, U]; their running integrals (I-splines) rise
monotonically from 0 to 1.  Beyond the upper boundary the basis is extended
as a constant, so the implied hazard is flat for t > U and the integrated
basis grows linearly there.

Degrees-of-freedom arithmetic (cubic default, degree = k):

* standard basis (``bsmooth=False``): ``df = n_interior_knots + k + 1``,
  so cubic needs df >= 4 (df = 4 means no interior knots).
* smoothed basis (``bsmooth=True``): the last three raw basis terms are
  replaced by a single fixed convex combination chosen so that the hazard
  has zero first and second derivative at U for *any* coefficient vector.
  That removes two free coefficients: ``df = n_interior_knots + k - 1``,
  so cubic needs df >= 2 (df = 3 means one interior knot).

Interior knots are placed at equally spaced quantiles of the uncensored
event times; the lower boundary is fixed at L = 0 and the upper boundary
defaults to the largest observed time.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class BasisError(ValueError):
    """Raised when a spline configuration cannot be constructed."""


class CalibrationError(RuntimeError):
    """Raised when the constant-hazard coefficient calibration fails."""


@dataclass(frozen=True)
class SplineConfig:
    """Immutable description of an M-spline basis.

    df counts the free, user-facing basis coefficients (see module docstring
    for how it maps to the interior-knot count for each basis variant).
    """

    df: int
    interior_knots: tuple[float, ...]
    boundary_knots: tuple[float, float]
    degree: int = 3
    bsmooth: bool = True

    def __post_init__(self):
        lo, hi = self.boundary_knots
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise BasisError(f"boundary knots must satisfy L < U, got {self.boundary_knots}")
        knots = np.asarray(self.interior_knots, dtype=float)
        if knots.size and (np.any(np.diff(knots) < 0) or knots[0] <= lo or knots[-1] >= hi):
            raise BasisError("interior knots must be non-decreasing and strictly inside (L, U)")
        if self.degree < 1:
            raise BasisError("degree must be >= 1")
        if self.bsmooth and self.degree < 2:
            raise BasisError("the smoothed boundary needs degree >= 2")
        expected = len(self.interior_knots) + self.degree + (-1 if self.bsmooth else 1)
        if self.df != expected:
            raise BasisError(
                f"df={self.df} inconsistent with {len(self.interior_knots)} interior knots "
                f"(expected df={expected} for degree={self.degree}, bsmooth={self.bsmooth})"
            )
        min_df = 2 if self.bsmooth else self.degree + 1
        if self.df < min_df:
            raise BasisError(f"df={self.df} below the minimum {min_df} for this basis variant")


def make_knots(event_times, df, degree=3, bsmooth=True, upper=None):
    """Place interior knots at equally spaced quantiles of the event times.

    With m interior knots implied by df, the knots sit at the k/(m+1)
    quantiles, k = 1..m.  The lower boundary is 0; the upper boundary is
    ``upper`` if given (use the largest observed time, censored included,
    when building from a dataset), otherwise the largest event time.
    Coincident or boundary-touching quantiles are collapsed and df reduced
    with a warning, so degenerate data do not abort a simulation run.
    """
    times = np.asarray(event_times, dtype=float)
    if times.size == 0:
        raise BasisError("no event times: cannot place knots")
    if np.any(times <= 0):
        raise BasisError("event times must be positive")
    hi = float(np.max(times) if upper is None else upper)
    if hi <= 0 or hi < np.max(times):
        raise BasisError("upper boundary must be positive and >= all event times")

    m = df - degree + (1 if bsmooth else -1)
    min_df = 2 if bsmooth else degree + 1
    if df < min_df:
        raise BasisError(
            f"df={df} too small for degree={degree}, bsmooth={bsmooth}: need df >= {min_df}"
        )
    if m > 0:
        qs = np.arange(1, m + 1) / (m + 1)
        knots = np.quantile(times, qs)
        keep = (knots > 0.0) & (knots < hi)
        knots = np.unique(knots[keep])
    else:
        knots = np.empty(0)
    if len(knots) < m:
        new_df = len(knots) + degree + (-1 if bsmooth else 1)
        if new_df < min_df:
            raise BasisError(
                f"only {len(knots)} distinct interior knots available from "
                f"{np.unique(times).size} distinct event times; df={df} needs {m}"
            )
        warnings.warn(
            f"collapsed {m - len(knots)} coincident knots; df reduced {df} -> {new_df}",
            stacklevel=2,
        )
        df = new_df
    return SplineConfig(
        df=df,
        interior_knots=tuple(float(k) for k in knots),
        boundary_knots=(0.0, hi),
        degree=degree,
        bsmooth=bsmooth,
    )


# ---------------------------------------------------------------------------
# raw B-spline machinery (clamped knot vector, vectorized de Boor recursion)
# ---------------------------------------------------------------------------


def _bspline_design(knots, k, t):
    """Dense design matrix of normalized B-splines B_{i,k} at the points t.

    ``knots`` is the extended (clamped) knot vector.  Points are assumed to
    lie within [knots[k], knots[-k-1]]; the right endpoint is handled by the
    usual limit-from-the-left convention.
    """
    t = np.asarray(t, dtype=float)
    nb = len(knots) - k - 1
    span = np.searchsorted(knots, t, side="right") - 1
    # at t = U the span must be the last non-empty interval, not a degenerate
    # one inside the repeated boundary knots (matters for k below the
    # clamping multiplicity, as in derivative recursions)
    last = int(np.nonzero(np.diff(knots) > 0)[0][-1])
    span = np.clip(span, k, min(last, nb - 1))

    npts = t.shape[0]
    work = np.zeros((npts, k + 1))
    work[:, 0] = 1.0
    left = np.empty((npts, k + 1))
    right = np.empty((npts, k + 1))
    for j in range(1, k + 1):
        left[:, j] = t - knots[span + 1 - j]
        right[:, j] = knots[span + j] - t
        saved = np.zeros(npts)
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            temp = np.where(denom != 0.0, work[:, r] / np.where(denom == 0.0, 1.0, denom), 0.0)
            work[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        work[:, j] = saved

    out = np.zeros((npts, nb))
    cols = span[:, None] - k + np.arange(k + 1)[None, :]
    np.put_along_axis(out, cols, work, axis=1)
    return out


def _bspline_design_deriv(knots, k, t, order):
    """Design matrix of the order-th derivative of normalized B-splines."""
    if order == 0:
        return _bspline_design(knots, k, t)
    if k == 0:
        return np.zeros((len(np.atleast_1d(t)), len(knots) - 1))
    lower = _bspline_design_deriv(knots, k - 1, t, order - 1)
    nb = len(knots) - k - 1
    out = np.zeros((lower.shape[0], nb))
    for i in range(nb):
        d1 = knots[i + k] - knots[i]
        d2 = knots[i + k + 1] - knots[i + 1]
        if d1 > 0:
            out[:, i] += k * lower[:, i] / d1
        if d2 > 0 and i + 1 < lower.shape[1]:
            out[:, i] -= k * lower[:, i + 1] / d2
    return out


@lru_cache(maxsize=256)
def get_basis(config: SplineConfig) -> "MSplineBasis":
    """Shared per-config basis evaluator (configs are immutable, so caching is safe)."""
    return MSplineBasis(config)


class MSplineBasis:
    """Evaluator for one spline configuration.

    Exposes the basis values b_i(t), integrated basis I_i(t), raw-derivative
    evaluation, and the constant-extension behaviour past the upper boundary.
    Instances are immutable after construction and safe to share across
    threads and processes.
    """

    def __init__(self, config: SplineConfig):
        self.config = config
        k = config.degree
        lo, hi = config.boundary_knots
        inner = np.asarray(config.interior_knots, dtype=float)
        self.knots = np.concatenate([np.full(k + 1, lo), inner, np.full(k + 1, hi)])
        self.n_raw = len(self.knots) - k - 1
        # M-spline scaling: each basis function integrates to one on [L, U]
        self._scale = (k + 1) / (self.knots[k + 1 :] - self.knots[: self.n_raw])

        if config.bsmooth:
            self._transform = self._smooth_transform()
        else:
            self._transform = np.eye(self.n_raw)
        self.n = self._transform.shape[1]
        if self.n != config.df:
            raise BasisError(f"internal df mismatch: {self.n} != {config.df}")

        self._segments = np.concatenate([[lo], inner, [hi]])
        self._gl_x, self._gl_w = np.polynomial.legendre.leggauss((k + 2) // 2 + 1)
        self._cum = self._segment_integrals()
        self._value_at_upper = self._raw_values(np.array([hi])) @ self._transform
        self._int_at_upper = self._cum[-1]

    # -- construction helpers -----------------------------------------------

    def _raw_values(self, t):
        return _bspline_design(self.knots, self.config.degree, t) * self._scale

    def _raw_deriv(self, t, order):
        return _bspline_design_deriv(self.knots, self.config.degree, t, order) * self._scale

    def _smooth_transform(self):
        """Fold the last three raw terms into one term with flat upper boundary.

        The combination coefficients span the null space of the 2x3 matrix of
        first and second raw-basis derivatives at U, normalized to keep unit
        integral; for non-negative raw bases this combination stays positive.
        """
        hi = self.config.boundary_knots[1]
        d1 = self._raw_deriv(np.array([hi]), 1)[0, -3:]
        d2 = self._raw_deriv(np.array([hi]), 2)[0, -3:]
        a_mat = np.vstack([d1, d2])
        _, _, vt = np.linalg.svd(a_mat)
        a = vt[-1]
        total = a.sum()
        if abs(total) < 1e-12:
            raise BasisError("degenerate boundary-derivative constraint")
        a = a / total
        if np.any(a < -1e-10):
            raise BasisError(f"smoothed-boundary combination not non-negative: {a}")
        a = np.clip(a, 0.0, None)
        a = a / a.sum()
        t_mat = np.zeros((self.n_raw, self.n_raw - 2))
        for i in range(self.n_raw - 3):
            t_mat[i, i] = 1.0
        t_mat[-3:, -1] = a
        return t_mat

    def _segment_integrals(self):
        """Cumulative integral of every (transformed) basis term at each segment boundary.

        Per-segment Gauss-Legendre with enough nodes is exact for the
        piecewise-polynomial basis, so these tables are machine-precision.
        """
        cum = np.zeros((len(self._segments), self.n))
        for j in range(len(self._segments) - 1):
            a, b = self._segments[j], self._segments[j + 1]
            mid, half = 0.5 * (a + b), 0.5 * (b - a)
            nodes = mid + half * self._gl_x
            vals = (self._raw_values(nodes) @ self._transform)
            cum[j + 1] = cum[j] + half * (self._gl_w @ vals)
        return cum

    # -- public evaluation ----------------------------------------------------

    def mspline(self, t):
        """Basis values b_i(t) with constant extension past U; shape (len(t), n)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < 0):
            raise ValueError("basis evaluation needs t >= 0")
        hi = self.config.boundary_knots[1]
        inside = np.minimum(t, hi)
        out = self._raw_values(inside) @ self._transform
        beyond = t > hi
        if np.any(beyond):
            out[beyond] = self._value_at_upper
        return out

    def ispline(self, t):
        """Integrated basis I_i(t) = int_0^t b_i; linear growth past U."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < 0):
            raise ValueError("basis integration needs t >= 0")
        hi = self.config.boundary_knots[1]
        inside = np.minimum(t, hi)
        seg = np.clip(np.searchsorted(self._segments, inside, side="right") - 1, 0,
                      len(self._segments) - 2)
        lo_bound = self._segments[seg]
        out = self._cum[seg].copy()
        half = 0.5 * (inside - lo_bound)
        # partial-segment Gauss-Legendre, node by node (node count is 3 for cubics)
        for q in range(len(self._gl_x)):
            nodes = lo_bound + half * (self._gl_x[q] + 1.0)
            out += (half * self._gl_w[q])[:, None] * (self._raw_values(nodes) @ self._transform)
        beyond = t > hi
        if np.any(beyond):
            out[beyond] = self._int_at_upper + np.outer(t[beyond] - hi, np.ones(self.n)) \
                * self._value_at_upper
        return out

    def deriv(self, t, order=1):
        """Derivatives of the basis inside [L, U] (no extension handling)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return self._raw_deriv(t, order) @ self._transform

    def support_mean_gaps(self):
        """Mean distinct-knot spacing spanned by each basis term.

        Feeds the random-walk prior weights: term i of the smoothed basis
        keeps the raw support of raw term i, and the composite final term
        spans the union of the last three raw supports.  Uniformly spaced
        knots give equal gaps for every term.
        """
        k = self.config.degree
        gaps = np.empty(self.n)
        for i in range(self.n):
            if self.config.bsmooth and i == self.n - 1:
                lo, hi = self.knots[self.n_raw - 3], self.knots[self.n_raw + k]
            else:
                lo, hi = self.knots[i], self.knots[i + k + 1]
            uniq = np.unique(self.knots[(self.knots >= lo) & (self.knots <= hi)])
            gaps[i] = (uniq[-1] - uniq[0]) / max(len(uniq) - 1, 1)
        return gaps


def eval_mspline(config: SplineConfig, t):
    """Basis values b_i(t); constant extension for t beyond the upper boundary."""
    return get_basis(config).mspline(t)


def eval_ispline(config: SplineConfig, t):
    """Integrated basis I_i(t), consistent with the constant extension."""
    return get_basis(config).ispline(t)


def constant_coefs(config: SplineConfig, grid_size=512):
    """Simplex coefficients p* that flatten the basis mixture to a constant.

    Minimizes the squared deviation of sum_i p_i b_i(t) from its own mean
    over a dense grid on (L, U), subject to the simplex constraints.  The
    equality-constrained quadratic program is solved via its KKT system;
    since a constant function lies exactly in the basis span, the optimum
    is interior (all p_i > 0) and the deviation is numerically zero.
    """
    basis = get_basis(config)
    lo, hi = config.boundary_knots
    grid = lo + (hi - lo) * (np.arange(grid_size) + 0.5) / grid_size
    b = basis.mspline(grid)
    bc = b - b.mean(axis=0, keepdims=True)
    q = bc.T @ bc
    n = basis.n
    kkt = np.zeros((n + 1, n + 1))
    kkt[:n, :n] = 2.0 * q
    kkt[:n, n] = 1.0
    kkt[n, :n] = 1.0
    rhs = np.zeros(n + 1)
    rhs[n] = 1.0
    try:
        sol = np.linalg.solve(kkt, rhs)
        p = sol[:n]
    except np.linalg.LinAlgError:
        p = np.full(n, np.nan)
    if not np.all(np.isfinite(p)) or np.any(p <= 0):
        p = _constant_coefs_slsqp(b, n)
    if np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-8:
        raise CalibrationError("constant-hazard calibration left the simplex")
    return p / p.sum()


def _constant_coefs_slsqp(b, n):
    from scipy.optimize import minimize

    def objective(p):
        h = b @ p
        d = h - h.mean()
        return d @ d

    res = minimize(
        objective,
        np.full(n, 1.0 / n),
        method="SLSQP",
        bounds=[(1e-10, 1.0)] * n,
        constraints=[{"type": "eq", "fun": lambda p: p.sum() - 1.0}],
        options={"maxiter": 500, "ftol": 1e-14},
    )
    if not res.success:
        raise CalibrationError(f"constant-hazard calibration failed: {res.message}")
    return res.x
