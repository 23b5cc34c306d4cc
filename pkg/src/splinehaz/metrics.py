"""Simulation-study performance metrics with Monte Carlo standard errors.

Operates on per-replicate records (point estimate, posterior SD, interval,
convergence flags) plus the true estimand value, and produces the usual
frequentist summary: bias, empirical SE, relative bias, interval coverage,
and average model-based SE, each with its MCSE, plus convergence-rate
columns.  ``filter_converged`` applies the chosen inclusion policy before
any metric is computed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

RHAT_THRESHOLD = 1.05
ESS_THRESHOLD = 400.0


@dataclass(frozen=True)
class ReplicateRecord:
    """One replicate's estimate and fit diagnostics for one study cell."""

    replicate: int
    estimate: float
    post_sd: float
    ci_low: float
    ci_high: float
    converged: bool
    rhat_max: float
    ess_bulk_min: float
    ess_tail_min: float
    n_divergent: int
    runtime_seconds: float


RECORD_FIELDS = [f.name for f in fields(ReplicateRecord)]


def filter_converged(records, policy: str = "none"):
    """Apply the replicate inclusion policy.

    Returns ``(kept, report)``.  The default policy keeps every replicate
    (convergence problems are reported in their own columns instead); the
    'strict' policy drops replicates whose worst split R-hat exceeds
    RHAT_THRESHOLD.  The report counts inputs, kept rows, and exclusions
    under either policy.
    """
    records = list(records)
    if policy == "none":
        kept = records
    elif policy == "strict":
        kept = [r for r in records
                if not (math.isfinite(r.rhat_max) and r.rhat_max > RHAT_THRESHOLD)]
    else:
        raise ValueError(f"unknown policy {policy!r}; use 'none' or 'strict'")
    report = {
        "policy": policy,
        "n_input": len(records),
        "n_kept": len(kept),
        "n_excluded": len(records) - len(kept),
    }
    return kept, report


def _mean(xs):
    return sum(xs) / len(xs)


def _sd(xs):
    if len(xs) < 2:
        return float("nan")
    m = _mean(xs)
    return math.sqrt(sum((x - m) ** 2 for x in xs) / (len(xs) - 1))


def performance_table(records, truth: float) -> dict[str, float]:
    """All performance metrics for one study cell, as an ordered mapping."""
    records = list(records)
    n = len(records)
    if n < 2:
        raise ValueError("need at least two replicates to compute metrics")
    est = [r.estimate for r in records]
    psd = [r.post_sd for r in records]

    mean_est = _mean(est)
    bias = mean_est - truth
    empse = _sd(est)
    bias_mcse = empse / math.sqrt(n)
    empse_mcse = empse / math.sqrt(2.0 * (n - 1))
    if truth != 0.0:
        relbias = 100.0 * bias / truth
        relbias_mcse = 100.0 * bias_mcse / abs(truth)
    else:
        relbias = float("nan")
        relbias_mcse = float("nan")

    covered = [1.0 if r.ci_low <= truth <= r.ci_high else 0.0 for r in records]
    p_cov = _mean(covered)
    coverage = 100.0 * p_cov
    coverage_mcse = 100.0 * math.sqrt(p_cov * (1.0 - p_cov) / n)

    mean_post_sd = _mean(psd)
    mean_post_sd_mcse = _sd(psd) / math.sqrt(n)
    # model SE on the variance scale, with a delta-method MCSE
    msq = _mean([s * s for s in psd])
    rms_modse = math.sqrt(msq)
    sd_sq = _sd([s * s for s in psd])
    rms_modse_mcse = sd_sq / (2.0 * rms_modse * math.sqrt(n)) if rms_modse > 0 \
        else float("nan")

    pct_rhat_high = 100.0 * _mean(
        [1.0 if (math.isfinite(r.rhat_max) and r.rhat_max > RHAT_THRESHOLD) else 0.0
         for r in records])
    pct_any_divergent = 100.0 * _mean([1.0 if r.n_divergent > 0 else 0.0 for r in records])

    def _ess_low(r):
        for v in (r.ess_bulk_min, r.ess_tail_min):
            if math.isfinite(v) and v < ESS_THRESHOLD:
                return 1.0
        return 0.0

    pct_ess_low = 100.0 * _mean([_ess_low(r) for r in records])
    mean_runtime = _mean([r.runtime_seconds for r in records])

    return {
        "n_reps": float(n),
        "truth": truth,
        "mean_est": mean_est,
        "mean_est_mcse": bias_mcse,
        "bias": bias,
        "bias_mcse": bias_mcse,
        "relbias_pct": relbias,
        "relbias_pct_mcse": relbias_mcse,
        "empse": empse,
        "empse_mcse": empse_mcse,
        "mean_post_sd": mean_post_sd,
        "mean_post_sd_mcse": mean_post_sd_mcse,
        "rms_modse": rms_modse,
        "rms_modse_mcse": rms_modse_mcse,
        "coverage_pct": coverage,
        "coverage_pct_mcse": coverage_mcse,
        "pct_rhat_high": pct_rhat_high,
        "pct_any_divergent": pct_any_divergent,
        "pct_ess_low": pct_ess_low,
        "mean_runtime_s": mean_runtime,
    }


PERFORMANCE_COLUMNS = [
    "n_reps", "truth", "mean_est", "mean_est_mcse", "bias", "bias_mcse",
    "relbias_pct", "relbias_pct_mcse", "empse", "empse_mcse",
    "mean_post_sd", "mean_post_sd_mcse", "rms_modse", "rms_modse_mcse",
    "coverage_pct", "coverage_pct_mcse",
    "pct_rhat_high", "pct_any_divergent", "pct_ess_low", "mean_runtime_s",
]
