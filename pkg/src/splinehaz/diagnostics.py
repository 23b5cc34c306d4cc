"""Convergence diagnostics: rank-normalized split R-hat and bulk/tail ESS.

All functions take draws shaped (chains, iterations); the scalar versions
reduce one parameter at a time.  R-hat is the max of the rank-normalized
statistic on the split chains and on the folded (absolute-deviation) chains;
effective sample sizes use per-chain FFT autocovariances combined across
chains, with Geyer's initial monotone positive-sequence truncation.
"""

from __future__ import annotations

import numpy as np
from scipy.fft import next_fast_len
from scipy.special import ndtri
from scipy.stats import rankdata


def _split(x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise ValueError("draws must be (chains, iterations)")
    half = x.shape[1] // 2
    return np.vstack([x[:, :half], x[:, half:2 * half]])


def _rank_normalize(x):
    # average ranks keep tied draws tied, so degenerate chains stay degenerate
    ranks = rankdata(x.ravel(), method="average")
    z = ndtri((ranks - 0.375) / (x.size + 0.25))
    return z.reshape(x.shape)


def _rhat_basic(x):
    nchain, ndraw = x.shape
    if ndraw < 2 or nchain < 2:
        return np.nan
    chain_mean = x.mean(axis=1)
    chain_var = x.var(axis=1, ddof=1)
    w = chain_var.mean()
    b_over_n = chain_mean.var(ddof=1)
    var_plus = (ndraw - 1) / ndraw * w + b_over_n
    if w <= 0:
        return np.nan if var_plus > 0 else 1.0
    return float(np.sqrt(var_plus / w))


def rhat(x) -> float:
    """Rank-normalized split R-hat: max of the bulk and folded statistics."""
    x = _split(x)
    bulk = _rhat_basic(_rank_normalize(x))
    folded = _rhat_basic(_rank_normalize(np.abs(x - np.median(x))))
    return max(bulk, folded)


def _autocov(x):
    n = x.shape[-1]
    centered = x - x.mean(axis=-1, keepdims=True)
    size = next_fast_len(2 * n)
    f = np.fft.rfft(centered, size, axis=-1)
    acov = np.fft.irfft(f * np.conj(f), size, axis=-1)[..., :n]
    return acov.real / n


def _ess_from_chains(x) -> float:
    """Combined-chain ESS via initial monotone positive pair sums."""
    nchain, ndraw = x.shape
    if ndraw < 4:
        return np.nan
    if np.allclose(x, x.ravel()[0]):
        return np.nan
    acov = _autocov(x)
    mean_var = acov[:, 0].mean() * ndraw / (ndraw - 1.0)
    var_plus = mean_var * (ndraw - 1.0) / ndraw
    if nchain > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    if var_plus <= 0:
        return np.nan

    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer pairs: keep while rho_{2k} + rho_{2k+1} stays positive, then
    # enforce monotone non-increase
    max_pairs = (ndraw - 1) // 2
    pair_sums = []
    for k in range(max_pairs):
        s = rho[2 * k] + rho[2 * k + 1]
        if s <= 0 and k > 0:
            break
        pair_sums.append(max(s, 0.0) if k == 0 else s)
    if not pair_sums:
        return np.nan
    for k in range(1, len(pair_sums)):
        pair_sums[k] = min(pair_sums[k], pair_sums[k - 1])
    tau = -1.0 + 2.0 * float(np.sum(pair_sums))
    tau = max(tau, 1.0 / np.log10(nchain * ndraw + 10.0))
    return float(nchain * ndraw / tau)


def ess_bulk(x) -> float:
    """Bulk ESS: standard ESS of the rank-normalized split chains."""
    return _ess_from_chains(_rank_normalize(_split(x)))


def ess_tail(x) -> float:
    """Tail ESS: worst ESS of the 5% and 95% quantile indicator chains."""
    x = _split(x)
    parts = []
    for q in (0.05, 0.95):
        cut = np.quantile(x, q)
        parts.append(_ess_from_chains((x <= cut).astype(float)))
    if np.any(np.isnan(parts)):
        return float("nan")
    return float(min(parts))


def summarize_draws(by_chain):
    """Per-parameter rhat/ess_bulk/ess_tail for draws shaped (chains, iters, dim)."""
    by_chain = np.asarray(by_chain, dtype=float)
    if by_chain.ndim != 3:
        raise ValueError("expected (chains, iterations, dim)")
    dim = by_chain.shape[2]
    out = {
        "rhat": np.empty(dim),
        "ess_bulk": np.empty(dim),
        "ess_tail": np.empty(dim),
    }
    for j in range(dim):
        x = by_chain[:, :, j]
        out["rhat"][j] = rhat(x)
        out["ess_bulk"][j] = ess_bulk(x)
        out["ess_tail"][j] = ess_tail(x)
    return out
