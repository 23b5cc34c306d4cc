"""Pure-numpy posterior kernel, the fallback when the compiled core is absent.

Implements the same value-and-gradient contract as the compiled kernel:
given precomputed basis tables for one dataset, evaluate the joint log
posterior and its gradient at a flat parameter vector.  Overflow or a zero
hazard at an event time yields -inf with a zero gradient; the caller treats
that as a rejected region rather than an error.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

LOG_2PI = float(np.log(2.0 * np.pi))


def layout(mode: int, n: int, ncov: int):
    """Offsets of the flat parameter blocks: (i_beta, i_ls, i_eps, i_delta, i_tau, size)."""
    i_beta = 1
    i_ls = i_beta + (ncov if mode >= 1 else 0)
    i_eps = i_ls + 1
    i_delta = i_eps + (n - 1)
    i_tau = i_delta + ((n - 1) * ncov if mode == 2 else 0)
    size = i_tau + (ncov if mode == 2 else 0)
    return i_beta, i_ls, i_eps, i_delta, i_tau, size


class ReferencePosterior:
    backend = "numpy"

    def __init__(self, b, ib, event, x, mu, w, mode, exchangeable,
                 eta_sd, beta_sd, sigma_shape, sigma_rate, tau_shape, tau_rate):
        self.b = np.ascontiguousarray(b, dtype=float)
        self.ib = np.ascontiguousarray(ib, dtype=float)
        self.d = np.ascontiguousarray(event, dtype=float)
        self.x = np.ascontiguousarray(x, dtype=float)
        self.mu = np.ascontiguousarray(mu, dtype=float)
        self.w = np.ascontiguousarray(w, dtype=float)
        self.mode = int(mode)
        self.exchangeable = bool(exchangeable)
        self.eta_sd = float(eta_sd)
        self.beta_sd = float(beta_sd)
        self.sigma_shape = float(sigma_shape)
        self.sigma_rate = float(sigma_rate)
        self.tau_shape = float(tau_shape)
        self.tau_rate = float(tau_rate)

        self.m, self.n = self.b.shape
        self.ncov = self.x.shape[1]
        self.d_sum = float(self.d.sum())
        (self.i_beta, self.i_ls, self.i_eps, self.i_delta, self.i_tau,
         self.size) = layout(self.mode, self.n, self.ncov)
        # prior normalization constants, fixed per model
        self.c_norm_eta = -0.5 * LOG_2PI - np.log(self.eta_sd)
        self.c_norm_beta = -0.5 * LOG_2PI - np.log(self.beta_sd)
        self.c_sigma = self.sigma_shape * np.log(self.sigma_rate) - gammaln(self.sigma_shape)
        self.c_tau = self.tau_shape * np.log(self.tau_rate) - gammaln(self.tau_shape)

    def _fail(self):
        return -np.inf, np.zeros(self.size)

    def value_and_grad(self, theta):
        theta = np.asarray(theta, dtype=float)
        n, nc, mode = self.n, self.ncov, self.mode
        log_eta = theta[0]
        beta = theta[self.i_beta:self.i_ls] if mode >= 1 else np.zeros(0)
        ls = theta[self.i_ls]
        eps = np.zeros(n)
        eps[1:] = theta[self.i_eps:self.i_eps + n - 1]
        if mode == 2:
            delta = np.zeros((n, nc))
            delta[1:] = theta[self.i_delta:self.i_tau].reshape(n - 1, nc)
            log_tau = theta[self.i_tau:self.i_tau + nc]

        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            sigma = np.exp(ls)
            if not np.isfinite(sigma):
                return self._fail()
            base = self.mu + sigma * eps
            if mode == 2:
                gam = base[None, :] + self.x @ delta.T
            else:
                gam = base[None, :]
            gam = gam - gam.max(axis=1, keepdims=True)
            e = np.exp(gam)
            p = e / e.sum(axis=1, keepdims=True)
            if not np.all(np.isfinite(p)):
                return self._fail()

            if mode == 2:
                hb = np.einsum("ij,ij->i", p, self.b)
                hi = np.einsum("ij,ij->i", p, self.ib)
            else:
                hb = self.b @ p[0]
                hi = self.ib @ p[0]
            lin = log_eta + (self.x @ beta if mode >= 1 else np.zeros(self.m))
            eta = np.exp(lin)
            if not np.all(np.isfinite(eta)):
                return self._fail()
            if np.any(hb[self.d > 0] <= 0.0):
                return self._fail()

            eta_hi = eta * hi
            ll = float(np.sum(self.d * (lin + np.log(np.where(self.d > 0, hb, 1.0))))
                       - eta_hi.sum())
            if not np.isfinite(ll):
                return self._fail()

            grad = np.zeros(self.size)
            resid = self.d - eta_hi
            grad[0] = resid.sum()
            if mode >= 1:
                grad[self.i_beta:self.i_ls] = self.x.T @ resid

            d_over_hb = np.where(self.d > 0, self.d / hb, 0.0)
            if mode == 2:
                # g[r, i] = dll/dgamma_{ri}
                g = p * (d_over_hb[:, None] * (self.b - hb[:, None])
                         - eta[:, None] * (self.ib - hi[:, None]))
                g_col = g.sum(axis=0)
            else:
                s1 = self.b.T @ d_over_hb
                s2 = self.ib.T @ eta
                g_col = p[0] * (s1 - self.d_sum - s2 + eta_hi.sum())
            if not np.all(np.isfinite(g_col)):
                return self._fail()
            grad[self.i_eps:self.i_eps + n - 1] = sigma * g_col[1:]
            grad[self.i_ls] = sigma * float(eps @ g_col)
            if mode == 2:
                gx = g[:, 1:].T @ self.x
                if not np.all(np.isfinite(gx)):
                    return self._fail()
                grad[self.i_delta:self.i_tau] = gx.ravel()

            # priors
            lp = -0.5 * (log_eta / self.eta_sd) ** 2 + self.c_norm_eta
            grad[0] += -log_eta / self.eta_sd ** 2
            lp += self.sigma_shape * ls - self.sigma_rate * sigma + self.c_sigma
            grad[self.i_ls] += self.sigma_shape - self.sigma_rate * sigma
            if self.exchangeable:
                z = eps[1:]
                lp += float(np.sum(-np.abs(z) - 2.0 * np.log1p(np.exp(-np.abs(z)))))
                grad[self.i_eps:self.i_eps + n - 1] += -np.tanh(0.5 * z)
            else:
                z = (eps[1:] - eps[:-1]) / self.w[1:]
                lp += float(np.sum(-np.abs(z) - 2.0 * np.log1p(np.exp(-np.abs(z)))
                                   - np.log(self.w[1:])))
                t = np.tanh(0.5 * z) / self.w[1:]
                grad[self.i_eps:self.i_eps + n - 1] += -t
                grad[self.i_eps:self.i_eps + n - 2] += t[1:]
            if mode >= 1:
                lp += float(np.sum(-0.5 * (beta / self.beta_sd) ** 2 + self.c_norm_beta))
                grad[self.i_beta:self.i_ls] += -beta / self.beta_sd ** 2
            if mode == 2:
                tau = np.exp(log_tau)
                if not np.all(np.isfinite(tau)):
                    return self._fail()
                lp += float(np.sum(self.tau_shape * log_tau - self.tau_rate * tau + self.c_tau))
                grad[self.i_tau:] += self.tau_shape - self.tau_rate * tau
                dl = delta[1:]
                inv2 = 1.0 / tau ** 2
                lp += float(np.sum(-0.5 * dl ** 2 * inv2[None, :]
                                   - 0.5 * LOG_2PI - log_tau[None, :]))
                grad[self.i_delta:self.i_tau] += (-dl * inv2[None, :]).ravel()
                grad[self.i_tau:] += np.sum(dl ** 2, axis=0) * inv2 - (n - 1)

            total = ll + lp
            if not (np.isfinite(total) and np.all(np.isfinite(grad))):
                return self._fail()
        return total, grad
