"""No-U-Turn sampler with dual-averaging step size and windowed mass adaptation.

The sampler is generic: it takes any callable returning (log density,
gradient) for a flat parameter vector, so it is reusable beyond the survival
posterior.  The implementation follows the slice-variable recursive scheme
with a diagonal mass matrix, velocity-based U-turn criterion, dual averaging
toward a target acceptance statistic, and an expanding-window schedule for
the mass estimate with a regularized variance update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DELTA_MAX = 1000.0


@dataclass
class NutsChain:
    """One chain's kept draws plus per-iteration and adaptation summaries."""

    draws: np.ndarray
    divergent: np.ndarray
    accept_stat: np.ndarray
    tree_depth: np.ndarray
    step_size: float
    inv_mass: np.ndarray
    n_leapfrog: int


class _DualAveraging:
    """Nesterov dual averaging of log step size (gamma/t0/kappa as published)."""

    def __init__(self, eps0, target):
        self.mu = np.log(10.0 * eps0)
        self.target = target
        self.log_eps = np.log(eps0)
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.count = 0
        self.gamma = 0.05
        self.t0 = 10.0
        self.kappa = 0.75

    def update(self, alpha):
        self.count += 1
        frac = 1.0 / (self.count + self.t0)
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - alpha)
        self.log_eps = self.mu - np.sqrt(self.count) / self.gamma * self.h_bar
        wt = self.count ** -self.kappa
        self.log_eps_bar = wt * self.log_eps + (1.0 - wt) * self.log_eps_bar

    def restart(self, eps0):
        self.__init__(eps0, self.target)

    @property
    def eps(self):
        return float(np.exp(self.log_eps))

    @property
    def eps_final(self):
        return float(np.exp(self.log_eps_bar))


def _leapfrog(f, q, r, grad, eps, inv_mass):
    r1 = r + 0.5 * eps * grad
    q1 = q + eps * inv_mass * r1
    logp1, grad1 = f(q1)
    r2 = r1 + 0.5 * eps * grad1
    return q1, r2, logp1, grad1


def _kinetic(r, inv_mass):
    return 0.5 * float(r @ (inv_mass * r))


def find_initial_step(f, q, logp, grad, inv_mass, rng):
    """Crude bisection-free search for a step size with ~50% one-step acceptance."""
    eps = 1.0
    r = rng.standard_normal(q.shape) / np.sqrt(inv_mass)
    joint0 = logp - _kinetic(r, inv_mass)
    _, r1, logp1, _ = _leapfrog(f, q, r, grad, eps, inv_mass)
    ratio = (logp1 - _kinetic(r1, inv_mass)) - joint0
    while not np.isfinite(ratio):
        eps *= 0.5
        if eps < 1e-10:
            raise RuntimeError("could not find a finite starting step size")
        _, r1, logp1, _ = _leapfrog(f, q, r, grad, eps, inv_mass)
        ratio = (logp1 - _kinetic(r1, inv_mass)) - joint0
    direction = 1.0 if ratio > np.log(0.5) else -1.0
    for _ in range(100):
        if direction * ratio <= -direction * np.log(2.0):
            break
        eps *= 2.0 ** direction
        if not 1e-10 < eps < 1e7:
            break
        _, r1, logp1, _ = _leapfrog(f, q, r, grad, eps, inv_mass)
        ratio = (logp1 - _kinetic(r1, inv_mass)) - joint0
        if not np.isfinite(ratio):
            ratio = -np.inf
    return eps


class _Tree:
    """Recursive doubling of one trajectory; collects proposal and statistics."""

    __slots__ = ("f", "eps", "inv_mass", "log_u", "joint0", "rng",
                 "n_leapfrog", "divergent")

    def __init__(self, f, eps, inv_mass, log_u, joint0, rng):
        self.f = f
        self.eps = eps
        self.inv_mass = inv_mass
        self.log_u = log_u
        self.joint0 = joint0
        self.rng = rng
        self.n_leapfrog = 0
        self.divergent = False

    def build(self, q, r, grad, direction, depth):
        """Returns (q-, r-, grad-, q+, r+, grad+, q_prop, logp_prop, grad_prop,
        n_valid, keep_going, alpha_sum, n_alpha)."""
        if depth == 0:
            q1, r1, logp1, grad1 = _leapfrog(self.f, q, r, grad,
                                             direction * self.eps, self.inv_mass)
            self.n_leapfrog += 1
            joint = logp1 - _kinetic(r1, self.inv_mass) if np.isfinite(logp1) else -np.inf
            n_valid = 1 if self.log_u <= joint else 0
            keep = self.log_u < joint + DELTA_MAX
            if not keep:
                self.divergent = True
            alpha = min(1.0, float(np.exp(min(joint - self.joint0, 0.0)))) \
                if np.isfinite(joint) else 0.0
            return (q1, r1, grad1, q1, r1, grad1, q1, logp1, grad1,
                    n_valid, keep, alpha, 1)

        (qm, rm, gm, qp, rp, gp, qprop, lprop, gprop,
         n1, keep1, a1, na1) = self.build(q, r, grad, direction, depth - 1)
        if not keep1:
            return (qm, rm, gm, qp, rp, gp, qprop, lprop, gprop,
                    n1, False, a1, na1)
        if direction == -1:
            (qm, rm, gm, _, _, _, qprop2, lprop2, gprop2,
             n2, keep2, a2, na2) = self.build(qm, rm, gm, direction, depth - 1)
        else:
            (_, _, _, qp, rp, gp, qprop2, lprop2, gprop2,
             n2, keep2, a2, na2) = self.build(qp, rp, gp, direction, depth - 1)
        if n2 > 0 and self.rng.random() < n2 / max(n1 + n2, 1):
            qprop, lprop, gprop = qprop2, lprop2, gprop2
        keep = keep2 and self._no_u_turn(qm, rm, qp, rp)
        return (qm, rm, gm, qp, rp, gp, qprop, lprop, gprop,
                n1 + n2, keep, a1 + a2, na1 + na2)

    def _no_u_turn(self, qm, rm, qp, rp):
        dq = qp - qm
        return (float(dq @ (self.inv_mass * rm)) >= 0.0
                and float(dq @ (self.inv_mass * rp)) >= 0.0)


def _nuts_iteration(f, q, logp, grad, eps, inv_mass, rng, max_depth):
    r0 = rng.standard_normal(q.shape) / np.sqrt(inv_mass)
    joint0 = logp - _kinetic(r0, inv_mass)
    log_u = joint0 - rng.exponential()
    tree = _Tree(f, eps, inv_mass, log_u, joint0, rng)

    qm = qp = q
    rm = rp = r0
    gm = gp = grad
    q_new, logp_new, grad_new = q, logp, grad
    n_total = 1
    alpha_sum, n_alpha = 0.0, 0
    depth = 0
    while depth < max_depth:
        direction = -1 if rng.random() < 0.5 else 1
        if direction == -1:
            (qm, rm, gm, _, _, _, qprop, lprop, gprop,
             n2, keep, a2, na2) = tree.build(qm, rm, gm, direction, depth)
        else:
            (_, _, _, qp, rp, gp, qprop, lprop, gprop,
             n2, keep, a2, na2) = tree.build(qp, rp, gp, direction, depth)
        alpha_sum += a2
        n_alpha += na2
        if keep and n2 > 0 and rng.random() < min(1.0, n2 / n_total):
            q_new, logp_new, grad_new = qprop, lprop, gprop
        n_total += n2
        depth += 1
        if not keep:
            break
        dq = qp - qm
        if not (float(dq @ (inv_mass * rm)) >= 0.0
                and float(dq @ (inv_mass * rp)) >= 0.0):
            break
    accept = alpha_sum / max(n_alpha, 1)
    return q_new, logp_new, grad_new, accept, tree.divergent, depth, tree.n_leapfrog


def _adaptation_windows(n_warmup):
    """(step-only init length, list of mass-window end indices, term start)."""
    if n_warmup < 20:
        return n_warmup, [], n_warmup
    if n_warmup < 150:
        init = int(round(0.15 * n_warmup))
        term = int(round(0.10 * n_warmup))
        base = n_warmup - init - term
    else:
        init, term, base = 75, 50, 25
    ends = []
    start, size = init, base
    while start + size <= n_warmup - term:
        if start + 3 * size > n_warmup - term:
            size = n_warmup - term - start
        ends.append(start + size)
        start += size
        size *= 2
    return init, ends, n_warmup - term


def nuts_chain(logpdf_and_grad, init, n_draws, n_warmup, rng, *,
               max_depth=10, target_accept=0.8):
    """Run one adaptive chain; returns kept draws and sampler statistics."""
    q = np.array(init, dtype=float)
    dim = q.shape[0]
    logp, grad = logpdf_and_grad(q)
    if not np.isfinite(logp):
        raise ValueError("chain initialization has non-finite log density")

    inv_mass = np.ones(dim)
    eps = find_initial_step(logpdf_and_grad, q, logp, grad, inv_mass, rng)
    da = _DualAveraging(eps, target_accept)
    init_len, window_ends, term_start = _adaptation_windows(n_warmup)
    window_ends = set(window_ends)

    welford_n = 0
    welford_mean = np.zeros(dim)
    welford_m2 = np.zeros(dim)
    n_leapfrog = 0

    for it in range(n_warmup):
        q, logp, grad, accept, _, _, nlf = _nuts_iteration(
            logpdf_and_grad, q, logp, grad, da.eps, inv_mass, rng, max_depth)
        n_leapfrog += nlf
        da.update(accept)
        if init_len <= it < term_start:
            welford_n += 1
            delta = q - welford_mean
            welford_mean += delta / welford_n
            welford_m2 += delta * (q - welford_mean)
            if it + 1 in window_ends:
                var = welford_m2 / max(welford_n - 1, 1)
                shrink = welford_n / (welford_n + 5.0)
                inv_mass = shrink * var + 1e-3 * (1.0 - shrink)
                welford_n = 0
                welford_mean[:] = 0.0
                welford_m2[:] = 0.0
                da.restart(da.eps)
    eps = da.eps_final if n_warmup > 0 else eps

    draws = np.empty((n_draws, dim))
    divergent = np.zeros(n_draws, dtype=bool)
    accept_stat = np.empty(n_draws)
    tree_depth = np.empty(n_draws, dtype=np.int64)
    for it in range(n_draws):
        q, logp, grad, accept, div, depth, nlf = _nuts_iteration(
            logpdf_and_grad, q, logp, grad, eps, inv_mass, rng, max_depth)
        n_leapfrog += nlf
        draws[it] = q
        divergent[it] = div
        accept_stat[it] = accept
        tree_depth[it] = depth

    return NutsChain(draws=draws, divergent=divergent, accept_stat=accept_stat,
                     tree_depth=tree_depth, step_size=eps, inv_mass=inv_mass,
                     n_leapfrog=n_leapfrog)
