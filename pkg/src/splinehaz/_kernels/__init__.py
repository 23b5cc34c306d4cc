"""Posterior kernel backends.

The compiled Cython core is used when its extension module imported
successfully; otherwise the pure-numpy reference implementation takes over.
Set SPLINEHAZ_BACKEND=numpy or =compiled to force a choice (forcing
``compiled`` raises if the extension is missing).
"""

from __future__ import annotations

import os

from .reference import ReferencePosterior, layout

try:
    from ._core import CompiledPosterior

    HAVE_COMPILED = True
except ImportError:
    CompiledPosterior = None
    HAVE_COMPILED = False

DEFAULT_BACKEND = "compiled" if HAVE_COMPILED else "numpy"

__all__ = ["make_posterior", "layout", "ReferencePosterior", "CompiledPosterior",
           "HAVE_COMPILED", "DEFAULT_BACKEND"]


def make_posterior(*, b, ib, event, x, mu, w, mode, exchangeable,
                   eta_sd, beta_sd, sigma_shape, sigma_rate, tau_shape, tau_rate,
                   backend=None):
    """Construct the posterior kernel for one prepared dataset."""
    choice = backend or os.environ.get("SPLINEHAZ_BACKEND") or DEFAULT_BACKEND
    if choice == "compiled" and not HAVE_COMPILED:
        if backend or os.environ.get("SPLINEHAZ_BACKEND"):
            raise RuntimeError("compiled kernel requested but the extension is not built")
        choice = "numpy"
    if choice not in ("compiled", "numpy"):
        raise ValueError(f"unknown kernel backend {choice!r}")
    cls = CompiledPosterior if choice == "compiled" else ReferencePosterior
    return cls(b, ib, event, x, mu, w, mode, exchangeable,
               eta_sd, beta_sd, sigma_shape, sigma_rate, tau_shape, tau_rate)
