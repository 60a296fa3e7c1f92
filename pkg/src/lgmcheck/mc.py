"""Monte-Carlo estimators of the diagnostics from posterior draws.

These are the production path for models without closed forms and the
independent oracle validating every analytic formula in
:mod:`lgmcheck.perturbation`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import NonFiniteLoglik, TooFewDraws
from .latent import LatentStructure
from .perturbation import local_pert_g, local_pert_p

N_BATCHES = 50


@dataclass(frozen=True)
class McEstimate:
    value: float
    std_error: float
    n_draws: int

    def within(self, other: float, n_se: float = 3.0) -> bool:
        return abs(self.value - other) <= n_se * self.std_error


def _residual_draws(w_draws: np.ndarray, latent: LatentStructure, theta2) -> np.ndarray:
    d = latent.d_matrix(theta2)
    if sp.issparse(d):
        return (d @ w_draws.T).T
    return w_draws @ d.T


def mc_s0(w_draws: np.ndarray, latent: LatentStructure, theta2=None) -> McEstimate:
    """Posterior-mean estimate of the summed local perturbation."""
    w_draws = np.atleast_2d(np.asarray(w_draws, dtype=float))
    n = w_draws.shape[0]
    if n < 2:
        raise TooFewDraws("mc_s0 needs at least 2 draws")
    r = _residual_draws(w_draws, latent, theta2)
    p = local_pert_p(r, latent.h).sum(axis=1)
    return McEstimate(float(p.mean()), float(p.std(ddof=1) / np.sqrt(n)), n)


def mc_i0(w_draws: np.ndarray, latent: LatentStructure, theta2=None) -> McEstimate:
    """Estimate of -E[sum g_i] - V[sum p_i]; SE by 50-batch means because
    the variance-of-variance term makes the naive SE misleading."""
    w_draws = np.atleast_2d(np.asarray(w_draws, dtype=float))
    n = w_draws.shape[0]
    if n < 10:
        raise TooFewDraws("mc_i0 needs at least 10 draws")
    r = _residual_draws(w_draws, latent, theta2)
    psum = local_pert_p(r, latent.h).sum(axis=1)
    gsum = local_pert_g(r, latent.h).sum(axis=1)
    value = float(-gsum.mean() - psum.var(ddof=1))
    nb = min(N_BATCHES, n // 2)
    est = [
        float(-gb.mean() - pb.var(ddof=1))
        for gb, pb in zip(np.array_split(gsum, nb), np.array_split(psum, nb))
    ]
    se = float(np.std(est, ddof=1) / np.sqrt(nb)) if nb > 1 else np.inf
    return McEstimate(value, se, n)


def mc_sensitivity(target_draws: np.ndarray, w_draws: np.ndarray,
                   latent: LatentStructure, theta2=None) -> McEstimate:
    """Sample covariance between a scalar target and the summed perturbation."""
    target_draws = np.asarray(target_draws, dtype=float).ravel()
    w_draws = np.atleast_2d(np.asarray(w_draws, dtype=float))
    n = w_draws.shape[0]
    if n < 2 or target_draws.shape[0] != n:
        raise TooFewDraws("mc_sensitivity needs paired draws (>= 2)")
    r = _residual_draws(w_draws, latent, theta2)
    psum = local_pert_p(r, latent.h).sum(axis=1)
    value = float(np.cov(target_draws, psum, ddof=1)[0, 1])
    nb = min(N_BATCHES, n // 2)
    est = [
        float(np.cov(tb, pb, ddof=1)[0, 1])
        for tb, pb in zip(np.array_split(target_draws, nb), np.array_split(psum, nb))
    ]
    se = float(np.std(est, ddof=1) / np.sqrt(nb)) if nb > 1 else np.inf
    return McEstimate(value, se, n)


def fd_perturbation(loglik, at, direction: str, eps: float | None = None) -> float:
    """Forward finite difference of a log-likelihood in one named parameter.

    ``at`` is a mapping of parameter name to value; forward differencing
    matches the one-sided limits taken at boundary parameters.
    """
    at = dict(at)
    base = float(at[direction])
    if eps is None:
        eps = 1e-5 * max(1.0, abs(base))
    f0 = loglik(at)
    shifted = dict(at)
    shifted[direction] = base + eps
    f1 = loglik(shifted)
    if not (np.isfinite(f0) and np.isfinite(f1)):
        raise NonFiniteLoglik("log-likelihood not finite at evaluation points")
    return (f1 - f0) / eps


def fd_perturbation_central(loglik, at, direction: str, eps: float | None = None) -> float:
    """Central variant for interior parameters (e.g. a smoothness index)."""
    at = dict(at)
    base = float(at[direction])
    if eps is None:
        eps = 1e-5 * max(1.0, abs(base))
    lo, hi = dict(at), dict(at)
    lo[direction] = base - eps
    hi[direction] = base + eps
    f_lo, f_hi = loglik(lo), loglik(hi)
    if not (np.isfinite(f_lo) and np.isfinite(f_hi)):
        raise NonFiniteLoglik("log-likelihood not finite at evaluation points")
    return (f_hi - f_lo) / (2.0 * eps)
