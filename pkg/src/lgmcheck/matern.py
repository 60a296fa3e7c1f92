"""Matern covariance with general smoothness and the finite-difference
smoothness check for marginalized Gaussian-process regression."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln, kv

from . import linalg
from .errors import NotPositiveDefinite
from .samplers import RngStream


@dataclass(frozen=True)
class MaternParams:
    sigma_w: float
    rho: float          # range
    nu: float           # smoothness

    def __post_init__(self):
        if min(self.sigma_w, self.rho, self.nu) <= 0:
            raise ValueError("all Matern parameters must be positive")


def matern_cov(distances, p: MaternParams) -> np.ndarray:
    """k(r) = sigma^2 2^{1-nu}/Gamma(nu) (sqrt(2 nu) r/rho)^nu K_nu(...).

    Closed forms for nu in {1/2, 3/2, 5/2}; the Bessel path otherwise;
    k(0) = sigma^2 for every nu.
    """
    r = np.asarray(distances, dtype=float)
    s = np.sqrt(2.0 * p.nu) * r / p.rho
    if p.nu == 0.5:
        out = np.exp(-s)
    elif p.nu == 1.5:
        out = (1.0 + s) * np.exp(-s)
    elif p.nu == 2.5:
        out = (1.0 + s + s * s / 3.0) * np.exp(-s)
    else:
        zero = s == 0
        safe = np.where(zero, 1.0, s)
        logc = (1.0 - p.nu) * np.log(2.0) - gammaln(p.nu)
        out = np.exp(logc + p.nu * np.log(safe)) * kv(p.nu, safe)
        out = np.where(zero, 1.0, out)
    return p.sigma_w**2 * out


def gp_log_marginal(y, distances, p: MaternParams, sigma_eps: float) -> float:
    """log N(y | 0, sigma_eps^2 I + Matern(distances))."""
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    cov = matern_cov(distances, p) + sigma_eps**2 * np.eye(n)
    f = linalg.cholesky(cov)
    alpha = f.solve(y)
    return float(-0.5 * (n * np.log(2.0 * np.pi) + f.logdet + y @ alpha))


def fit_gp_mode(y, distances, nu0: float,
                init=(None, None, None)) -> tuple[float, float, float]:
    """Mode of (sigma_eps, sigma_w, rho) at fixed smoothness, flat priors on
    the log scale, simplex search with one restart."""
    y = np.asarray(y, dtype=float)
    r = np.asarray(distances, dtype=float)
    sd = float(y.std(ddof=1)) or 1.0
    span = float(r.max()) or 1.0
    z0 = np.log([init[0] or 0.5 * sd, init[1] or sd, init[2] or span / 5.0])

    def nll(z):
        s_eps, s_w, rng_par = np.exp(z)
        try:
            val = gp_log_marginal(y, r, MaternParams(s_w, rng_par, nu0), s_eps)
        except NotPositiveDefinite:
            return 1e10
        return -val if np.isfinite(val) else 1e10

    best = None
    for _ in range(2):
        res = minimize(nll, z0, method="Nelder-Mead",
                       options=dict(xatol=1e-6, fatol=1e-9, maxiter=800))
        z0 = res.x
        if best is None or res.fun < best.fun:
            best = res
    s_eps, s_w, rng_par = np.exp(best.x)
    return float(s_eps), float(s_w), float(rng_par)


def gp_hyper_grid(y, distances, nu0: float, mode, points_per_dim: int = 5,
                  span_sd: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """Grid of (sigma_eps, sigma_w, rho) triplets with normalized weights,
    spaced by the numerical Hessian at the mode (fixed-step fallback)."""
    y = np.asarray(y, dtype=float)
    r = np.asarray(distances, dtype=float)

    def logpost(z):
        s_eps, s_w, rng_par = np.exp(z)
        try:
            return gp_log_marginal(y, r, MaternParams(s_w, rng_par, nu0), s_eps)
        except NotPositiveDefinite:
            return -1e10

    z0 = np.log(mode)
    step, k = 1e-3, 3
    H = np.zeros((k, k))
    f0 = logpost(z0)
    for i in range(k):
        for j in range(i, k):
            ei = np.zeros(k); ei[i] = step
            ej = np.zeros(k); ej[j] = step
            if i == j:
                H[i, i] = -(logpost(z0 + ei) - 2 * f0 + logpost(z0 - ei)) / step**2
            else:
                H[i, j] = H[j, i] = -(
                    logpost(z0 + ei + ej) - logpost(z0 + ei - ej)
                    - logpost(z0 - ei + ej) + logpost(z0 - ei - ej)
                ) / (4 * step**2)
    try:
        f = linalg.cholesky(H)
        sd = np.sqrt(np.clip(np.diag(f.solve(np.eye(k))), 1e-12, None))
    except NotPositiveDefinite:
        sd = np.full(k, 0.3)
    offs = np.linspace(-span_sd, span_sd, points_per_dim)
    pts, logw = [], []
    for combo in itertools.product(range(points_per_dim), repeat=k):
        z = z0 + sd * offs[list(combo)]
        pts.append(np.exp(z))
        logw.append(logpost(z))
    logw = np.array(logw)
    w = np.exp(logw - logw.max())
    return np.array(pts), w / w.sum()


def matern_smoothness_check(y, distances, nu0: float, eps: float = 1e-3, *,
                            hyper_source: str = "grid", external_draws=None,
                            n_rep: int = 2000, rng=None, points_per_dim: int = 5,
                            central: bool = True,
                            mode=None) -> tuple[float, np.ndarray]:
    """Smoothness misfit probability and the scatter behind it.

    The discrepancy is the finite difference of the marginal log likelihood
    in the smoothness index at ``nu0`` (central by default; forward mode
    reproduces the one-sided boundary convention).  For each hyperparameter
    draw, one replicate is generated from the fitted model and the pair
    (d(y_obs), d(y_rep)) recorded; returns the fraction of replicates whose
    discrepancy exceeds the observed one, and the scatter array with columns
    (d_obs, d_rep, weight).
    """
    if rng is None:
        rng = RngStream(0, 0).generator()
    y = np.asarray(y, dtype=float)
    r = np.asarray(distances, dtype=float)
    n = y.shape[0]
    if nu0 - eps <= 0:
        raise ValueError("eps must keep nu0 - eps positive")

    if external_draws is not None:
        draws = np.asarray(external_draws, dtype=float)
        gammas = draws[rng.integers(0, draws.shape[0], size=n_rep)]
    elif hyper_source == "mode":
        mode = mode or fit_gp_mode(y, r, nu0)
        gammas = np.tile(np.asarray(mode, dtype=float), (n_rep, 1))
    elif hyper_source == "grid":
        mode = mode or fit_gp_mode(y, r, nu0)
        pts, w = gp_hyper_grid(y, r, nu0, mode, points_per_dim)
        gammas = pts[rng.choice(pts.shape[0], size=n_rep, p=w)]
    else:
        raise ValueError(f"unknown hyper_source {hyper_source!r}")

    cache: dict[tuple, tuple] = {}
    scatter = np.empty((n_rep, 3))
    log2pi_n = n * np.log(2.0 * np.pi)

    def loglik(f, vec):
        return -0.5 * (log2pi_n + f.logdet + vec @ f.solve(vec))

    for k in range(n_rep):
        s_eps, s_w, rng_par = gammas[k]
        key = (s_eps, s_w, rng_par)
        if key not in cache:
            noise = s_eps**2 * np.eye(n)
            f0 = linalg.cholesky(matern_cov(r, MaternParams(s_w, rng_par, nu0)) + noise)
            f_hi = linalg.cholesky(matern_cov(r, MaternParams(s_w, rng_par, nu0 + eps)) + noise)
            if central:
                f_lo = linalg.cholesky(matern_cov(r, MaternParams(s_w, rng_par, nu0 - eps)) + noise)
                denom = 2.0 * eps
            else:
                f_lo, denom = f0, eps
            cache[key] = (f_lo, f_hi, denom, f0.lower())
        f_lo, f_hi, denom, L0 = cache[key]
        d_obs = (loglik(f_hi, y) - loglik(f_lo, y)) / denom
        y_rep = L0 @ rng.standard_normal(n)
        d_rep = (loglik(f_hi, y_rep) - loglik(f_lo, y_rep)) / denom
        scatter[k] = (d_obs, d_rep, 1.0 / n_rep)
    p = float(np.sum((scatter[:, 1] > scatter[:, 0]) * scatter[:, 2]))
    return p, scatter
