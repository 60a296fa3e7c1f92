"""Exact Gaussian inference given hyperparameters, and empirical Bayes.

The joint vector is x = (beta, w).  Its conditional posterior given the
hyperparameters is Gaussian with precision

    Q = blockdiag(Q_beta, D' diag(h)^-1 D) + tau_eps * [B A]'[B A]

and mean tau_eps * Q^-1 [B A]' y.  The marginal likelihood of y uses the
precision-form identity, never an N x N dense inverse; flat priors on beta
integrate out with the usual (N - p) normalizing dimension.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize

from . import linalg
from .errors import NoConvergence, NotPositiveDefinite
from .model import GammaPrior, GaussianLGM, HyperParams

LOG2PI = float(np.log(2.0 * np.pi))


def _design(m: GaussianLGM):
    """Stacked design [B A] kept sparse when A is sparse and B is empty."""
    if m.n_beta == 0:
        return m.A
    A = m.A.toarray() if sp.issparse(m.A) else m.A
    return np.hstack([m.B, A])


def _joint_precision(m: GaussianLGM, hp: HyperParams):
    pw = m.latent.prior_precision(hp.theta2)
    if m.n_beta == 0:
        if sp.issparse(m.A) and sp.issparse(pw):
            ata = (m.A.T @ m.A).tocsc()
            return (hp.tau_eps * ata + pw).tocsc()
        A = m.A.toarray() if sp.issparse(m.A) else m.A
        pw = pw.toarray() if sp.issparse(pw) else pw
        return hp.tau_eps * (A.T @ A) + pw
    M = _design(m)
    pw = pw.toarray() if sp.issparse(pw) else pw
    p = m.n_beta
    prior = np.zeros((p + m.n_w, p + m.n_w))
    prior[:p, :p] = m.beta_prior_precision
    prior[p:, p:] = pw
    return prior + hp.tau_eps * (M.T @ M)


@dataclass(frozen=True)
class JointPosterior:
    """Exact conditional posterior of (beta, w) at fixed hyperparameters."""

    mean_beta: np.ndarray
    mean_w: np.ndarray
    factor: linalg.CholFactor
    hyper: HyperParams
    ridge_used: float
    model: GaussianLGM

    @property
    def mean_x(self) -> np.ndarray:
        return np.concatenate([self.mean_beta, self.mean_w])

    def cov_block(self, left, right) -> np.ndarray:
        """left @ Cov(x) @ right.T for selectors over x = (beta, w)."""
        return linalg.posterior_cov_block(self.factor, left, right)

    def w_cov_times(self, rhs: np.ndarray) -> np.ndarray:
        """Cov(w, x) applied to an x-space right-hand side restricted to w."""
        p = self.model.n_beta
        sol = self.factor.solve(rhs)
        return sol[p:] if sol.ndim == 1 else sol[p:, :]

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draws of x = (beta, w); shape (size, p + n_w)."""
        d = self.model.n_beta + self.model.n_w
        z = rng.standard_normal((d, size))
        u = self.factor.half_solve_t(z)
        return (self.mean_x[:, None] + u).T

    def sample_w(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.sample(rng, size)[:, self.model.n_beta:]


def conditional_posterior(m: GaussianLGM, hp: HyperParams) -> JointPosterior:
    """Factor the joint precision and solve for the posterior mean."""
    Q = _joint_precision(m, hp)
    try:
        factor = linalg.cholesky(Q)
        ridge = 0.0
    except NotPositiveDefinite:
        factor = linalg.ridged_cholesky(Q)
        ridge = factor.ridge
    M = _design(m)
    info = hp.tau_eps * (M.T @ m.y)
    if sp.issparse(info):
        info = np.asarray(info).ravel()
    mean = factor.solve(info)
    p = m.n_beta
    return JointPosterior(
        mean_beta=np.asarray(mean[:p]), mean_w=np.asarray(mean[p:]),
        factor=factor, hyper=hp, ridge_used=ridge, model=m,
    )


def log_marginal(m: GaussianLGM, hp: HyperParams) -> float:
    """Log density of y with (beta, w) integrated out at fixed hyperparameters.

    Flat beta priors use the standard improper-prior convention: the
    result is the integral over beta of the proper w-marginal, normalized
    with dimension N - p.
    """
    n, p = m.n_obs, m.n_beta
    tau = hp.tau_eps
    ld_prior_w, _ = m.latent.prior_logdet(hp.theta2)
    if m.beta_prior_is_flat:
        ld_prior = ld_prior_w
        dim = n - p
    else:
        fb = linalg.cholesky(m.beta_prior_precision)
        ld_prior = ld_prior_w + fb.logdet
        dim = n
    post = conditional_posterior(m, hp)
    mean = post.mean_x
    quad = float(mean @ (hp.tau_eps * (_design_t_y(m))))
    # m' Q m = m' (tau M' y) because Q m = tau M' y
    return (-0.5 * dim * LOG2PI + 0.5 * n * np.log(tau) + 0.5 * ld_prior
            - 0.5 * post.factor.logdet + 0.5 * quad - 0.5 * tau * float(m.y @ m.y))


def _design_t_y(m: GaussianLGM) -> np.ndarray:
    M = _design(m)
    v = M.T @ m.y
    return np.asarray(v).ravel()


# ---------------------------------------------------------------------------
# transformed hyperparameter space: log for precisions/scales, logit for rho
# ---------------------------------------------------------------------------

def _to_z(name: str, value: float) -> float:
    if name.startswith("rho"):
        return float(np.log((1.0 + value) / (1.0 - value)))
    return float(np.log(value))


def _from_z(name: str, z: float) -> float:
    if name.startswith("rho"):
        return float(np.tanh(0.5 * z))
    return float(np.exp(z))


def pack(hp: HyperParams, names) -> np.ndarray:
    vals = hp.as_dict()
    return np.array([_to_z(nm, vals[nm]) for nm in names])


def unpack(z, names, base: HyperParams) -> HyperParams:
    updates = {nm: _from_z(nm, zi) for nm, zi in zip(names, z)}
    tau = updates.pop("tau_eps", base.tau_eps)
    theta2 = dict(base.theta2)
    theta2.update(updates)
    return HyperParams(tau, theta2)


def _log_prior_z(m: GaussianLGM, names, z) -> float:
    """Prior density in transformed coordinates, including Jacobians.

    Gamma priors attach to the precision behind the named parameter
    (tau_eps directly; 1/sigma^2 for scale parameters).  Flat priors are
    uniform on the transformed scale and contribute zero.
    """
    total = 0.0
    for nm, zi in zip(names, z):
        prior = m.prior_for(nm)
        if isinstance(prior, GammaPrior):
            if nm == "tau_eps":
                tau = np.exp(zi)
                total += prior.logpdf(tau) + zi          # d tau / dz = tau
            elif nm.startswith("rho"):
                raise ValueError("Gamma prior not meaningful for rho")
            else:
                tau = np.exp(-2.0 * zi)                  # precision of the scale
                total += prior.logpdf(tau) + np.log(2.0) - 2.0 * zi
    return total


def posterior_objective(m: GaussianLGM, names, base: HyperParams | None = None):
    """Negative log posterior of the transformed hyperparameters."""
    base = base or m.default_hypers()

    def fun(z):
        hp = unpack(z, names, base)
        try:
            val = log_marginal(m, hp) + _log_prior_z(m, names, z)
        except NotPositiveDefinite:
            return 1e10
        if not np.isfinite(val):
            return 1e10
        return -val

    return fun


def empirical_bayes(m: GaussianLGM, init: HyperParams | None = None, *,
                    free=None, restarts: int = 2, xatol: float = 1e-6,
                    maxiter: int = 400) -> HyperParams:
    """Posterior mode of the hyperparameters by simplex search.

    Derivative-free Nelder-Mead on the transformed parameters with
    ``restarts`` re-initializations from the incumbent; converged when the
    simplex diameter drops below ``xatol``.
    """
    init = init or m.default_hypers()
    names = tuple(free) if free is not None else m.free_hypers()
    if not names:
        return init
    fun = posterior_objective(m, names, init)
    z = pack(init, names)
    best_z, best_f, converged = z, fun(z), False
    for attempt in range(restarts + 1):
        res = minimize(fun, best_z, method="Nelder-Mead",
                       options=dict(xatol=xatol, fatol=1e-9, maxiter=maxiter,
                                    initial_simplex=_simplex(best_z, 0.25 if attempt == 0 else 0.05)))
        if res.fun <= best_f:
            best_z, best_f = res.x, res.fun
        if res.success:
            converged = True
            if attempt >= 1 or restarts == 0:
                break
    if not converged:
        raise NoConvergence("empirical Bayes simplex search did not converge")
    return unpack(best_z, names, init)


def _simplex(z: np.ndarray, step: float) -> np.ndarray:
    k = z.size
    simp = np.tile(z, (k + 1, 1))
    for i in range(k):
        simp[i + 1, i] += step
    return simp


@dataclass(frozen=True)
class HyperGrid:
    """Grid of hyperparameter points with normalized integration weights."""

    points: tuple[HyperParams, ...]
    weights: np.ndarray
    hessian_fallback: bool = False

    def __post_init__(self):
        if len(self.points) == 0:
            raise ValueError("grid needs at least one point")


def hyper_grid(m: GaussianLGM, mode: HyperParams, points_per_dim: int = 5,
               span_sd: float = 2.0, *, free=None) -> HyperGrid:
    """Regular grid around the mode in transformed space, weighted by the
    posterior; spacing from the numerical Hessian with a fixed-step fallback.
    """
    if points_per_dim < 1 or points_per_dim % 2 == 0:
        raise ValueError("points_per_dim must be odd and >= 1")
    names = tuple(free) if free is not None else m.free_hypers()
    if points_per_dim == 1 or not names:
        return HyperGrid(points=(mode,), weights=np.array([1.0]))
    fun = posterior_objective(m, names, mode)
    z0 = pack(mode, names)
    k = z0.size
    hess = _num_hessian(fun, z0)
    fallback = False
    try:
        f = linalg.cholesky(hess)
        cov = f.solve(np.eye(k))
        sd = np.sqrt(np.clip(np.diag(cov), 1e-12, None))
    except NotPositiveDefinite:
        sd = np.full(k, 0.3)
        fallback = True
    offsets = np.linspace(-span_sd, span_sd, points_per_dim)
    pts, logw = [], []
    for combo in itertools.product(range(points_per_dim), repeat=k):
        z = z0 + sd * offsets[list(combo)]
        pts.append(unpack(z, names, mode))
        logw.append(-fun(z))
    logw = np.array(logw)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    return HyperGrid(points=tuple(pts), weights=w, hessian_fallback=fallback)


def _num_hessian(fun, z0: np.ndarray, step: float = 1e-3) -> np.ndarray:
    k = z0.size
    H = np.zeros((k, k))
    f0 = fun(z0)
    for i in range(k):
        for j in range(i, k):
            ei = np.zeros(k); ei[i] = step
            ej = np.zeros(k); ej[j] = step
            if i == j:
                H[i, i] = (fun(z0 + ei) - 2 * f0 + fun(z0 - ei)) / step**2
            else:
                H[i, j] = H[j, i] = (
                    fun(z0 + ei + ej) - fun(z0 + ei - ej)
                    - fun(z0 - ei + ej) + fun(z0 - ei - ej)
                ) / (4 * step**2)
    return H
