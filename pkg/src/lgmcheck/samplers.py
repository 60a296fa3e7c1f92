"""Reproducible random generation: streams, inverse-Gaussian and NIG noise,
latent-field simulation, and the three predictive replication schemes."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .errors import (
    DimensionMismatch,
    ImproperPrior,
    MissingPosterior,
    SingularStructure,
)
from .inference import JointPosterior, _design
from .latent import KIND_BLOCKS, KIND_RW1, LatentStructure
from .model import GammaPrior, GaussianLGM, HyperParams


@dataclass(frozen=True)
class RngStream:
    """Counter-based stream: identical (seed, stream) gives identical draws
    on every platform; one stream per replicate keeps parallel runs
    order-independent."""

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, index: int) -> "RngStream":
        return RngStream(self.seed, index)


@dataclass(frozen=True)
class NigNoiseSpec:
    """h and eta for one noise vector; eta = 0 is exactly Gaussian."""

    h: np.ndarray
    eta: float

    def __post_init__(self):
        object.__setattr__(self, "h", np.asarray(self.h, dtype=float))
        if np.any(self.h <= 0):
            raise ValueError("h must be positive")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")


def sample_invgaussian(mu, lam, rng: np.random.Generator, size=None):
    """Inverse-Gaussian draws by the transformation-with-rejection method
    (chi-square root selection by a uniform)."""
    mu = np.asarray(mu, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if size is None:
        size = np.broadcast(mu, lam).shape or None
    nu = rng.standard_normal(size)
    y = nu * nu
    x = mu + mu * mu * y / (2.0 * lam) - (mu / (2.0 * lam)) * np.sqrt(
        4.0 * mu * lam * y + (mu * y) ** 2
    )
    x = np.maximum(x, np.finfo(float).tiny)
    u = rng.uniform(size=size)
    take_x = u <= mu / (mu + x)
    return np.where(take_x, x, mu * mu / x)


def sample_nig_noise(spec: NigNoiseSpec, rng: np.random.Generator, size=None):
    """Vector of independent noise: sqrt(V_i) z_i with inverse-Gaussian V.

    Shape is (n,) or (size, n); eta = 0 short-circuits to N(0, diag(h)).
    """
    n = spec.h.shape[0]
    shape = (n,) if size is None else (size, n)
    z = rng.standard_normal(shape)
    if spec.eta == 0.0:
        return np.sqrt(spec.h) * z
    v = sample_invgaussian(np.broadcast_to(spec.h, shape),
                           np.broadcast_to(spec.h**2 / spec.eta, shape), rng,
                           size=shape)
    return np.sqrt(v) * z


def simulate_latent(latent: LatentStructure, spec: NigNoiseSpec,
                    rng: np.random.Generator, size=None,
                    theta2=None) -> np.ndarray:
    """Draw w solving D w = noise.

    Intrinsic RW1 anchors w_1 = 0, cumulative-sums the scaled increments and
    centers to mean zero; other structures require a square invertible D.
    """
    if spec.h.shape[0] != latent.n_noise:
        raise DimensionMismatch("noise spec h does not match structure")
    lam = sample_nig_noise(spec, rng, size=size)
    single = lam.ndim == 1
    lam2 = lam[None, :] if single else lam
    w = _solve_structure(latent, lam2, theta2)
    return w[0] if single else w


def _solve_structure(latent: LatentStructure, lam: np.ndarray, theta2) -> np.ndarray:
    t = latent._theta(theta2)
    if latent.kind == KIND_RW1:
        steps = t["sigma_w"] * lam
        w = np.concatenate([np.zeros((lam.shape[0], 1)), np.cumsum(steps, axis=1)],
                           axis=1)
        return w - w.mean(axis=1, keepdims=True)
    if latent.kind == KIND_BLOCKS:
        parts = []
        offset = 0
        for i, blk in enumerate(latent.blocks):
            sub = lam[:, offset:offset + blk.n_noise]
            sub_theta = {nm: t[f"{nm}{i}"] for nm in blk.hyper_names}
            parts.append(_solve_structure(blk, sub, sub_theta))
            offset += blk.n_noise
        return np.concatenate(parts, axis=1)
    d = latent.d_matrix(theta2)
    dd = d.toarray() if sp.issparse(d) else np.asarray(d, dtype=float)
    if dd.shape[0] != dd.shape[1]:
        raise SingularStructure("non-square structure matrix cannot be inverted")
    try:
        return np.linalg.solve(dd, lam.T).T
    except np.linalg.LinAlgError:
        raise SingularStructure("structure matrix is singular") from None


class PredictiveScheme(Enum):
    PRIOR = "prior"
    MIXED = "mixed"
    POSTERIOR = "posterior"


def predictive_draw(m: GaussianLGM, hp: HyperParams, scheme: PredictiveScheme,
                    rng: np.random.Generator, post: JointPosterior | None = None,
                    size=None) -> np.ndarray:
    """Replicated data under the chosen predictive scheme.

    MIXED draws the latent field from its prior at fixed hyperparameters
    and keeps the linear effects at their posterior mean; POSTERIOR draws
    (beta, w) jointly from the fitted posterior; PRIOR draws the
    hyperparameters from their (proper) priors first.
    """
    single = size is None
    reps = 1 if single else size
    n = m.n_obs
    if scheme == PredictiveScheme.MIXED:
        beta = _fixed_beta(m, post)
        spec = NigNoiseSpec(h=m.latent.h, eta=0.0)
        w = simulate_latent(m.latent, spec, rng, size=reps, theta2=hp.theta2)
        mean = _apply_A(m, w) + (m.B @ beta)[None, :]
        y = mean + rng.standard_normal((reps, n)) / np.sqrt(hp.tau_eps)
    elif scheme == PredictiveScheme.POSTERIOR:
        if post is None:
            raise MissingPosterior("POSTERIOR scheme needs a fitted posterior")
        x = post.sample(rng, reps)
        M = _design(m)
        mean = x @ (M.toarray().T if sp.issparse(M) else M.T)
        y = mean + rng.standard_normal((reps, n)) / np.sqrt(hp.tau_eps)
    elif scheme == PredictiveScheme.PRIOR:
        y = np.empty((reps, n))
        for k in range(reps):
            hk = _draw_hypers(m, rng)
            beta = _draw_beta(m, rng)
            spec = NigNoiseSpec(h=m.latent.h, eta=0.0)
            w = simulate_latent(m.latent, spec, rng, theta2=hk.theta2)
            mean = _apply_A(m, w[None, :])[0] + m.B @ beta
            y[k] = mean + rng.standard_normal(n) / np.sqrt(hk.tau_eps)
    else:
        raise ValueError(f"unknown scheme {scheme}")
    return y[0] if single else y


def _apply_A(m: GaussianLGM, w: np.ndarray) -> np.ndarray:
    if sp.issparse(m.A):
        return (m.A @ w.T).T
    return w @ m.A.T


def _fixed_beta(m: GaussianLGM, post: JointPosterior | None) -> np.ndarray:
    if m.n_beta == 0:
        return np.zeros(0)
    if post is None:
        raise MissingPosterior("models with linear effects need a posterior "
                               "to fix beta at its mean")
    return post.mean_beta


def _draw_hypers(m: GaussianLGM, rng: np.random.Generator) -> HyperParams:
    vals = {}
    for name in m.free_hypers():
        prior = m.prior_for(name)
        if name.startswith("rho"):
            vals[name] = rng.uniform(-1.0, 1.0)
        elif isinstance(prior, GammaPrior):
            tau = rng.gamma(prior.shape, 1.0 / prior.rate)
            vals[name] = tau if name == "tau_eps" else 1.0 / np.sqrt(tau)
        else:
            raise ImproperPrior(f"PRIOR scheme needs a proper prior for {name}")
    tau_eps = vals.pop("tau_eps")
    return HyperParams(tau_eps, vals)


def _draw_beta(m: GaussianLGM, rng: np.random.Generator) -> np.ndarray:
    if m.n_beta == 0:
        return np.zeros(0)
    if m.beta_prior_is_flat:
        raise ImproperPrior("PRIOR scheme needs a proper prior on beta")
    cov = np.linalg.inv(m.beta_prior_precision)
    return rng.multivariate_normal(np.zeros(m.n_beta), cov)
