"""Gaussian-response model assembly and hyperparameter containers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, InvalidDimension
from .latent import LatentStructure


@dataclass(frozen=True)
class HyperParams:
    """Response precision tau_eps plus named structure hyperparameters."""

    tau_eps: float
    theta2: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.tau_eps > 0:
            raise InvalidDimension(f"tau_eps must be positive, got {self.tau_eps}")

    def replace(self, **updates) -> "HyperParams":
        theta2 = dict(self.theta2)
        tau = updates.pop("tau_eps", self.tau_eps)
        theta2.update(updates)
        return HyperParams(tau, theta2)

    def as_dict(self) -> dict[str, float]:
        return {"tau_eps": self.tau_eps, **self.theta2}


@dataclass(frozen=True)
class GammaPrior:
    """Gamma(shape, rate) prior on a precision parameter."""

    shape: float
    rate: float

    def logpdf(self, tau: float) -> float:
        from scipy.special import gammaln

        return (self.shape * np.log(self.rate) - gammaln(self.shape)
                + (self.shape - 1.0) * np.log(tau) - self.rate * tau)


@dataclass(frozen=True)
class FlatPrior:
    """Improper uniform prior on the transformed scale (the default)."""

    def logpdf(self, _value: float) -> float:
        return 0.0


Prior = GammaPrior | FlatPrior


@dataclass(frozen=True)
class GaussianLGM:
    """y = B beta + A w + eps with Gaussian noise and one latent component.

    ``beta_prior_precision`` equal to the zero matrix means a flat prior on
    the linear effects (the default and the assumption behind the analytic
    reference distribution when B is non-empty).
    """

    y: np.ndarray
    B: np.ndarray
    A: object                       # dense array or scipy sparse, N x n_w
    beta_prior_precision: np.ndarray
    latent: LatentStructure
    hyper_priors: dict[str, Prior] = field(default_factory=dict)

    @property
    def n_obs(self) -> int:
        return self.y.shape[0]

    @property
    def n_beta(self) -> int:
        return self.B.shape[1]

    @property
    def n_w(self) -> int:
        return self.latent.n_w

    @property
    def beta_prior_is_flat(self) -> bool:
        return self.n_beta == 0 or not np.any(self.beta_prior_precision)

    def free_hypers(self) -> tuple[str, ...]:
        return ("tau_eps",) + self.latent.hyper_names

    def prior_for(self, name: str) -> Prior:
        return self.hyper_priors.get(name, FlatPrior())

    def default_hypers(self) -> HyperParams:
        """tau_eps = 1 and the structure's build-time hyperparameters."""
        return HyperParams(1.0, dict(self.latent.params))


def assemble_lgm(y, B, A, latent: LatentStructure,
                 beta_prior_precision=None,
                 hyper_priors: Mapping[str, Prior] | None = None) -> GaussianLGM:
    """Validate dimensions and build a model object.

    ``B`` may be None or an (N, 0) array for models without linear effects;
    ``A`` may be the string ``"identity"`` as a convenience.
    """
    y = np.asarray(y, dtype=float).ravel()
    n = y.shape[0]
    if B is None:
        B = np.zeros((n, 0))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    if isinstance(A, str) and A == "identity":
        A = sp.identity(latent.n_w, format="csr")
    if not sp.issparse(A):
        A = np.asarray(A, dtype=float)
    if B.shape[0] != n:
        raise DimensionMismatch(f"B has {B.shape[0]} rows, y has {n}")
    if A.shape[0] != n:
        raise DimensionMismatch(f"A has {A.shape[0]} rows, y has {n}")
    if A.shape[1] != latent.n_w:
        raise DimensionMismatch(
            f"A has {A.shape[1]} columns, latent structure has {latent.n_w}"
        )
    p = B.shape[1]
    if beta_prior_precision is None:
        qb = np.zeros((p, p))
    else:
        qb = np.asarray(beta_prior_precision, dtype=float)
        if qb.shape != (p, p):
            raise DimensionMismatch("beta_prior_precision must be p x p")
        eig = np.linalg.eigvalsh(qb) if p else np.array([])
        if p and eig.min() < -1e-10 * max(1.0, abs(eig).max()):
            raise DimensionMismatch("beta_prior_precision must be PSD")
    return GaussianLGM(
        y=y, B=B, A=A, beta_prior_precision=qb, latent=latent,
        hyper_priors=dict(hyper_priors or {}),
    )
