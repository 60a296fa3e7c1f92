"""Batch simulation harness: detection trends over (N, eta, sigma_w) cells,
the detectability curve, and the large-sample normality diagnostic."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.stats import kstest

from .check import ref_gaussian, ref_mc, pvalue, GaussianReference
from .errors import LgmCheckError, TooFewDraws
from .inference import _design, conditional_posterior, empirical_bayes
from .latent import build_rw1
from .model import GaussianLGM, HyperParams, assemble_lgm
from .perturbation import d_scores, i0_analytic, perturb_geometry
from .samplers import NigNoiseSpec, RngStream, simulate_latent


@dataclass(frozen=True)
class SimStudyConfig:
    n_values: tuple[int, ...] = (200, 1000)
    eta_values: tuple[float, ...] = (0.0, 0.5, 2.0, 10.0)
    sigma_w_values: tuple[float, ...] = (1 / 3, 1.0, 3.0)
    sigma_eps: float = 1.0
    n_datasets: int = 100
    seed: int = 0
    inference: str = "mode"

    def __post_init__(self):
        if not (self.n_values and self.eta_values and self.sigma_w_values):
            raise ValueError("all grids must be non-empty")
        if self.n_datasets < 1:
            raise ValueError("n_datasets must be >= 1")


@dataclass(frozen=True)
class SimStudyRow:
    n: int
    eta: float
    sigma_w: float
    replicate: int
    s0: float
    i0: float
    p_value: float
    tau_eps_hat: float
    sigma_w_hat: float
    failed: bool = False


@dataclass
class SimStudyResult:
    rows: list[SimStudyRow] = field(default_factory=list)

    def to_array(self) -> np.ndarray:
        return np.array([
            (r.n, r.eta, r.sigma_w, r.replicate, r.s0, r.i0, r.p_value,
             r.tau_eps_hat, r.sigma_w_hat)
            for r in self.rows if not r.failed
        ])

    def median_p(self, n: int, sigma_w: float, eta: float) -> float:
        ps = [r.p_value for r in self.rows
              if not r.failed and r.n == n and r.sigma_w == sigma_w and r.eta == eta]
        return float(np.median(ps))

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("N,eta,sigma_w,replicate,s0,i0,p_value,tau_eps_hat,sigma_w_hat,failed\n")
            for r in self.rows:
                fh.write(f"{r.n},{r.eta:.17g},{r.sigma_w:.17g},{r.replicate},"
                         f"{r.s0:.17g},{r.i0:.17g},{r.p_value:.17g},"
                         f"{r.tau_eps_hat:.17g},{r.sigma_w_hat:.17g},{int(r.failed)}\n")


def simulate_rw1_dataset(n: int, sigma_w: float, sigma_eps: float, eta: float,
                         rng: np.random.Generator) -> np.ndarray:
    """One signal-plus-noise path: latent walk scaled by sigma_w and driven
    by standardized heavy-tailed noise, plus Gaussian response noise."""
    latent = build_rw1(n, sigma_w)
    w = simulate_latent(latent, NigNoiseSpec(latent.h, eta), rng)
    return w + sigma_eps * rng.standard_normal(n)


def fit_and_check_rw1(y: np.ndarray, init: HyperParams | None = None):
    """Empirical-Bayes fit of the Gaussian walk model plus the analytic
    check quantities; returns (hp, s0, i0, p)."""
    n = y.shape[0]
    m = assemble_lgm(y, None, "identity", build_rw1(n, 1.0))
    hp = empirical_bayes(m, init)
    post = conditional_posterior(m, hp)
    geom = perturb_geometry(post, m.latent)
    d = d_scores(geom)
    s0 = float(d.sum())
    i0 = i0_analytic(geom)
    mean, var = ref_gaussian(geom)
    p = pvalue(s0, GaussianReference(mean, float(np.sqrt(var))))
    return hp, s0, i0, p


def run_sim_study(cfg: SimStudyConfig) -> SimStudyResult:
    """One row per (cell, replicate); failures recorded, not fatal.

    Within a cell the previous replicate's mode warm-starts the next fit.
    """
    result = SimStudyResult()
    stream = RngStream(cfg.seed)
    rep_index = 0
    for n in cfg.n_values:
        for sigma_w in cfg.sigma_w_values:
            for eta in cfg.eta_values:
                warm: HyperParams | None = None
                for rep in range(cfg.n_datasets):
                    rng = stream.child(rep_index).generator()
                    rep_index += 1
                    y = simulate_rw1_dataset(n, sigma_w, cfg.sigma_eps, eta, rng)
                    try:
                        hp, s0, i0, p = fit_and_check_rw1(y, warm)
                        warm = hp
                        result.rows.append(SimStudyRow(
                            n, eta, sigma_w, rep, s0, i0, p,
                            hp.tau_eps, hp.theta2["sigma_w"],
                        ))
                    except LgmCheckError:
                        result.rows.append(SimStudyRow(
                            n, eta, sigma_w, rep, np.nan, np.nan, np.nan,
                            np.nan, np.nan, failed=True,
                        ))
    return result


def estimate_detectability(m: GaussianLGM, hp: HyperParams, eta_grid,
                           n_rep: int, rng: np.random.Generator,
                           post=None) -> np.ndarray:
    """Mean/SD ratio of the discrepancy under eta-perturbed replication.

    Returns rows (eta, mean, sd, detectability); replicates share the fixed
    fitted hyperparameters while the latent noise gets progressively
    heavier-tailed.
    """
    if n_rep < 2:
        raise TooFewDraws("need at least 2 replicates per eta")
    if post is None:
        post = conditional_posterior(m, hp)
    geom = perturb_geometry(post, m.latent)
    d = m.latent.d_matrix(hp.theta2)
    dd = d.toarray() if sp.issparse(d) else np.asarray(d, dtype=float)
    M = _design(m)
    p = m.n_beta
    gii = np.diag(geom.gamma)
    h3 = geom.h**3
    eta_grid = tuple(eta_grid)
    out = np.empty((len(eta_grid), 4))
    for k, eta in enumerate(eta_grid):
        w = simulate_latent(m.latent, NigNoiseSpec(m.latent.h, float(eta)), rng,
                            size=n_rep, theta2=hp.theta2)
        mean_y = (m.A @ w.T).T if sp.issparse(m.A) else w @ m.A.T
        y_rep = mean_y + (m.B @ post.mean_beta)[None, :] \
            + rng.standard_normal((n_rep, m.n_obs)) / np.sqrt(hp.tau_eps)
        resid = y_rep - (m.B @ post.mean_beta)[None, :]
        sol = post.factor.solve(hp.tau_eps * np.asarray(M.T @ resid.T))
        b_rep = dd @ sol[p:, :]
        b2 = b_rep**2
        d_rep = (b2**2 + (3.0 * gii**2)[:, None] - 6.0 * b2 * gii[:, None]) / (8.0 * h3[:, None])
        s0 = d_rep.sum(axis=0)
        mu, sd = float(s0.mean()), float(s0.std(ddof=1))
        out[k] = (eta, mu, sd, mu / sd if sd > 0 else np.nan)
    return out


@dataclass(frozen=True)
class NormalityCell:
    n: int
    sigma_w: float
    i0: float
    ks_distance: float | None      # None when I0 <= 0 (cell left empty)

    @property
    def empty(self) -> bool:
        return self.ks_distance is None


def normality_diagnostic(cells, sigma_eps: float = 1.0, n_rep: int = 500,
                         seed: int = 0) -> list[NormalityCell]:
    """Per (N, sigma_w) cell: KS distance between the standardized reference
    draws s0(y_rep)/sqrt(I0(y)) and a standard normal; cells with
    non-positive information are reported empty."""
    if n_rep < 2:
        raise TooFewDraws("need at least 2 replicates")
    out = []
    stream = RngStream(seed)
    for k, (n, sigma_w) in enumerate(cells):
        rng = stream.child(k).generator()
        y = simulate_rw1_dataset(n, sigma_w, sigma_eps, 0.0, rng)
        m = assemble_lgm(y, None, "identity", build_rw1(n, 1.0))
        hp = empirical_bayes(m)
        post = conditional_posterior(m, hp)
        geom = perturb_geometry(post, m.latent)
        i0 = i0_analytic(geom)
        if i0 <= 0:
            out.append(NormalityCell(n, sigma_w, i0, None))
            continue
        samples = ref_mc(m, hp, n_rep, rng, post=post)
        ks = kstest(samples / np.sqrt(i0), "norm").statistic
        out.append(NormalityCell(n, sigma_w, i0, float(ks)))
    return out
