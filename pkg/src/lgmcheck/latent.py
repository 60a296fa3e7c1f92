"""Latent random-effect structures: the matrix D(theta2) and scale vector h.

Each structure ties a family of structure matrices to named hyperparameters;
``d_matrix`` rebuilds D at any hyperparameter setting while ``h`` stays
fixed.  All scale dependence lives inside D (the scale enters as 1/sigma),
so the closed-form diagnostics can treat h as a constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from . import linalg
from .errors import (
    InvalidDimension,
    IsolatedNode,
    NonPositiveH,
    ParseError,
    RhoOutOfRange,
)

KIND_RW1 = "RW1"
KIND_IID = "IID"
KIND_SAR = "SAR"
KIND_CUSTOM = "CUSTOM"
KIND_BLOCKS = "BLOCKS"


@dataclass(frozen=True)
class LatentStructure:
    """One latent component: D(theta2), h, and hyperparameter bindings."""

    kind: str
    h: np.ndarray
    intrinsic: bool
    hyper_names: tuple[str, ...]
    params: dict[str, float]
    n_w: int
    base: object = None          # kind-specific payload (diff matrix, W, fixed D)
    blocks: tuple["LatentStructure", ...] = ()
    _gram_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_noise(self) -> int:
        return self.h.shape[0]

    def _theta(self, theta2: Mapping[str, float] | None) -> dict[str, float]:
        merged = dict(self.params)
        if theta2:
            for k in self.hyper_names:
                if k in theta2:
                    merged[k] = float(theta2[k])
        return merged

    def d_matrix(self, theta2: Mapping[str, float] | None = None):
        """Structure matrix at the given hyperparameters (sparse or dense)."""
        t = self._theta(theta2)
        if self.kind == KIND_RW1:
            return self.base * (1.0 / t["sigma_w"])
        if self.kind == KIND_IID:
            return sp.identity(self.n_w, format="csr") * (1.0 / t["sigma"])
        if self.kind == KIND_SAR:
            rho, sig = t["rho"], t["sigma_w"]
            if not -1.0 < rho < 1.0:
                raise RhoOutOfRange(f"rho = {rho}")
            return (np.eye(self.n_w) - rho * self.base) / sig
        if self.kind == KIND_CUSTOM:
            return self.base
        if self.kind == KIND_BLOCKS:
            mats = [
                blk.d_matrix(_block_theta(theta2, blk, i))
                for i, blk in enumerate(self.blocks)
            ]
            mats = [m if sp.issparse(m) else sp.csr_matrix(m) for m in mats]
            return sp.block_diag(mats, format="csr")
        raise ValueError(f"unknown kind {self.kind}")

    def prior_precision(self, theta2: Mapping[str, float] | None = None):
        """Prior precision D' diag(h)^-1 D of the latent vector."""
        d = self.d_matrix(theta2)
        hinv = 1.0 / self.h
        if sp.issparse(d):
            return (d.T @ sp.diags(hinv) @ d).tocsc()
        return d.T @ (hinv[:, None] * d)

    def prior_logdet(self, theta2: Mapping[str, float] | None = None,
                     ridge_eps: float = linalg.RIDGE_EPS) -> tuple[float, float]:
        """log-determinant of the (ridged, if intrinsic) prior precision.

        Scale hyperparameters factor out of D, so the expensive part is
        cached once per structure; returns ``(logdet, ridge_used)`` where the
        ridge is relative to the current scaling.
        """
        t = self._theta(theta2)
        if self.kind in (KIND_RW1, KIND_IID):
            sig = t["sigma_w"] if self.kind == KIND_RW1 else t["sigma"]
            key = "unit_gram"
            if key not in self._gram_cache:
                unit = replace(self, params={**self.params,
                                             ("sigma_w" if self.kind == KIND_RW1 else "sigma"): 1.0})
                gram = unit.prior_precision(None)
                f = linalg.ridged_cholesky(gram, ridge_eps)
                self._gram_cache[key] = (f.logdet, f.ridge)
            ld0, ridge0 = self._gram_cache[key]
            return ld0 - 2.0 * self.n_w * np.log(sig), ridge0 / sig**2
        if self.kind == KIND_BLOCKS:
            tot, ridge = 0.0, 0.0
            for i, blk in enumerate(self.blocks):
                ld, r = blk.prior_logdet(_block_theta(theta2, blk, i), ridge_eps)
                tot += ld
                ridge = max(ridge, r)
            return tot, ridge
        f = linalg.ridged_cholesky(self.prior_precision(theta2), ridge_eps)
        return f.logdet, f.ridge


def _block_theta(theta2: Mapping[str, float] | None, blk: "LatentStructure",
                 index: int):
    """Map block-suffixed names (``sigma_w0``) back to the child's names."""
    if not theta2:
        return None
    out = {
        nm: theta2[f"{nm}{index}"]
        for nm in blk.hyper_names
        if f"{nm}{index}" in theta2
    }
    return out or None


def build_rw1(n: int, sigma_w: float) -> LatentStructure:
    """First-order random-walk structure: rows (-1, 1)/sigma_w, h = ones."""
    if n < 2:
        raise InvalidDimension(f"RW1 needs n >= 2, got {n}")
    if sigma_w <= 0:
        raise InvalidDimension("sigma_w must be positive")
    ones = np.ones(n - 1)
    base = sp.diags([-ones, ones], offsets=[0, 1], shape=(n - 1, n), format="csr")
    return LatentStructure(
        kind=KIND_RW1, h=np.ones(n - 1), intrinsic=True,
        hyper_names=("sigma_w",), params={"sigma_w": float(sigma_w)},
        n_w=n, base=base,
    )


def build_iid(n: int, sigma: float) -> LatentStructure:
    """Exchangeable structure D = I/sigma, h = ones."""
    if n < 1:
        raise InvalidDimension(f"IID needs n >= 1, got {n}")
    if sigma <= 0:
        raise InvalidDimension("sigma must be positive")
    return LatentStructure(
        kind=KIND_IID, h=np.ones(n), intrinsic=False,
        hyper_names=("sigma",), params={"sigma": float(sigma)},
        n_w=n, base=None,
    )


def build_sar(edges, rho: float, sigma_w: float) -> LatentStructure:
    """Simultaneous autoregression D = (I - rho W)/sigma_w.

    ``edges`` is an iterable of undirected (a, b) pairs with 1-based node
    ids; duplicates are ignored and W is the row-standardized adjacency.
    """
    if not -1.0 < rho < 1.0:
        raise RhoOutOfRange(f"rho = {rho}")
    if sigma_w <= 0:
        raise InvalidDimension("sigma_w must be positive")
    pairs = {tuple(sorted((int(a), int(b)))) for a, b in edges}
    if not pairs:
        raise ParseError("empty edge list")
    n = max(max(p) for p in pairs)
    adj = np.zeros((n, n))
    for a, b in pairs:
        if a == b:
            continue
        adj[a - 1, b - 1] = adj[b - 1, a - 1] = 1.0
    deg = adj.sum(axis=1)
    if np.any(deg == 0):
        missing = int(np.where(deg == 0)[0][0]) + 1
        raise IsolatedNode(f"node {missing} has no neighbours")
    W = adj / deg[:, None]
    return LatentStructure(
        kind=KIND_SAR, h=np.ones(n), intrinsic=False,
        hyper_names=("sigma_w", "rho"),
        params={"sigma_w": float(sigma_w), "rho": float(rho)},
        n_w=n, base=W,
    )


def custom_structure(d, h) -> LatentStructure:
    """Fixed structure matrix with no hyperparameter bindings."""
    d = np.asarray(d, dtype=float)
    h = np.asarray(h, dtype=float).ravel()
    if d.ndim != 2 or d.shape[0] != h.shape[0]:
        raise InvalidDimension("D row count must equal len(h)")
    if np.any(h <= 0):
        raise NonPositiveH("h must be strictly positive")
    intrinsic = d.shape[0] < d.shape[1]
    return LatentStructure(
        kind=KIND_CUSTOM, h=h, intrinsic=intrinsic, hyper_names=(),
        params={}, n_w=d.shape[1], base=d,
    )


def block_structure(parts: Sequence[LatentStructure]) -> LatentStructure:
    """Concatenate components block-diagonally, suffixing hyper names by index."""
    parts = tuple(parts)
    if not parts:
        raise InvalidDimension("need at least one block")
    names = tuple(f"{nm}{i}" for i, blk in enumerate(parts) for nm in blk.hyper_names)
    params = {
        f"{nm}{i}": blk.params[nm]
        for i, blk in enumerate(parts)
        for nm in blk.hyper_names
    }
    return LatentStructure(
        kind=KIND_BLOCKS,
        h=np.concatenate([blk.h for blk in parts]),
        intrinsic=any(blk.intrinsic for blk in parts),
        hyper_names=names, params=params,
        n_w=sum(blk.n_w for blk in parts),
        blocks=parts,
    )


# ---------------------------------------------------------------------------
# file formats: D as dense CSV with an `ncols` header line, h one value per
# line, adjacency as a two-column `node_a,node_b` edge list.
# ---------------------------------------------------------------------------

def write_d_csv(d, path) -> None:
    d = np.asarray(d, dtype=float)
    with open(path, "w") as fh:
        fh.write(f"ncols,{d.shape[1]}\n")
        for row in d:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_d_csv(path) -> np.ndarray:
    try:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            if header[0] != "ncols":
                raise ParseError(f"{path}: expected 'ncols' header line")
            ncols = int(header[1])
            rows = [
                [float(v) for v in line.strip().split(",")]
                for line in fh
                if line.strip()
            ]
    except (OSError, ValueError, IndexError) as exc:
        raise ParseError(f"{path}: {exc}") from None
    d = np.array(rows, dtype=float)
    if d.size and d.shape[1] != ncols:
        raise ParseError(f"{path}: rows have {d.shape[1]} columns, header says {ncols}")
    return d


def write_h_csv(h, path) -> None:
    with open(path, "w") as fh:
        for v in np.asarray(h, dtype=float).ravel():
            fh.write(f"{v:.17g}\n")


def read_h_csv(path) -> np.ndarray:
    try:
        with open(path) as fh:
            vals = [float(line.strip()) for line in fh if line.strip()]
    except (OSError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from None
    return np.array(vals, dtype=float)


def read_edges_csv(path) -> np.ndarray:
    try:
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if lines and lines[0].replace(" ", "").lower().startswith("node_a"):
        lines = lines[1:]
    try:
        return np.array([[int(v) for v in ln.split(",")[:2]] for ln in lines])
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None


def load_custom(d_file, h_file) -> LatentStructure:
    """Read a CUSTOM structure from a D file and an h file."""
    d = read_d_csv(d_file)
    h = read_h_csv(h_file)
    if np.any(h <= 0):
        raise NonPositiveH("h must be strictly positive")
    return custom_structure(d, h)


def save_custom(structure: LatentStructure, d_file, h_file) -> None:
    d = structure.d_matrix()
    if sp.issparse(d):
        d = d.toarray()
    write_d_csv(d, d_file)
    write_h_csv(structure.h, h_file)
