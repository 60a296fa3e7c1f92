"""Command-line front end.

Subcommands: fit, check, sens, matern, simulate, simstudy.  Configuration
is a single JSON file; data files are headered CSV (UTF-8, '.' decimal).
Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import check as checkmod
from . import matern as maternmod
from .errors import LgmCheckError, ParseError, SingularStructure
from .inference import conditional_posterior, empirical_bayes, hyper_grid, log_marginal
from .latent import (
    KIND_CUSTOM,
    block_structure,
    build_iid,
    build_rw1,
    build_sar,
    load_custom,
    read_d_csv,
    read_edges_csv,
)
from .model import GammaPrior, HyperParams, assemble_lgm
from .perturbation import (
    d_scores,
    i0_analytic,
    perturb_geometry,
    sens_linear_targets,
)
from .samplers import NigNoiseSpec, RngStream, simulate_latent
from .simstudy import SimStudyConfig, run_sim_study
from . import linalg

USAGE_ERROR = 2
NUMERIC_ERROR = 3


class ConfigError(Exception):
    pass


def _read_table(path) -> dict[str, np.ndarray]:
    try:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            rows = [ln.strip().split(",") for ln in fh if ln.strip()]
        arr = np.array(rows, dtype=float)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read data file {path}: {exc}") from None
    return {name: arr[:, i] for i, name in enumerate(header)}


def _build_latent(spec: dict, base_dir: Path):
    kind = spec.get("kind", "").lower()
    if kind == "rw1":
        return build_rw1(int(spec["n"]), float(spec.get("sigma_w", 1.0)))
    if kind == "iid":
        return build_iid(int(spec["n"]), float(spec.get("sigma", 1.0)))
    if kind == "sar":
        edges = read_edges_csv(base_dir / spec["edges"])
        return build_sar(edges, float(spec.get("rho", 0.0)),
                         float(spec.get("sigma_w", 1.0)))
    if kind == "custom":
        return load_custom(base_dir / spec["d_file"], base_dir / spec["h_file"])
    if kind == "blocks":
        return block_structure([_build_latent(p, base_dir) for p in spec["parts"]])
    raise ConfigError(f"unknown latent kind {spec.get('kind')!r}")


def _build_priors(spec: dict | None):
    out = {}
    for name, p in (spec or {}).items():
        if "gamma" in p:
            shape, rate = p["gamma"]
            out[name] = GammaPrior(float(shape), float(rate))
        else:
            raise ConfigError(f"unknown prior spec for {name}: {p}")
    return out


def _build_a(a_spec, data: dict[str, np.ndarray], base_dir: Path):
    """Mapping matrix: 'identity', a CSV path, or indicator-factor blocks.

    Factor blocks turn a grouping column into a 0/1 indicator matrix
    (levels sorted), optionally scaled row-wise by another column; several
    blocks concatenate horizontally, matching a 'blocks' latent structure.
    """
    if a_spec == "identity":
        return "identity"
    if isinstance(a_spec, dict) and "factors" in a_spec:
        blocks = []
        for f in a_spec["factors"]:
            col = data[f["column"]]
            levels = np.unique(col)
            ind = (col[:, None] == levels[None, :]).astype(float)
            if f.get("times"):
                ind = ind * data[f["times"]][:, None]
            blocks.append(ind)
        return np.hstack(blocks)
    return read_d_csv(base_dir / a_spec)


def _build_model(cfg: dict, data_path: str, base_dir: Path):
    data = _read_table(data_path)
    mspec = cfg.get("model", {})
    resp = mspec.get("response", "y")
    if resp not in data:
        raise ConfigError(f"response column {resp!r} not in data")
    y = data[resp]
    cols = []
    if mspec.get("intercept", False):
        cols.append(np.ones_like(y))
    for name in mspec.get("covariates", []):
        if name not in data:
            raise ConfigError(f"covariate column {name!r} not in data")
        cols.append(data[name])
    B = np.column_stack(cols) if cols else None
    latent = _build_latent(mspec.get("latent", {}), base_dir)
    A = _build_a(mspec.get("a_matrix", "identity"), data, base_dir)
    priors = _build_priors(cfg.get("priors"))
    m = assemble_lgm(y, B, A, latent, hyper_priors=priors)
    if latent.kind == KIND_CUSTOM and not latent.intrinsic:
        try:
            linalg.cholesky(latent.prior_precision())
        except LgmCheckError:
            raise SingularStructure("custom structure matrix is singular") from None
    return m, data


def _workflow_config(cfg: dict, args) -> checkmod.WorkflowConfig:
    ref = {
        "analytic": checkmod.ReferenceMethod.ANALYTIC_GAUSSIAN,
        "mc": checkmod.ReferenceMethod.MC_REFERENCE,
        "i0": checkmod.ReferenceMethod.I0_APPROX,
    }
    name = getattr(args, "reference", None) or cfg.get("reference", "analytic")
    if name not in ref:
        raise ConfigError(f"unknown reference method {name!r}")
    rows = cfg.get("check_rows")
    if rows is not None:
        rows = np.arange(int(rows[0]), int(rows[1]))
    trigger = getattr(args, "trigger", None)
    if trigger is None:
        trigger = cfg.get("trigger", 0.1)
    grid_points = getattr(args, "grid_points", None)
    if grid_points is None:
        grid_points = cfg.get("grid_points", 5)
    return checkmod.WorkflowConfig(
        inference=cfg.get("inference", "mode"),
        reference=ref[name],
        targets=tuple(cfg.get("targets", ())),
        trigger=float(trigger),
        theta_eta=float(cfg.get("theta_eta", 1.0)),
        seed=int(args.seed if args.seed is not None else cfg.get("seed", 0)),
        n_rep=int(cfg.get("n_rep", 1000)),
        grid_points=int(grid_points),
        span_sd=float(cfg.get("span_sd", 2.0)),
        check_rows=rows,
        keep_ref_samples=True,
    )


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def _hp_from_dict(d: dict) -> HyperParams:
    d = dict(d)
    tau = d.pop("tau_eps")
    return HyperParams(float(tau), {k: float(v) for k, v in d.items()})


def cmd_fit(args) -> int:
    cfg = _load_config(args.config)
    base = Path(args.config).parent
    m, _ = _build_model(cfg, args.data, base)
    hp = empirical_bayes(m)
    post = conditional_posterior(m, hp)
    out = {
        "hyper": hp.as_dict(),
        "log_marginal": log_marginal(m, hp),
        "posterior_mean_w": post.mean_w.tolist(),
        "posterior_mean_beta": post.mean_beta.tolist(),
        "ridge_used": post.ridge_used,
    }
    if cfg.get("inference") == "grid":
        grid = hyper_grid(m, hp, int(cfg.get("grid_points", 5)),
                          float(cfg.get("span_sd", 2.0)))
        out["grid"] = {
            "points": [p.as_dict() for p in grid.points],
            "weights": grid.weights.tolist(),
            "hessian_fallback": grid.hessian_fallback,
        }
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "fit.json").write_text(json.dumps(out, indent=2))
    print(f"wrote {outdir / 'fit.json'}")
    return 0


def _check_impl(args, gate_sensitivity: bool) -> int:
    cfg = _load_config(args.config)
    base = Path(args.config).parent
    m, _ = _build_model(cfg, args.data, base)
    wf = _workflow_config(cfg, args)
    if args.fit:
        fit = json.loads(Path(args.fit).read_text())
        wf.init = _hp_from_dict(fit["hyper"])
    if not gate_sensitivity:
        wf.trigger = float("inf")     # always compute sensitivities
    report, sens = checkmod.run_workflow(m, wf)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "check.json").write_text(report.to_json(indent=2))
    with open(outdir / "d_scores.csv", "w") as fh:
        fh.write("index,d_i\n")
        for i, v in enumerate(sens.d):
            fh.write(f"{i},{v:.17g}\n")
    if report.ref_samples is not None:
        with open(outdir / "ref_samples.csv", "w") as fh:
            fh.write("s0_pred\n")
            for v in report.ref_samples:
                fh.write(f"{v:.17g}\n")
    if sens.s_l:
        payload = {
            "s0": sens.s0,
            "i0": sens.i0,
            "s_l": {
                k: {"raw": v.raw, "post_sd": v.post_sd, "scaled": v.scaled}
                for k, v in sens.s_l.items()
            },
        }
        (outdir / "sensitivity.json").write_text(json.dumps(payload, indent=2))
    print(f"check: s0 = {report.s0_obs:.6g}, p = {report.p_value:.4f} "
          f"({report.method.name})")
    return 0


def cmd_check(args) -> int:
    return _check_impl(args, gate_sensitivity=True)


def cmd_sens(args) -> int:
    return _check_impl(args, gate_sensitivity=False)


def cmd_matern(args) -> int:
    data = _read_table(args.data)
    xcol, ycol = args.x_column, args.y_column
    if xcol not in data or ycol not in data:
        raise ConfigError(f"need columns {xcol!r} and {ycol!r} in data")
    x, y = data[xcol], data[ycol]
    if args.standardize:
        y = (y - y.mean()) / y.std(ddof=1)
    dist = np.abs(x[:, None] - x[None, :])
    rng = RngStream(args.seed or 0).generator()
    p, scatter = maternmod.matern_smoothness_check(
        y, dist, args.nu, eps=args.eps, hyper_source=args.hyper,
        n_rep=args.n_rep, rng=rng, central=not args.forward,
    )
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "matern_scatter.csv", "w") as fh:
        fh.write("d_obs,d_rep,weight\n")
        for row in scatter:
            fh.write(f"{row[0]:.17g},{row[1]:.17g},{row[2]:.17g}\n")
    (outdir / "matern.json").write_text(json.dumps({"nu": args.nu, "p": p}))
    print(f"matern check: nu = {args.nu}, p = {p:.4f}")
    return 0


def cmd_simulate(args) -> int:
    if args.latent != "rw1":
        raise ConfigError("simulate currently supports --latent rw1")
    lat = build_rw1(args.n, args.sigma_w)
    rng = RngStream(args.seed or 0).generator()
    w = simulate_latent(lat, NigNoiseSpec(lat.h, args.eta), rng)
    y = w + args.sigma_eps * rng.standard_normal(args.n)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "simulate.csv", "w") as fh:
        fh.write("index,w,y\n")
        for i, (wi, yi) in enumerate(zip(w, y)):
            fh.write(f"{i},{wi:.17g},{yi:.17g}\n")
    print(f"wrote {outdir / 'simulate.csv'}")
    return 0


def cmd_simstudy(args) -> int:
    cfg = _load_config(args.config)
    study = SimStudyConfig(
        n_values=tuple(cfg.get("N", (200, 1000))),
        eta_values=tuple(cfg.get("eta", (0.0, 0.5, 2.0, 10.0))),
        sigma_w_values=tuple(cfg.get("sigma_w", (1 / 3, 1.0, 3.0))),
        sigma_eps=float(cfg.get("sigma_eps", 1.0)),
        n_datasets=int(cfg.get("n_datasets", 100)),
        seed=int(args.seed if args.seed is not None else cfg.get("seed", 0)),
    )
    result = run_sim_study(study)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    result.write_csv(outdir / "simstudy.csv")
    print(f"wrote {outdir / 'simstudy.csv'} ({len(result.rows)} rows)")
    return 0


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lgmcheck")
    ap.add_argument("--threads", type=int, default=None,
                    help="cap BLAS worker threads")
    sub = ap.add_subparsers(dest="command", required=True)

    common = dict(out="output directory", seed="random seed")

    p = sub.add_parser("fit")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help=common["out"])
    p.add_argument("--seed", type=int, default=None, help=common["seed"])
    p.set_defaults(func=cmd_fit)

    for name, fn in (("check", cmd_check), ("sens", cmd_sens)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--fit", default=None, help="fit.json from `fit`")
        p.add_argument("--out", required=True, help=common["out"])
        p.add_argument("--seed", type=int, default=None, help=common["seed"])
        p.add_argument("--reference", choices=("analytic", "mc", "i0"), default=None)
        p.add_argument("--grid-points", dest="grid_points", type=int, default=None)
        p.add_argument("--trigger", type=float, default=None)
        p.set_defaults(func=fn)

    p = sub.add_parser("matern")
    p.add_argument("--data", required=True)
    p.add_argument("--nu", type=float, required=True)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--n-rep", dest="n_rep", type=int, default=2000)
    p.add_argument("--hyper", choices=("mode", "grid"), default="grid")
    p.add_argument("--forward", action="store_true",
                   help="forward difference instead of central")
    p.add_argument("--x-column", default="times")
    p.add_argument("--y-column", default="accel")
    p.add_argument("--standardize", action="store_true", default=True)
    p.add_argument("--out", required=True, help=common["out"])
    p.add_argument("--seed", type=int, default=None, help=common["seed"])
    p.set_defaults(func=cmd_matern)

    p = sub.add_parser("simulate")
    p.add_argument("--latent", default="rw1")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--sigma-w", dest="sigma_w", type=float, default=1.0)
    p.add_argument("--sigma-eps", dest="sigma_eps", type=float, default=1.0)
    p.add_argument("--out", required=True, help=common["out"])
    p.add_argument("--seed", type=int, default=None, help=common["seed"])
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("simstudy")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help=common["out"])
    p.add_argument("--seed", type=int, default=None, help=common["seed"])
    p.set_defaults(func=cmd_simstudy)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        return args.func(args)
    except (ConfigError, ParseError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except LgmCheckError as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return NUMERIC_ERROR


if __name__ == "__main__":
    sys.exit(main())
