"""Command-line interface: fit, predict, effects, ice, pdp, select, simulate, benchmark.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error. Every
output file embeds the tool version, the resolved configuration, and the
master seed. TREECAUSE_JOBS sets the default worker count for benchmark runs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .data import DataError, Dataset, load_csv, read_table
from .effects import credible_interval, estimate_ite_bart, estimate_ite_bcf
from .icepdp import ice_curves, ice_ite_curves, pdp_cate_curve, pdp_curve, subsample_grid
from .models import BcfFit, FitResult, fit_bart, fit_bcf, fit_glm_propensity, fit_probit
from .sampler import SamplerConfig
from .selection import make_report
from .simbench import (
    DEFAULT_CELLS,
    BenchmarkScale,
    gen_friedman,
    gen_hahn,
    gen_hill_synthetic,
    run_benchmark,
)

ENV_JOBS = "TREECAUSE_JOBS"


def _default_jobs() -> int:
    try:
        return max(int(os.environ.get(ENV_JOBS, "1")), 1)
    except ValueError:
        return 1


def _meta_comment(seed, config: dict) -> str:
    parts = " ".join(f"{k}={v}" for k, v in sorted(config.items()))
    return f"# treecause {__version__}\n# seed={seed} {parts}\n"


def _load_config_file(path) -> dict:
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise DataError(f"{path}: config file must hold a JSON object")
    return cfg


def _merge_config(args, parser_defaults: dict, file_cfg: dict):
    """Config-file values fill in anything the command line left at its default."""
    for key, val in file_cfg.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise DataError(f"unknown config key '{key}'")
        if attr in parser_defaults and getattr(args, attr) == parser_defaults[attr]:
            setattr(args, attr, val)
    return args


def _chain_config(args) -> SamplerConfig:
    return SamplerConfig(
        m=args.trees,
        burn_in=args.burn,
        n_draws=args.draws,
        thinning=args.thin,
        seed=args.seed,
    )


def _load_model(path):
    """Dispatch a saved model file to its class by the embedded kind tag."""
    with open(path) as fh:
        d = json.load(fh)
    if d.get("kind") == "bcf":
        return BcfFit.from_dict(d), d
    return FitResult.from_dict(d), d


def _design_from_table(fit_names, header, mat, path, train_pi=None):
    """Assemble the fit's design matrix from a table's columns by name."""
    cols = {}
    for j, h in enumerate(header):
        cols[h] = mat[:, j]
    out = np.empty((mat.shape[0], len(fit_names)))
    for k, nm in enumerate(fit_names):
        if nm in cols:
            out[:, k] = cols[nm]
        elif nm in ("pi", "pihat") and train_pi is not None and len(train_pi) == mat.shape[0]:
            out[:, k] = np.asarray(train_pi)
        else:
            raise DataError(f"{path}: missing column '{nm}'")
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_fit(args) -> int:
    data = load_csv(args.data, args.response, args.treatment)
    rng = np.random.default_rng(args.seed)
    train_pi = None

    if args.model == "probit":
        fit = fit_probit(data, config=_chain_config(args), prior=args.prior, rng=rng)
    elif args.model == "bcf":
        pi = _resolve_propensity(args, data, rng)
        if pi is None:
            raise DataError("BCF needs --propensity (column:<name>, probit, glm, or random)")
        train_pi = pi
        fit = fit_bcf(data, pi, config=_chain_config(args), rng=rng)
    else:
        pi = _resolve_propensity(args, data, rng)
        if pi is not None:
            train_pi = pi
            data = Dataset(
                y=data.y,
                X=np.column_stack([data.X, pi]),
                z=data.z,
                column_names=tuple(data.column_names) + ("pi",),
            )
        fit = fit_bart(
            data,
            config=_chain_config(args),
            prior="dirichlet" if args.model == "dart" else args.prior,
            rng=rng,
        )

    doc = fit.to_dict()
    doc["seed"] = args.seed
    doc["propensity_mode"] = args.propensity
    if train_pi is not None:
        doc["train_pi"] = np.asarray(train_pi).tolist()
    with open(args.out, "w") as fh:
        json.dump(doc, fh)

    summary = {
        "version": __version__,
        "seed": args.seed,
        "model": args.model,
        "config": doc["config"] if "config" in doc else doc["config_m"],
        "n": data.n,
    }
    if isinstance(fit, BcfFit):
        summary["sigma_mean"] = float(fit.sigma_draws.mean())
        summary["nu_alpha_mean"] = float(fit.nu_alpha_draws.mean())
        summary["draws"] = fit.n_draws
    else:
        summary["sigma_mean"] = float(fit.sigma_draws.mean())
        summary["draws"] = fit.n_draws
        summary["pip"] = fit.pip().tolist()
        summary["columns"] = list(fit.column_names)
        if fit.s_draws is not None:
            summary["s_mean"] = fit.s_draws.mean(axis=0).tolist()
    spath = args.summary or (args.out + ".summary.json")
    with open(spath, "w") as fh:
        json.dump(summary, fh, indent=2)
    print(f"model written to {args.out}; summary to {spath}")
    return 0


def _resolve_propensity(args, data: Dataset, rng) -> np.ndarray | None:
    mode = args.propensity
    if mode == "none":
        return None
    if mode.startswith("column:"):
        name = mode.split(":", 1)[1]
        if name not in data.column_names:
            raise DataError(f"propensity column '{name}' not found")
        j = list(data.column_names).index(name)
        pi = data.X[:, j]
        if np.any(pi <= 0) or np.any(pi >= 1):
            raise DataError(f"propensity column '{name}' must lie in (0, 1)")
        return pi
    if mode == "probit":
        cfg = SamplerConfig(
            m=args.trees, burn_in=args.burn, n_draws=max(args.draws // 10, 100),
            thinning=max(args.draws // 1000, 1), seed=args.seed,
        )
        pfit = fit_probit(data, config=cfg, rng=rng)
        return np.clip(pfit.propensity(), 1e-6, 1 - 1e-6)
    if mode == "glm":
        return fit_glm_propensity(data)
    if mode == "random":
        return rng.random(data.n)
    raise DataError(f"unknown propensity mode '{mode}'")


def cmd_predict(args) -> int:
    fit, doc = _load_model(args.model)
    header, mat = read_table(args.data)
    X = _design_from_table(fit.column_names, header, mat, args.data, doc.get("train_pi"))
    if isinstance(fit, BcfFit):
        if "z" not in header:
            raise DataError(f"{args.data}: missing column 'z'")
        z = mat[:, header.index("z")]
        p = len(fit.column_names) - 1
        pred = fit.predict(X[:, :p], z, X[:, p])
    else:
        pred = fit.predict(X)
    with open(args.out, "w") as fh:
        fh.write(_meta_comment(doc.get("seed", ""), {"model": args.model}))
        fh.write("prediction\n")
        for v in pred:
            fh.write(repr(float(v)) + "\n")
    print(f"{pred.shape[0]} predictions written to {args.out}")
    return 0


def cmd_effects(args) -> int:
    fit, doc = _load_model(args.model)
    header, mat = read_table(args.data)
    X = _design_from_table(fit.column_names, header, mat, args.data, doc.get("train_pi"))
    if isinstance(fit, BcfFit):
        p = len(fit.column_names) - 1
        eff = estimate_ite_bcf(fit, X[:, :p], pihat=X[:, p])
    else:
        eff = estimate_ite_bart(fit, X)
    cate_draws = eff.cate_draws()
    lo, hi = credible_interval(cate_draws, args.level)
    summary = eff.summary(args.level)
    if args.out_csv:
        with open(args.out_csv, "w") as fh:
            fh.write(_meta_comment(doc.get("seed", ""), {"level": args.level}))
            fh.write(",".join(f"ite_{i}" for i in range(eff.n)) + "\n")
            for d in range(eff.n_draws):
                fh.write(",".join(repr(float(v)) for v in eff.ite[d]) + "\n")
    out = {
        "version": __version__,
        "level": args.level,
        "cate": {
            "mean": float(cate_draws.mean()),
            "lo": lo,
            "hi": hi,
        },
        "ite": summary,
    }
    with open(args.out_json, "w") as fh:
        json.dump(out, fh, indent=2)
    print(
        f"CATE {out['cate']['mean']:.4f} [{lo:.4f}, {hi:.4f}]; "
        f"details in {args.out_json}"
    )
    return 0


def _curve_args_to_set(args, fit, doc, effect: bool):
    header, mat = read_table(args.data)
    names = fit.column_names
    X = _design_from_table(names, header, mat, args.data, doc.get("train_pi"))
    try:
        S = int(args.var)
    except ValueError:
        if args.var not in names:
            raise DataError(f"unknown variable '{args.var}'")
        S = list(names).index(args.var)
    if not 0 <= S < len(names):
        raise DataError(f"variable index {S} out of range")
    grid = None
    if args.grid is not None and args.grid < X.shape[0]:
        vals = np.sort(X[:, S])
        idx = np.unique(np.round(np.linspace(0, vals.size - 1, args.grid)).astype(int))
        grid = vals[idx]
    if effect:
        cs = ice_ite_curves(fit, X, S, grid=grid, draw_stride=args.draw_stride)
    else:
        if isinstance(fit, BcfFit):
            raise DataError("raw-prediction curves need a single-forest model")
        cs = ice_curves(fit.predict, X, S, grid=grid)
    if args.individuals is not None and args.individuals < cs.ice.shape[0]:
        cs = subsample_grid(
            cs, max_individuals=args.individuals, rng=np.random.default_rng(args.seed)
        )
    return cs


def cmd_ice(args) -> int:
    fit, doc = _load_model(args.model)
    cs = _curve_args_to_set(args, fit, doc, args.effect)
    with open(args.out, "w") as fh:
        fh.write(
            _meta_comment(
                doc.get("seed", ""),
                {"var": args.var, "effect": args.effect, "grid": args.grid or "all"},
            )
        )
        fh.write("grid_value,series,value\n")
        for gv, sid, val in cs.to_rows():
            fh.write(f"{repr(gv)},{sid},{repr(val)}\n")
    print(f"curves for variable {args.var} written to {args.out}")
    return 0


def cmd_pdp(args) -> int:
    fit, doc = _load_model(args.model)
    header, mat = read_table(args.data)
    X = _design_from_table(fit.column_names, header, mat, args.data, doc.get("train_pi"))
    try:
        S = int(args.var)
    except ValueError:
        if args.var not in fit.column_names:
            raise DataError(f"unknown variable '{args.var}'")
        S = list(fit.column_names).index(args.var)
    grid = None
    if args.grid is not None and args.grid < X.shape[0]:
        vals = np.sort(X[:, S])
        idx = np.unique(np.round(np.linspace(0, vals.size - 1, args.grid)).astype(int))
        grid = vals[idx]
    if args.effect:
        curve = pdp_cate_curve(fit, X, S, grid=grid, draw_stride=args.draw_stride)
    else:
        if isinstance(fit, BcfFit):
            raise DataError("raw-prediction curves need a single-forest model")
        curve = pdp_curve(fit.predict, X, S, grid=grid)
    gvals = np.sort(X[:, S]) if grid is None else np.sort(np.asarray(grid))
    with open(args.out, "w") as fh:
        fh.write(
            _meta_comment(
                doc.get("seed", ""), {"var": args.var, "effect": args.effect}
            )
        )
        fh.write("grid_value,pdp\n")
        for g, v in zip(gvals, curve):
            fh.write(f"{repr(float(g))},{repr(float(v))}\n")
    print(f"partial dependence for variable {args.var} written to {args.out}")
    return 0


def cmd_select(args) -> int:
    fit, doc = _load_model(args.model)
    if isinstance(fit, BcfFit):
        raise DataError("selection report needs a single-forest model")
    report = make_report(fit.usage_draws, s_draws=fit.s_draws)
    out = {
        "version": __version__,
        "seed": doc.get("seed"),
        "columns": list(fit.column_names),
        **report.to_dict(),
    }
    with open(args.out, "w") as fh:
        json.dump(out, fh, indent=2)
    chosen = [nm for nm, sel in zip(fit.column_names, report.selected) if sel]
    print(f"selected: {', '.join(chosen) if chosen else '(none)'}; report in {args.out}")
    return 0


def cmd_simulate(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.dgp == "hahn":
        s = gen_hahn(args.n, args.p, rng)
    elif args.dgp == "friedman":
        s = gen_friedman(args.n, args.p, rng)
    elif args.dgp == "hill":
        s = gen_hill_synthetic(args.n, rng)
    else:
        raise DataError(f"unknown dgp '{args.dgp}'")
    p = s.X.shape[1]
    names = [f"x{j + 1}" for j in range(p)] + ["z", "y"]
    cols = [s.X[:, j] for j in range(p)] + [s.z, s.y]
    if args.truth:
        names += ["pi_true", "mu_true", "alpha_true"]
        cols += [s.pi_true, s.mu_true, s.alpha_true]
    with open(args.out, "w") as fh:
        fh.write(
            _meta_comment(
                args.seed,
                {"dgp": args.dgp, "n": args.n, "p": p, "sigma": repr(s.sigma_used)},
            )
        )
        fh.write(",".join(names) + "\n")
        for i in range(s.X.shape[0]):
            fh.write(",".join(repr(float(c[i])) for c in cols) + "\n")
    print(f"{s.X.shape[0]} rows written to {args.out} (true CATE {s.cate_true:.4f})")
    return 0


def _parse_cells(text: str):
    cells = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            estimator, mode = part.split(":")
        except ValueError:
            raise DataError(f"cell '{part}' is not estimator:mode")
        cells.append((estimator.strip().lower(), mode.strip().lower()))
    if not cells:
        raise DataError("no cells given")
    return cells


def cmd_benchmark(args) -> int:
    if args.paper_scale:
        scale = BenchmarkScale.paper_scale()
    else:
        scale = BenchmarkScale(
            n=args.n, p=args.p, replications=args.reps,
            burn_in=args.burn, kept=args.kept, thinning=args.thin, m=args.trees,
            chains=args.chains,
        )
    cells = _parse_cells(args.cells) if args.cells else None
    report = run_benchmark(
        args.dgp, cells=cells, scale=scale, seed=args.seed, jobs=args.jobs
    )
    report.to_csv(args.out_csv)
    if args.out_json:
        report.to_json(args.out_json)
    n_err = sum(1 for r in report.rows if r.status != "ok")
    agg = report.aggregate()
    for name, entry in agg.items():
        if "cate_rmse" in entry:
            print(
                f"{name}: CATE RMSE {entry['cate_rmse']['mean']:.4f} "
                f"({entry['cate_rmse']['sd']:.4f})"
            )
    print(f"report written to {args.out_csv}" + (f"; {n_err} cell(s) failed" if n_err else ""))
    return 0 if n_err == 0 else 1


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treecause",
        description="Bayesian tree ensembles for causal inference",
    )
    parser.add_argument("--version", action="version", version=f"treecause {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_chain_flags(p):
        p.add_argument("--trees", type=int, default=200, help="trees per forest")
        p.add_argument("--burn", type=int, default=1000, help="burn-in sweeps")
        p.add_argument("--draws", type=int, default=2000, help="post-burn-in sweeps")
        p.add_argument("--thin", type=int, default=1, help="keep every k-th sweep")
        p.add_argument("--seed", type=int, default=0, help="master seed")

    f = sub.add_parser("fit", help="fit a model to a CSV")
    f.add_argument("--data", required=True)
    f.add_argument("--response", required=True, help="response column name")
    f.add_argument("--treatment", default=None, help="treatment column name")
    f.add_argument("--model", choices=("bart", "dart", "probit", "bcf"), default="bart")
    f.add_argument("--prior", choices=("uniform", "dirichlet"), default="uniform")
    f.add_argument(
        "--propensity",
        default="none",
        help="none | column:<name> | probit | glm | random",
    )
    add_chain_flags(f)
    f.add_argument("--config", default=None, help="JSON config file (flags win)")
    f.add_argument("--out", required=True, help="model JSON path")
    f.add_argument("--summary", default=None, help="summary JSON path")
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", help="posterior-mean predictions at new rows")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    ef = sub.add_parser("effects", help="ITE/CATE with credible intervals")
    ef.add_argument("--model", required=True)
    ef.add_argument("--data", required=True)
    ef.add_argument("--level", type=float, default=0.95)
    ef.add_argument("--out-csv", default=None, help="per-draw ITE matrix CSV")
    ef.add_argument("--out-json", required=True)
    ef.set_defaults(func=cmd_effects)

    ic = sub.add_parser("ice", help="ICE curves for one variable")
    ic.add_argument("--model", required=True)
    ic.add_argument("--data", required=True)
    ic.add_argument("--var", required=True, help="column name or index")
    ic.add_argument("--effect", action="store_true", help="plot treatment effects")
    ic.add_argument("--grid", type=int, default=None, help="max grid points")
    ic.add_argument("--individuals", type=int, default=None, help="max curves kept")
    ic.add_argument("--draw-stride", type=int, default=1)
    ic.add_argument("--seed", type=int, default=0)
    ic.add_argument("--out", required=True)
    ic.set_defaults(func=cmd_ice)

    pd = sub.add_parser("pdp", help="partial dependence curve for one variable")
    pd.add_argument("--model", required=True)
    pd.add_argument("--data", required=True)
    pd.add_argument("--var", required=True)
    pd.add_argument("--effect", action="store_true")
    pd.add_argument("--grid", type=int, default=None)
    pd.add_argument("--draw-stride", type=int, default=1)
    pd.add_argument("--out", required=True)
    pd.set_defaults(func=cmd_pdp)

    se = sub.add_parser("select", help="variable-selection report from a fitted model")
    se.add_argument("--model", required=True)
    se.add_argument("--out", required=True)
    se.set_defaults(func=cmd_select)

    si = sub.add_parser("simulate", help="generate a synthetic dataset")
    si.add_argument("--dgp", choices=("hahn", "friedman", "hill"), required=True)
    si.add_argument("--n", type=int, default=500)
    si.add_argument("--p", type=int, default=50)
    si.add_argument("--seed", type=int, required=True)
    si.add_argument("--truth", action="store_true", help="include truth columns")
    si.add_argument("--out", required=True)
    si.set_defaults(func=cmd_simulate)

    be = sub.add_parser("benchmark", help="replicated estimator comparison")
    be.add_argument("--dgp", choices=("hahn", "friedman", "hill"), required=True)
    be.add_argument("--cells", default=None, help="comma list of estimator:mode")
    be.add_argument("--reps", type=int, default=10)
    be.add_argument("--n", type=int, default=500)
    be.add_argument("--p", type=int, default=50)
    be.add_argument("--trees", type=int, default=200)
    be.add_argument("--burn", type=int, default=750)
    be.add_argument("--kept", type=int, default=1000, help="pooled draws per cell")
    be.add_argument("--thin", type=int, default=10)
    be.add_argument("--chains", type=int, default=4, help="independent chains per cell")
    be.add_argument("--paper-scale", action="store_true")
    be.add_argument("--seed", type=int, required=True)
    be.add_argument("--jobs", type=int, default=_default_jobs())
    be.add_argument("--out-csv", required=True)
    be.add_argument("--out-json", default=None)
    be.set_defaults(func=cmd_benchmark)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "config", None):
            defaults = {
                a.dest: a.default
                for g in parser._subparsers._group_actions
                for a in g.choices[args.command]._actions
            }
            _merge_config(args, defaults, _load_config_file(args.config))
        return args.func(args)
    except (DataError, FileNotFoundError, NotADirectoryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
