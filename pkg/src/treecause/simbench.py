"""Synthetic data-generating processes and the replication benchmark runner.

Three DGPs with known treatment effects feed a grid of estimator/propensity
configurations; per-replication scores aggregate into a table of CATE RMSE,
ITE RMSE, selection quality, and propensity-usage rates. All randomness flows
from one master seed through per-(replication, cell, chain) derived streams,
so the report is byte-identical regardless of worker count.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy.special import ndtr

from .data import Dataset
from .effects import EffectDraws, estimate_ite_bart, estimate_ite_bcf
from .models import fit_bart, fit_bcf, fit_glm_propensity, fit_probit
from .sampler import SamplerConfig
from .selection import compute_pip, selection_metrics

__all__ = [
    "DgpSample",
    "BenchmarkScale",
    "BenchmarkReport",
    "gen_hahn",
    "gen_friedman",
    "gen_hill_synthetic",
    "run_benchmark",
    "DEFAULT_CELLS",
    "RELEVANT_NAMES",
]


@dataclass(frozen=True)
class DgpSample:
    """One synthetic draw with its ground truth attached."""

    X: np.ndarray
    z: np.ndarray
    y: np.ndarray
    pi_true: np.ndarray
    mu_true: np.ndarray
    alpha_true: np.ndarray
    theta_true: np.ndarray
    sigma_used: float
    cate_true: float


def _assemble(X, mu, alpha, systematic, rng, sigma=None):
    """Common tail of every DGP: propensity, assignment, noise scale, response."""
    pi = ndtr(mu)
    z = (rng.random(X.shape[0]) < pi).astype(np.float64)
    theta = mu + alpha * pi
    if sigma is None:
        sigma = float((theta.max() - theta.min()) / 8.0)
    y = systematic + mu + z * alpha + sigma * rng.standard_normal(X.shape[0])
    return DgpSample(
        X=X,
        z=z,
        y=y,
        pi_true=pi,
        mu_true=mu,
        alpha_true=alpha,
        theta_true=theta,
        sigma_used=sigma,
        cate_true=float(alpha.mean()),
    )


def gen_hahn(n: int, p: int, rng: np.random.Generator) -> DgpSample:
    """Gaussian covariates, step-function confounding, three-level effect in x3."""
    if p < 3:
        raise ValueError("need p >= 3")
    X = rng.standard_normal((n, p))
    mu = np.where(X[:, 0] < X[:, 1], 1.0, -1.0)
    alpha = (
        0.5 * (X[:, 2] > -0.75)
        + 0.25 * (X[:, 2] > 0.0)
        + 0.25 * (X[:, 2] > 0.75)
    )
    systematic = 0.1 * X[:, 0] + 0.1 * X[:, 1]
    return _assemble(X, mu, alpha, systematic, rng)


def gen_friedman(n: int, p: int, rng: np.random.Generator) -> DgpSample:
    """Uniform covariates, nonlinear five-variable surface, effect steps in x3."""
    if p < 5:
        raise ValueError("need p >= 5")
    X = rng.random((n, p))
    mu = np.where(X[:, 0] < X[:, 1], 1.0, -1.0)
    alpha = (
        0.5 * (X[:, 2] > 0.25)
        + 0.25 * (X[:, 2] > 0.50)
        + 0.25 * (X[:, 2] > 0.75)
    )
    systematic = (
        10.0 * np.sin(np.pi * X[:, 0] * X[:, 1])
        + 20.0 * (X[:, 2] - 0.5) ** 2
        + 10.0 * X[:, 3]
        + 5.0 * X[:, 4]
    )
    return _assemble(X, mu, alpha, systematic, rng)


def gen_hill_synthetic(n: int, rng: np.random.Generator) -> DgpSample:
    """Six standardized covariates with random sparse linear weights, fixed noise.

    Stands in for the IHDP continuous columns; the confounding and effect
    pieces reuse the step-function forms on x1, x2, x3.
    """
    X = rng.standard_normal((n, 6))
    X = (X - X.mean(axis=0)) / X.std(axis=0)
    beta = rng.choice(
        np.array([0.0, 1.0, 2.0, 3.0, 4.0]),
        size=6,
        p=[0.05, 0.10, 0.15, 0.20, 0.50],
    )
    mu = np.where(X[:, 0] < X[:, 1], 1.0, -1.0)
    alpha = (
        0.5 * (X[:, 2] > -0.75)
        + 0.25 * (X[:, 2] > 0.0)
        + 0.25 * (X[:, 2] > 0.75)
    )
    systematic = X @ beta
    return _assemble(X, mu, alpha, systematic, rng, sigma=0.5)


# configuration names follow the propensity source appended to the covariates
MODES = ("vanilla", "oracle", "ps", "glm", "rand")
ESTIMATORS = ("bart", "dart", "bcf")

RELEVANT_NAMES = {
    "hahn": {"x1", "x2", "x3", "pi", "z"},
    "friedman": {"x1", "x2", "x3", "x4", "x5", "pi", "z"},
    "hill": None,  # selection quality not scored for this study
}

DEFAULT_CELLS = {
    "hahn": [
        ("bart", "vanilla"), ("bart", "oracle"), ("bart", "ps"), ("bart", "glm"),
        ("dart", "vanilla"), ("dart", "rand"),
    ],
    "friedman": [
        ("bart", "vanilla"), ("bart", "oracle"), ("bart", "ps"), ("bart", "glm"),
    ],
    "hill": [
        ("bart", "vanilla"), ("bart", "oracle"), ("bart", "ps"), ("bart", "rand"),
        ("bcf", "oracle"), ("bcf", "ps"), ("bcf", "rand"),
    ],
}


@dataclass(frozen=True)
class BenchmarkScale:
    """Chain and problem sizes for one benchmark run.

    kept counts the pooled posterior draws per cell; they are split evenly
    over `chains` independent chains whose draws are concatenated. Several
    shorter chains average over the well-separated tree-configuration modes
    that a single long chain can sit in, which matters most for the
    effect-estimate configurations.
    """

    n: int = 500
    p: int = 50
    replications: int = 10
    burn_in: int = 750
    kept: int = 1000
    thinning: int = 10
    m: int = 200
    chains: int = 4
    propensity_burn: int = 1000
    propensity_sweeps: int = 1000

    @classmethod
    def paper_scale(cls) -> "BenchmarkScale":
        """The full protocol the tables were computed at (hours of compute)."""
        return cls(
            n=1000, p=98, replications=100,
            burn_in=1000, kept=2000, thinning=1, m=200, chains=1,
        )

    def outcome_config(self, seed: int = 0) -> SamplerConfig:
        if self.chains < 1 or self.kept % self.chains:
            raise ValueError(
                f"kept ({self.kept}) must divide evenly over chains ({self.chains})"
            )
        return SamplerConfig(
            m=self.m,
            burn_in=self.burn_in,
            n_draws=(self.kept // self.chains) * self.thinning,
            thinning=self.thinning,
            seed=seed,
        )

    def propensity_config(self, seed: int = 0) -> SamplerConfig:
        return SamplerConfig(
            m=self.m,
            burn_in=self.propensity_burn,
            n_draws=self.propensity_sweeps,
            thinning=max(self.propensity_sweeps // 100, 1),
            seed=seed,
        )

    def to_dict(self) -> dict:
        return {
            "n": self.n, "p": self.p, "replications": self.replications,
            "burn_in": self.burn_in, "kept": self.kept, "thinning": self.thinning,
            "m": self.m, "chains": self.chains,
            "propensity_burn": self.propensity_burn,
            "propensity_sweeps": self.propensity_sweeps,
        }


_GENERATORS = {
    "hahn": lambda n, p, rng: gen_hahn(n, p, rng),
    "friedman": lambda n, p, rng: gen_friedman(n, p, rng),
    "hill": lambda n, p, rng: gen_hill_synthetic(n, rng),
}

CSV_COLUMNS = (
    "config", "estimator", "mode", "rep", "status",
    "cate_hat", "cate_true", "cate_rmse", "ite_rmse",
    "precision", "recall", "f1", "ps_selected",
)


@dataclass
class CellResult:
    config: str
    estimator: str
    mode: str
    rep: int
    status: str = "ok"
    cate_hat: float | None = None
    cate_true: float | None = None
    cate_rmse: float | None = None
    ite_rmse: float | None = None
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    ps_selected: bool | None = None
    error: str | None = None

    def csv_values(self) -> list[str]:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, bool):
                return "1" if v else "0"
            if isinstance(v, float):
                return repr(v)
            return str(v)

        return [
            fmt(getattr(self, c)) for c in CSV_COLUMNS
        ]


def _cell_name(estimator: str, mode: str) -> str:
    return f"{mode.capitalize()}-{estimator.upper()}"


def _rep_seed(seed: int, rep: int, slot: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, rep, slot]))


def _run_rep(dgp: str, cells, rep: int, scale: BenchmarkScale, seed: int) -> list[CellResult]:
    """All cells of one replication: generate once, share propensity estimates."""
    gen = _GENERATORS[dgp]
    sample = gen(scale.n, scale.p, _rep_seed(seed, rep, 0))
    n, p = sample.X.shape
    base_names = tuple(f"x{j + 1}" for j in range(p))

    modes_used = {mode for _, mode in cells}
    pi_by_mode = {"vanilla": None}
    if "oracle" in modes_used:
        pi_by_mode["oracle"] = sample.pi_true
    if "ps" in modes_used:
        ps_data = Dataset(
            y=sample.z, X=sample.X, z=sample.z, column_names=base_names
        )
        ps_fit = fit_probit(
            ps_data,
            config=scale.propensity_config(),
            rng=_rep_seed(seed, rep, 1),
        )
        pi_by_mode["ps"] = np.clip(ps_fit.propensity(), 1e-6, 1.0 - 1e-6)
    if "glm" in modes_used:
        glm_data = Dataset(
            y=sample.z, X=sample.X, z=sample.z, column_names=base_names
        )
        pi_by_mode["glm"] = fit_glm_propensity(glm_data)
    if "rand" in modes_used:
        pi_by_mode["rand"] = _rep_seed(seed, rep, 2).random(n)

    relevant = RELEVANT_NAMES[dgp]
    out = []
    for estimator, mode in cells:
        res = CellResult(
            config=_cell_name(estimator, mode),
            estimator=estimator,
            mode=mode,
            rep=rep,
            cate_true=sample.cate_true,
        )
        try:
            # a cell's streams depend only on its identity, so adding or
            # reordering cells leaves the other cells' results untouched
            slot = 100 + ESTIMATORS.index(estimator) * len(MODES) + MODES.index(mode)
            rngs = [
                np.random.default_rng(np.random.SeedSequence([seed, rep, slot, c]))
                for c in range(scale.chains)
            ]
            pi_col = pi_by_mode.get(mode)
            if estimator == "bcf":
                if pi_col is None:
                    raise ValueError("BCF requires a propensity column")
                data = Dataset(
                    y=sample.y, X=sample.X, z=sample.z, column_names=base_names
                )
                ite_parts = []
                for rng in rngs:
                    fit = fit_bcf(
                        data,
                        np.clip(pi_col, 1e-9, 1.0 - 1e-9),
                        config=scale.outcome_config(),
                        rng=rng,
                    )
                    ite_parts.append(estimate_ite_bcf(fit).ite)
                eff = EffectDraws(np.concatenate(ite_parts, axis=0))
            else:
                if pi_col is None:
                    X_aug, names = sample.X, base_names
                else:
                    X_aug = np.column_stack([sample.X, pi_col])
                    names = base_names + ("pi",)
                data = Dataset(
                    y=sample.y, X=X_aug, z=sample.z, column_names=names
                )
                design = np.column_stack([X_aug, sample.z])
                ite_parts, usage_parts = [], []
                for rng in rngs:
                    fit = fit_bart(
                        data,
                        config=scale.outcome_config(),
                        prior="dirichlet" if estimator == "dart" else "uniform",
                        rng=rng,
                    )
                    ite_parts.append(estimate_ite_bart(fit, design).ite)
                    usage_parts.append(fit.usage_draws)
                eff = EffectDraws(np.concatenate(ite_parts, axis=0))
                pip = compute_pip(np.concatenate(usage_parts, axis=0))
                selected = pip > 0.5
                if relevant is not None:
                    truth = np.array(
                        [nm in relevant for nm in fit.column_names], dtype=bool
                    )
                    pr, rc, f1, _, _ = selection_metrics(selected, truth)
                    res.precision, res.recall, res.f1 = pr, rc, f1
                if pi_col is not None:
                    res.ps_selected = bool(selected[list(fit.column_names).index("pi")])
            cate_draws = eff.cate_draws()
            res.cate_hat = float(cate_draws.mean())
            res.cate_rmse = abs(res.cate_hat - sample.cate_true)
            res.ite_rmse = float(
                np.sqrt(np.mean((eff.ite_mean() - sample.alpha_true) ** 2))
            )
        except Exception as exc:  # record and continue; a cell failure is data
            res.status = "error"
            res.error = f"{type(exc).__name__}: {exc}"
        out.append(res)
    return out


@dataclass
class BenchmarkReport:
    dgp: str
    seed: int
    scale: BenchmarkScale
    cells: list
    rows: list = field(default_factory=list)

    def aggregate(self) -> dict:
        """Per-configuration means and sds of every metric, plus PS-usage."""
        agg = {}
        for estimator, mode in self.cells:
            name = _cell_name(estimator, mode)
            rows = [r for r in self.rows if r.config == name and r.status == "ok"]
            entry = {"replications": len(rows)}
            for metric in ("cate_rmse", "ite_rmse", "precision", "recall", "f1"):
                vals = [getattr(r, metric) for r in rows if getattr(r, metric) is not None]
                if vals:
                    v = np.asarray(vals, dtype=np.float64)
                    entry[metric] = {
                        "mean": float(v.mean()),
                        "sd": float(v.std(ddof=1)) if v.size > 1 else 0.0,
                    }
            flags = [r.ps_selected for r in rows if r.ps_selected is not None]
            if flags:
                entry["ps_usage"] = float(np.mean(flags) * 100.0)
            agg[name] = entry
        return agg

    def csv_text(self) -> str:
        from . import __version__

        buf = io.StringIO()
        buf.write(f"# treecause {__version__}\n")
        buf.write(
            f"# dgp={self.dgp} seed={self.seed} "
            + " ".join(f"{k}={v}" for k, v in sorted(self.scale.to_dict().items()))
            + "\n"
        )
        buf.write(",".join(CSV_COLUMNS) + "\n")
        for r in self.rows:
            buf.write(",".join(r.csv_values()) + "\n")
        return buf.getvalue()

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.csv_text())

    def to_json_dict(self) -> dict:
        from . import __version__

        return {
            "version": __version__,
            "dgp": self.dgp,
            "seed": self.seed,
            "scale": self.scale.to_dict(),
            "configs": self.aggregate(),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)


def run_benchmark(
    dgp: str,
    cells=None,
    scale: BenchmarkScale | None = None,
    seed: int = 0,
    jobs: int = 1,
) -> BenchmarkReport:
    """Replicate the study grid: generate, estimate propensities, fit, score.

    Cells are (estimator, mode) pairs; each (replication, cell, chain) derives
    its own seed from the master seed, so results do not depend on jobs or
    ordering.
    """
    if dgp not in _GENERATORS:
        raise ValueError(f"unknown dgp '{dgp}'")
    scale = scale or BenchmarkScale()
    cells = list(cells) if cells is not None else list(DEFAULT_CELLS[dgp])
    for estimator, mode in cells:
        if estimator not in ESTIMATORS or mode not in MODES:
            raise ValueError(f"invalid cell ({estimator}, {mode})")
        if estimator == "bcf" and mode == "vanilla":
            raise ValueError("BCF always needs a propensity column")

    reps = range(scale.replications)
    if jobs == 1:
        per_rep = [_run_rep(dgp, cells, r, scale, seed) for r in reps]
    else:
        per_rep = Parallel(n_jobs=jobs)(
            delayed(_run_rep)(dgp, cells, r, scale, seed) for r in reps
        )
    report = BenchmarkReport(dgp=dgp, seed=seed, scale=scale, cells=cells)
    for rows in per_rep:
        report.rows.extend(rows)
    return report
