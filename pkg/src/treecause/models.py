"""Model facades: BART/DART regression, probit propensity models, GLM, and BCF.

Each fit runs the backfitting chain over the compiled kernel and returns an
immutable result holding posterior forest snapshots plus cached training
predictions, so downstream effect and curve computations never re-run MCMC.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit, ndtr, ndtri

from .data import (
    DataError,
    Dataset,
    ResponseScaler,
    build_split_candidates,
    standardize_response,
)
from .priors import (
    BcfPriorParams,
    LeafPriorParams,
    SigmaPriorParams,
    SplitVarPrior,
    TreePriorParams,
    sigma_hat_ols,
)
from .sampler import (
    ChainState,
    DrawAccumulator,
    ForestDraws,
    SamplerConfig,
    draw_sigma,
    probit_latent_draw,
    update_split_probabilities,
    update_theta,
)

__all__ = [
    "FitResult",
    "BcfFit",
    "fit_bart",
    "fit_probit",
    "fit_glm_propensity",
    "fit_bcf",
]

PROBIT_HALF_RANGE = 3.0  # latent scale spanned by the classifier forest


@dataclass(frozen=True)
class FitResult:
    """Posterior draws from one BART-family fit.

    sigma_draws are on the original response scale. train_fit_draws cache the
    per-draw training predictions (original scale; latent scale incl. offset
    for probit fits), so snapshots never need re-evaluation at train points.
    """

    kind: str  # "bart" or "probit"
    prior: str  # "uniform" or "dirichlet"
    config: SamplerConfig
    scaler: ResponseScaler
    draws: ForestDraws
    sigma_draws: np.ndarray
    usage_draws: np.ndarray
    train_fit_draws: np.ndarray
    column_names: tuple
    treatment_col: int | None
    s_draws: np.ndarray | None = None
    theta_draws: np.ndarray | None = None
    offset: float = 0.0

    @property
    def n_draws(self) -> int:
        return self.draws.n_draws

    @property
    def p(self) -> int:
        return self.usage_draws.shape[1]

    def pip(self) -> np.ndarray:
        """Posterior inclusion probability per design column."""
        return self.usage_draws.mean(axis=0)

    def predict_draws(self, X) -> np.ndarray:
        """Per-draw predictions, (n_draws, n). Probit fits return probabilities."""
        raw = self.draws.eval_draws(X)
        if self.kind == "probit":
            return ndtr(raw + self.offset)
        return self.scaler.inverse(raw)

    def predict(self, X) -> np.ndarray:
        """Posterior-mean prediction at each row of X."""
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != len(self.column_names):
            raise DataError(
                f"expected {len(self.column_names)} columns, got {X.shape[1]}"
            )
        if self.kind == "probit":
            return self.draws.eval_mean_probit(X, self.offset)
        return self.scaler.inverse(self.draws.eval_mean(X))

    def propensity(self) -> np.ndarray:
        """Posterior-mean propensity at the training points (probit fits only)."""
        if self.kind != "probit":
            raise ValueError("propensity() requires a probit fit")
        return ndtr(self.train_fit_draws).mean(axis=0)

    def to_dict(self) -> dict:
        from . import __version__

        d = {
            "version": __version__,
            "kind": self.kind,
            "prior": self.prior,
            "config": {
                "m": self.config.m,
                "burn_in": self.config.burn_in,
                "n_draws": self.config.n_draws,
                "thinning": self.config.thinning,
                "seed": self.config.seed,
            },
            "scaler": self.scaler.to_dict(),
            "offset": self.offset,
            "column_names": list(self.column_names),
            "treatment_col": self.treatment_col,
            "sigma_draws": self.sigma_draws.tolist(),
            "usage_draws": self.usage_draws.astype(int).tolist(),
            "forests": self.draws.to_nested(),
        }
        if self.s_draws is not None:
            d["s_draws"] = self.s_draws.tolist()
            d["theta_draws"] = self.theta_draws.tolist()
        return d

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, d: dict, X_train=None) -> "FitResult":
        from .trees import Forest, tree_from_dict

        forests = [
            Forest([tree_from_dict(td) for td in fr]) for fr in d["forests"]
        ]
        draws = ForestDraws.from_forests(forests)
        cfg = SamplerConfig(
            m=d["config"]["m"],
            burn_in=d["config"]["burn_in"],
            n_draws=d["config"]["n_draws"],
            thinning=d["config"]["thinning"],
            seed=d["config"]["seed"],
        )
        scaler = ResponseScaler.from_dict(d["scaler"])
        usage = np.asarray(d["usage_draws"], dtype=bool)
        if X_train is not None:
            raw = draws.eval_draws(X_train)
            train = ndtr(raw + d["offset"]) if d["kind"] == "probit" else scaler.inverse(raw)
        else:
            train = np.zeros((draws.n_draws, 0))
        return cls(
            kind=d["kind"],
            prior=d["prior"],
            config=cfg,
            scaler=scaler,
            draws=draws,
            sigma_draws=np.asarray(d["sigma_draws"]),
            usage_draws=usage,
            train_fit_draws=train,
            column_names=tuple(d["column_names"]),
            treatment_col=d["treatment_col"],
            s_draws=np.asarray(d["s_draws"]) if "s_draws" in d else None,
            theta_draws=np.asarray(d["theta_draws"]) if "theta_draws" in d else None,
            offset=d["offset"],
        )

    @classmethod
    def load(cls, path, X_train=None) -> "FitResult":
        with open(path) as fh:
            return cls.from_dict(json.load(fh), X_train=X_train)


def _design(data: Dataset, covariates=None):
    """Design matrix with the treatment appended as the last column when present."""
    if covariates is None:
        idx = np.arange(data.p)
    else:
        idx = np.asarray(covariates, dtype=np.intp)
    X = data.X[:, idx]
    names = tuple(data.column_names[i] for i in idx)
    tcol = None
    if data.z is not None:
        X = np.column_stack([X, data.z.astype(np.float64)])
        names = names + ("z",)
        tcol = X.shape[1] - 1
    return np.ascontiguousarray(X), names, tcol


def fit_bart(
    data: Dataset,
    config: SamplerConfig | None = None,
    prior: str = "uniform",
    covariates=None,
    max_cuts: int = 100,
    nu: float = 3.0,
    q: float = 0.90,
    k: float = 2.0,
    rng: np.random.Generator | None = None,
) -> FitResult:
    """BART (prior='uniform') or DART (prior='dirichlet') regression of y on the design.

    When the dataset carries a treatment, z joins the design as an ordinary
    covariate and counterfactual prediction recovers treatment effects.
    """
    if prior not in ("uniform", "dirichlet"):
        raise ValueError("prior must be 'uniform' or 'dirichlet'")
    config = config or SamplerConfig()
    X, names, tcol = _design(data, covariates)
    n, p = X.shape
    if p == 0:
        raise DataError("design has no covariates")
    y_scaled, scaler = standardize_response(data.y)
    rng = np.random.default_rng(config.seed) if rng is None else rng

    candidates = build_split_candidates(X, max_cuts)
    sig_prior = SigmaPriorParams.calibrated(sigma_hat_ols(X, y_scaled), nu=nu, q=q)
    leaf = LeafPriorParams(k=k, m=config.m)
    svp = SplitVarPrior(kind=prior).initialized(p)
    dart = prior == "dirichlet"

    state = ChainState(
        X, y_scaled, candidates, config.m, TreePriorParams(), rng,
        move_probs=(config.p_grow, config.p_prune, config.p_change),
    )
    sigma = sig_prior.sigma_hat
    s, theta = svp.s, svp.theta

    D = config.kept_draws
    acc = DrawAccumulator(config.m)
    sigma_draws = np.empty(D)
    usage_draws = np.zeros((D, p), dtype=bool)
    train_fits = np.empty((D, n))
    s_draws = np.empty((D, p)) if dart else None
    theta_draws = np.empty(D) if dart else None

    d = 0
    for it in range(config.total_sweeps):
        state.sweep(sigma, leaf.sigma_mu, s)
        sigma = draw_sigma(y_scaled - state.fit, sig_prior.nu, sig_prior.lam, rng)
        if dart:
            s = update_split_probabilities(state.counts_var, theta, rng)
            theta = update_theta(s, svp.a, svp.b, svp.rho, 1000, rng)
        kept = it - config.burn_in + 1
        if kept >= 1 and kept % config.thinning == 0 and d < D:
            snap = state.snapshot()
            acc.add(*snap)
            sigma_draws[d] = sigma * scaler.scale
            usage_draws[d] = state.usage
            train_fits[d] = scaler.inverse(state.refresh_fit(snap))
            if dart:
                s_draws[d] = s
                theta_draws[d] = theta
            d += 1

    return FitResult(
        kind="bart",
        prior=prior,
        config=config,
        scaler=scaler,
        draws=acc.finalize(),
        sigma_draws=sigma_draws,
        usage_draws=usage_draws,
        train_fit_draws=train_fits,
        column_names=names,
        treatment_col=tcol,
        s_draws=s_draws,
        theta_draws=theta_draws,
    )


def fit_probit(
    data: Dataset,
    config: SamplerConfig | None = None,
    prior: str = "uniform",
    covariates=None,
    max_cuts: int = 100,
    k: float = 2.0,
    rng: np.random.Generator | None = None,
) -> FitResult:
    """Probit BART/DART classifier for P(z=1 | x) via truncated-normal augmentation.

    sigma stays fixed at 1 on the latent scale; the forest models the latent
    mean around a base-rate offset.
    """
    if data.z is None:
        raise DataError("probit fit needs a treatment/label column")
    if prior not in ("uniform", "dirichlet"):
        raise ValueError("prior must be 'uniform' or 'dirichlet'")
    config = config or SamplerConfig()
    if covariates is None:
        covariates = np.arange(data.p)
    idx = np.asarray(covariates, dtype=np.intp)
    X = np.ascontiguousarray(data.X[:, idx])
    names = tuple(data.column_names[i] for i in idx)
    n, p = X.shape
    z = data.z.astype(np.float64)
    offset = float(ndtri(z.mean()))
    rng = np.random.default_rng(config.seed) if rng is None else rng

    candidates = build_split_candidates(X, max_cuts)
    leaf = LeafPriorParams(k=k, m=config.m, half_range=PROBIT_HALF_RANGE)
    svp = SplitVarPrior(kind=prior).initialized(p)
    dart = prior == "dirichlet"

    latent = probit_latent_draw(np.full(n, offset), z, rng)
    state = ChainState(
        X, latent - offset, candidates, config.m, TreePriorParams(), rng,
        move_probs=(config.p_grow, config.p_prune, config.p_change),
    )
    s, theta = svp.s, svp.theta

    D = config.kept_draws
    acc = DrawAccumulator(config.m)
    usage_draws = np.zeros((D, p), dtype=bool)
    train_fits = np.empty((D, n))
    s_draws = np.empty((D, p)) if dart else None
    theta_draws = np.empty(D) if dart else None

    d = 0
    for it in range(config.total_sweeps):
        state.sweep(1.0, leaf.sigma_mu, s)
        latent = probit_latent_draw(state.fit + offset, z, rng)
        state.y_eff[:] = latent - offset
        if dart:
            s = update_split_probabilities(state.counts_var, theta, rng)
            theta = update_theta(s, svp.a, svp.b, svp.rho, 1000, rng)
        kept = it - config.burn_in + 1
        if kept >= 1 and kept % config.thinning == 0 and d < D:
            snap = state.snapshot()
            acc.add(*snap)
            usage_draws[d] = state.usage
            train_fits[d] = state.refresh_fit(snap) + offset
            if dart:
                s_draws[d] = s
                theta_draws[d] = theta
            d += 1

    return FitResult(
        kind="probit",
        prior=prior,
        config=config,
        scaler=ResponseScaler.identity(),
        draws=acc.finalize(),
        sigma_draws=np.ones(D),
        usage_draws=usage_draws,
        train_fit_draws=train_fits,
        column_names=names,
        treatment_col=None,
        s_draws=s_draws,
        theta_draws=theta_draws,
        offset=offset,
    )


def fit_glm_propensity(
    data: Dataset,
    covariates=None,
    max_iter: int = 100,
    tol: float = 1e-10,
    ridge: float = 1e-8,
) -> np.ndarray:
    """Logistic-regression propensity scores by iteratively reweighted least squares.

    A small ridge term keeps the normal equations solvable on separable or
    collinear designs; non-convergence after max_iter warns and returns the
    last iterate.
    """
    if data.z is None:
        raise DataError("propensity estimation needs a treatment column")
    if covariates is None:
        covariates = np.arange(data.p)
    idx = np.asarray(covariates, dtype=np.intp)
    X = data.X[:, idx]
    z = data.z.astype(np.float64)
    n = X.shape[0]
    A = np.column_stack([np.ones(n), X])
    beta = np.zeros(A.shape[1])
    converged = False
    for _ in range(max_iter):
        eta = A @ beta
        pr = expit(eta)
        wt = np.maximum(pr * (1.0 - pr), 1e-10)
        # Newton step on the penalized log-likelihood
        grad = A.T @ (z - pr) - ridge * beta
        hess = (A * wt[:, None]).T @ A + ridge * np.eye(A.shape[1])
        step = np.linalg.solve(hess, grad)
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            converged = True
            break
    if not converged:
        warnings.warn("IRLS did not converge within %d iterations" % max_iter)
    pr = expit(A @ beta)
    return np.clip(pr, 1e-12, 1.0 - 1e-12)


@dataclass(frozen=True)
class BcfFit:
    """Posterior draws from a Bayesian Causal Forest fit.

    alpha_train_draws hold per-draw treatment effects alpha(x_i) for every
    training row (treated or not), already on the response scale.
    total_fit_draws cache m(x_i) + alpha(x_i) z_i per draw, original scale.
    """

    config_m: SamplerConfig
    config_alpha: SamplerConfig
    priors: BcfPriorParams
    scaler: ResponseScaler
    draws_m: ForestDraws
    draws_alpha: ForestDraws
    sigma_draws: np.ndarray
    nu_alpha_draws: np.ndarray
    alpha_train_draws: np.ndarray
    total_fit_draws: np.ndarray
    column_names: tuple

    @property
    def n_draws(self) -> int:
        return self.draws_m.n_draws

    def predict(self, X, z, pihat) -> np.ndarray:
        """Posterior-mean m(x, pihat) + alpha(x, pihat) * z on the original scale."""
        Xd = np.ascontiguousarray(np.column_stack([np.asarray(X, dtype=np.float64), pihat]))
        mhat = self.scaler.inverse(self.draws_m.eval_mean(Xd))
        ahat = self.draws_alpha.eval_mean(Xd) * self.scaler.scale
        return mhat + ahat * np.asarray(z, dtype=np.float64)

    def alpha_draws(self, X, pihat) -> np.ndarray:
        """Per-draw alpha(x) at new points, (n_draws, n), original scale."""
        Xd = np.ascontiguousarray(np.column_stack([np.asarray(X, dtype=np.float64), pihat]))
        return self.draws_alpha.eval_draws(Xd) * self.scaler.scale

    def to_dict(self) -> dict:
        from . import __version__

        def cfg(c):
            return {
                "m": c.m, "burn_in": c.burn_in, "n_draws": c.n_draws,
                "thinning": c.thinning, "seed": c.seed,
            }

        return {
            "version": __version__,
            "kind": "bcf",
            "config_m": cfg(self.config_m),
            "config_alpha": cfg(self.config_alpha),
            "priors": {
                "alpha0": self.priors.alpha0,
                "L_alpha": self.priors.L_alpha,
                "beta_alpha": self.priors.beta_alpha,
                "nu0": self.priors.nu0,
            },
            "scaler": self.scaler.to_dict(),
            "column_names": list(self.column_names),
            "sigma_draws": self.sigma_draws.tolist(),
            "nu_alpha_draws": self.nu_alpha_draws.tolist(),
            "forests_m": self.draws_m.to_nested(),
            "forests_alpha": self.draws_alpha.to_nested(),
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, d: dict, X_design=None, z=None) -> "BcfFit":
        from .trees import Forest, tree_from_dict

        def cfg(c):
            return SamplerConfig(
                m=c["m"], burn_in=c["burn_in"], n_draws=c["n_draws"],
                thinning=c["thinning"], seed=c["seed"],
            )

        draws_m = ForestDraws.from_forests(
            [Forest([tree_from_dict(td) for td in fr]) for fr in d["forests_m"]]
        )
        draws_a = ForestDraws.from_forests(
            [Forest([tree_from_dict(td) for td in fr]) for fr in d["forests_alpha"]]
        )
        scaler = ResponseScaler.from_dict(d["scaler"])
        if X_design is not None:
            Xd = np.ascontiguousarray(np.asarray(X_design, dtype=np.float64))
            alpha_train = draws_a.eval_draws(Xd) * scaler.scale
            if z is not None:
                total = scaler.inverse(
                    draws_m.eval_draws(Xd)
                    + draws_a.eval_draws(Xd) * np.asarray(z, dtype=np.float64)
                )
            else:
                total = np.zeros((draws_m.n_draws, 0))
        else:
            alpha_train = np.zeros((draws_a.n_draws, 0))
            total = np.zeros((draws_m.n_draws, 0))
        return cls(
            config_m=cfg(d["config_m"]),
            config_alpha=cfg(d["config_alpha"]),
            priors=BcfPriorParams(
                alpha0=d["priors"]["alpha0"],
                L_alpha=d["priors"]["L_alpha"],
                beta_alpha=d["priors"]["beta_alpha"],
                nu0=d["priors"]["nu0"],
            ),
            scaler=scaler,
            draws_m=draws_m,
            draws_alpha=draws_a,
            sigma_draws=np.asarray(d["sigma_draws"]),
            nu_alpha_draws=np.asarray(d["nu_alpha_draws"]),
            alpha_train_draws=alpha_train,
            total_fit_draws=total,
            column_names=tuple(d["column_names"]),
        )

    @classmethod
    def load(cls, path, X_design=None, z=None) -> "BcfFit":
        with open(path) as fh:
            return cls.from_dict(json.load(fh), X_design=X_design, z=z)


def fit_bcf(
    data: Dataset,
    pihat,
    config: SamplerConfig | None = None,
    config_alpha: SamplerConfig | None = None,
    priors: BcfPriorParams | None = None,
    max_cuts: int = 100,
    nu: float = 3.0,
    q: float = 0.90,
    k: float = 2.0,
    rng: np.random.Generator | None = None,
) -> BcfFit:
    """Bayesian Causal Forest: y = m(x, pihat) + alpha(x, pihat) z + noise.

    The prognostic forest m uses standard BART priors; the treatment forest
    alpha uses fewer trees, a stronger depth penalty, and a half-Cauchy
    hyperprior on its leaf scale, updated by conjugate inverse-gamma steps.
    The treatment enters only through the alpha forest's regressor, never as
    a split variable.
    """
    if data.z is None:
        raise DataError("BCF needs a treatment column")
    pihat = np.asarray(pihat, dtype=np.float64)
    if np.any(pihat <= 0.0) or np.any(pihat >= 1.0):
        raise DataError("pihat must lie strictly inside (0, 1)")
    config = config or SamplerConfig()
    priors = priors or BcfPriorParams()
    config_alpha = config_alpha or replace(config, m=priors.L_alpha)
    if (config_alpha.burn_in, config_alpha.n_draws, config_alpha.thinning) != (
        config.burn_in, config.n_draws, config.thinning
    ):
        raise ValueError("both forests must share chain lengths")

    X = np.ascontiguousarray(np.column_stack([data.X, pihat]))
    names = tuple(data.column_names) + ("pihat",)
    n = X.shape[0]
    z = data.z.astype(np.float64)
    y_scaled, scaler = standardize_response(data.y)
    rng = np.random.default_rng(config.seed) if rng is None else rng

    candidates = build_split_candidates(X, max_cuts)
    sig_prior = SigmaPriorParams.calibrated(sigma_hat_ols(X, y_scaled), nu=nu, q=q)
    leaf_m = LeafPriorParams(k=k, m=config.m)
    s_m = np.full(X.shape[1], 1.0 / X.shape[1])
    tree_prior_alpha = TreePriorParams(
        eta=priors.eta_alpha, beta=priors.beta_alpha
    )
    L = priors.L_alpha

    state_m = ChainState(
        X, y_scaled.copy(), candidates, config.m, TreePriorParams(), rng,
        move_probs=(config.p_grow, config.p_prune, config.p_change),
    )
    state_a = ChainState(
        X, y_scaled.copy(), candidates, L, tree_prior_alpha, rng, w=z,
        move_probs=(config.p_grow, config.p_prune, config.p_change),
    )
    sigma = sig_prior.sigma_hat
    nu_alpha2 = priors.nu0**2
    a_aux = 1.0

    D = config.kept_draws
    acc_m = DrawAccumulator(config.m)
    acc_a = DrawAccumulator(L)
    sigma_draws = np.empty(D)
    nu_alpha_draws = np.empty(D)
    total_fits = np.empty((D, n))

    d = 0
    for it in range(config.total_sweeps):
        state_m.y_eff[:] = y_scaled - state_a.fit
        state_m.sweep(sigma, leaf_m.sigma_mu, s_m)
        state_a.y_eff[:] = y_scaled - state_m.fit
        state_a.sweep(sigma, np.sqrt(nu_alpha2 / L), s_m)
        resid = y_scaled - state_m.fit - state_a.fit
        sigma = draw_sigma(resid, sig_prior.nu, sig_prior.lam, rng)
        # half-Cauchy(nu0) leaf scale via the inverse-gamma mixture
        n_leaves = np.count_nonzero(state_a.var == -1)
        ss = float(state_a.ssq_leaf.sum())
        nu_alpha2 = (1.0 / a_aux + L * ss / 2.0) / rng.gamma(0.5 + n_leaves / 2.0)
        a_aux = (1.0 / priors.nu0**2 + 1.0 / nu_alpha2) / rng.gamma(1.0)
        kept = it - config.burn_in + 1
        if kept >= 1 and kept % config.thinning == 0 and d < D:
            snap_m = state_m.snapshot()
            snap_a = state_a.snapshot()
            acc_m.add(*snap_m)
            acc_a.add(*snap_a)
            m_exact = state_m.refresh_fit(snap_m)
            a_exact = state_a.refresh_fit(snap_a)
            sigma_draws[d] = sigma * scaler.scale
            nu_alpha_draws[d] = np.sqrt(nu_alpha2) * scaler.scale
            total_fits[d] = scaler.inverse(m_exact + z * a_exact)
            d += 1

    draws_m = acc_m.finalize()
    draws_a = acc_a.finalize()
    alpha_train = draws_a.eval_draws(X) * scaler.scale
    return BcfFit(
        config_m=config,
        config_alpha=config_alpha,
        priors=priors,
        scaler=scaler,
        draws_m=draws_m,
        draws_alpha=draws_a,
        sigma_draws=sigma_draws,
        nu_alpha_draws=nu_alpha_draws,
        alpha_train_draws=alpha_train,
        total_fit_draws=total_fits,
        column_names=names,
    )
