"""Treatment-effect estimation from fitted models: ITE draws, CATE, intervals, RMSE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import BcfFit, FitResult

__all__ = [
    "EffectDraws",
    "estimate_ite_bart",
    "estimate_ite_bcf",
    "cate",
    "credible_interval",
    "rmse",
]


@dataclass(frozen=True)
class EffectDraws:
    """Per-draw, per-individual treatment effects, (n_draws, n)."""

    ite: np.ndarray

    @property
    def n_draws(self) -> int:
        return self.ite.shape[0]

    @property
    def n(self) -> int:
        return self.ite.shape[1]

    def cate_draws(self) -> np.ndarray:
        """One CATE value per posterior draw: the mean effect over individuals."""
        return self.ite.mean(axis=1)

    def ite_mean(self) -> np.ndarray:
        return self.ite.mean(axis=0)

    def summary(self, level: float = 0.95) -> list[dict]:
        lo_q = (1.0 - level) / 2.0
        lo = np.quantile(self.ite, lo_q, axis=0)
        hi = np.quantile(self.ite, 1.0 - lo_q, axis=0)
        mean = self.ite_mean()
        return [
            {"mean": float(mean[i]), "lo": float(lo[i]), "hi": float(hi[i])}
            for i in range(self.n)
        ]


def estimate_ite_bart(fit: FitResult, X) -> EffectDraws:
    """Counterfactual ITE draws: prediction with z forced to 1 minus forced to 0.

    X must be laid out like the fit's design (treatment column included; its
    factual values are ignored). Trees that never split on z contribute zero.
    """
    if fit.treatment_col is None:
        raise ValueError("fit has no treatment column")
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != len(fit.column_names):
        raise ValueError(
            f"expected {len(fit.column_names)} columns, got {X.shape[1]}"
        )
    diff = fit.draws.eval_diff_draws(X, fit.treatment_col, 1.0, 0.0)
    return EffectDraws(diff * fit.scaler.scale)


def estimate_ite_bcf(fit: BcfFit, X=None, pihat=None) -> EffectDraws:
    """ITE draws from the treatment forest directly.

    With X omitted, the cached training-point draws are returned; new points
    need their covariates plus a propensity value per row.
    """
    if X is None:
        return EffectDraws(fit.alpha_train_draws.copy())
    if pihat is None:
        raise ValueError("new points need a pihat vector")
    return EffectDraws(fit.alpha_draws(X, pihat))


def cate(effects: EffectDraws) -> np.ndarray:
    """Per-draw average treatment effect over the sample."""
    return effects.cate_draws()


def credible_interval(draws, level: float) -> tuple[float, float]:
    """Equal-tailed empirical interval with linear quantile interpolation."""
    draws = np.asarray(draws, dtype=np.float64)
    if draws.size == 0:
        raise ValueError("no draws")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(draws, [tail, 1.0 - tail])
    return float(lo), float(hi)


def rmse(estimates, truth) -> float:
    """Root mean squared error between two equally long vectors."""
    estimates = np.atleast_1d(np.asarray(estimates, dtype=np.float64))
    truth = np.atleast_1d(np.asarray(truth, dtype=np.float64))
    if estimates.shape != truth.shape:
        raise ValueError("length mismatch")
    d = estimates - truth
    return float(np.sqrt(np.mean(d * d)))
