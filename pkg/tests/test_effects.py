"""Treatment-effect extraction from fitted models, with hand-built forest oracles."""

import numpy as np
import pytest

from treecause.data import ResponseScaler
from treecause.effects import (
    EffectDraws,
    credible_interval,
    estimate_ite_bart,
    estimate_ite_bcf,
    rmse,
)
from treecause.models import FitResult
from treecause.sampler import ForestDraws, SamplerConfig
from treecause.trees import Forest, Internal, Leaf, Tree


def _causal_fit(effects=(0.5, 1.0), scale=4.0, p=2):
    """FitResult whose d-th draw is a single tree adding effects[d] when z=1.

    The design is [x1..xp, z]; the scaler maps the scaled gap back by `scale`.
    """
    tcol = p
    forests = [
        Forest([Tree(Internal(tcol, 0.5, Leaf(0.0), Leaf(e / scale)))])
        for e in effects
    ]
    draws = ForestDraws.from_forests(forests)
    D = len(effects)
    return FitResult(
        kind="bart",
        prior="uniform",
        config=SamplerConfig(m=1, burn_in=1, n_draws=D),
        scaler=ResponseScaler(0.0, scale),
        draws=draws,
        sigma_draws=np.ones(D),
        usage_draws=np.ones((D, p + 1), dtype=bool),
        train_fit_draws=np.zeros((D, 0)),
        column_names=tuple(f"x{j+1}" for j in range(p)) + ("z",),
        treatment_col=tcol,
    )


class TestEffectDraws:
    def test_summary_interval_ordering(self):
        rng = np.random.default_rng(0)
        eff = EffectDraws(rng.normal(size=(200, 6)))
        rows = eff.summary(level=0.9)
        assert len(rows) == 6
        for r in rows:
            assert r["lo"] <= r["mean"] <= r["hi"]

    def test_cate_draws_average_rows(self):
        ite = np.array([[1.0, 3.0], [2.0, 4.0]])
        eff = EffectDraws(ite)
        assert eff.cate_draws().tolist() == [2.0, 3.0]
        assert eff.ite_mean().tolist() == [1.5, 3.5]

    def test_credible_interval_quantiles(self):
        v = np.arange(101, dtype=np.float64)
        lo, hi = credible_interval(v, level=0.90)
        assert lo == pytest.approx(5.0)
        assert hi == pytest.approx(95.0)

    def test_rmse_shape_check(self):
        with pytest.raises(ValueError):
            rmse(np.zeros(3), np.zeros(4))
        assert rmse(np.array([1.0, 2.0]), np.array([0.0, 0.0])) == pytest.approx(
            np.sqrt(2.5)
        )


class TestIteBart:
    def test_exact_effects_from_hand_built_forest(self):
        fit = _causal_fit(effects=(0.5, 1.0), scale=4.0)
        X = np.array([[0.0, 0.0, 1.0], [5.0, -2.0, 0.0], [1.0, 1.0, 1.0]])
        eff = estimate_ite_bart(fit, X)
        # the counterfactual gap is the same for every row, per draw
        assert np.allclose(eff.ite, np.array([[0.5] * 3, [1.0] * 3]))
        assert eff.cate_draws().tolist() == [0.5, 1.0]

    def test_treatment_column_required(self):
        fit = _causal_fit()
        object.__setattr__(fit, "treatment_col", None)
        with pytest.raises(ValueError):
            estimate_ite_bart(fit, np.zeros((2, 3)))

    def test_column_count_checked(self):
        fit = _causal_fit()
        with pytest.raises(ValueError, match="columns"):
            estimate_ite_bart(fit, np.zeros((2, 5)))


class TestIteBcf:
    def test_uses_cached_training_draws(self):
        from treecause.models import BcfFit
        from treecause.priors import BcfPriorParams

        alpha = np.array([[0.4, 0.6], [0.2, 0.8]])
        fit = BcfFit(
            config_m=SamplerConfig(m=1, burn_in=1, n_draws=2),
            config_alpha=SamplerConfig(m=1, burn_in=1, n_draws=2),
            priors=BcfPriorParams(),
            scaler=ResponseScaler(0.0, 1.0),
            draws_m=ForestDraws.from_forests([Forest([Tree(Leaf(0.0))])] * 2),
            draws_alpha=ForestDraws.from_forests([Forest([Tree(Leaf(0.0))])] * 2),
            sigma_draws=np.ones(2),
            nu_alpha_draws=np.ones(2),
            alpha_train_draws=alpha,
            total_fit_draws=np.zeros((2, 2)),
            column_names=("x1", "pihat"),
        )
        eff = estimate_ite_bcf(fit)
        assert np.array_equal(eff.ite, alpha)
        assert eff.ite is not alpha  # cached draws stay unaliased
