"""ICE and PDP curve construction, effect curves, display thinning."""

import numpy as np
import pytest

from treecause.data import ResponseScaler
from treecause.icepdp import (
    CurveSet,
    ice_curves,
    ice_ite_curves,
    pdp_cate_curve,
    pdp_curve,
    subsample_grid,
)
from treecause.models import FitResult
from treecause.sampler import ForestDraws, SamplerConfig
from treecause.trees import Forest, Internal, Leaf, Tree


def _fn(Xm):
    return Xm[:, 0] ** 2 + np.sin(Xm[:, 1])


def _step_effect_fit(scale=2.0):
    """Two draws; effect is 1*scale (x1 > 0) in draw 0 and twice that in draw 1.

    Design layout [x1, x2, z]; the treatment interacts with x1 through a
    two-level tree, so the ITE curve along x1 is a step at zero.
    """

    def tree(mag):
        hit = Internal(2, 0.5, Leaf(0.0), Leaf(mag))
        return Tree(Internal(0, 0.0, Leaf(0.0), hit))

    forests = [Forest([tree(0.5)]), Forest([tree(1.0)])]
    return FitResult(
        kind="bart",
        prior="uniform",
        config=SamplerConfig(m=1, burn_in=1, n_draws=2),
        scaler=ResponseScaler(0.0, scale),
        draws=ForestDraws.from_forests(forests),
        sigma_draws=np.ones(2),
        usage_draws=np.ones((2, 3), dtype=bool),
        train_fit_draws=np.zeros((2, 0)),
        column_names=("x1", "x2", "z"),
        treatment_col=2,
    )


class TestCurves:
    def test_default_grid_is_sorted_observed_values(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(12, 3))
        cs = ice_curves(_fn, X, 1)
        assert np.array_equal(cs.grid, np.sort(X[:, 1]))
        assert cs.ice.shape == (12, 12)

    def test_ice_rows_follow_definition(self):
        X = np.array([[1.0, 0.0], [2.0, 3.0]])
        grid = np.array([0.0, 1.0])
        cs = ice_curves(_fn, X, 0)  # grid = sorted x0 = [1, 2]
        # row 0 keeps x2=0: f = g^2 + sin(0)
        assert np.allclose(cs.ice[0], np.array([1.0, 4.0]))
        cs2 = ice_curves(_fn, X, 0, grid=grid)
        assert np.allclose(cs2.ice[1], grid**2 + np.sin(3.0))

    def test_pdp_is_row_average(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(9, 2))
        cs = ice_curves(_fn, X, 0)
        assert np.allclose(cs.pdp, cs.ice.mean(axis=0), atol=1e-14)
        assert np.allclose(cs.pdp, pdp_curve(_fn, X, 0), atol=1e-12)

    def test_explicit_grid_is_sorted_first(self):
        X = np.zeros((3, 2))
        cs = ice_curves(_fn, X, 0, grid=[2.0, -1.0, 0.5])
        assert cs.grid.tolist() == [-1.0, 0.5, 2.0]

    def test_out_of_range_variable_rejected(self):
        with pytest.raises(ValueError):
            ice_curves(_fn, np.zeros((3, 2)), 2)

    def test_to_rows_and_json_shapes(self):
        X = np.array([[0.0, 0.0], [1.0, 1.0]])
        cs = ice_curves(_fn, X, 0, grid=[0.2, 0.8])
        rows = cs.to_rows()
        assert len(rows) == 2 * (1 + 2)  # per grid point: pdp + one row per curve
        d = cs.to_json_dict()
        assert d["variable"] == 0
        assert len(d["grid"]) == 2 and len(d["ice"]) == 2


class TestEffectCurves:
    def test_step_effect_recovered_exactly(self):
        fit = _step_effect_fit(scale=2.0)
        X = np.array(
            [[-1.0, 5.0, 1.0], [2.0, -3.0, 0.0], [0.5, 0.0, 1.0]]
        )
        grid = np.array([-2.0, -0.5, 0.5, 3.0])
        cs = ice_ite_curves(fit, X, 0, grid=grid)
        # mean over draws of (0.5, 1.0) * scale 2 = 1.5 beyond the step, 0 before
        assert np.allclose(cs.ice, np.tile([0.0, 0.0, 1.5, 1.5], (3, 1)))
        direct = pdp_cate_curve(fit, X, 0, grid=grid)
        assert np.allclose(direct, cs.pdp, atol=1e-14)

    def test_bands_bracket_the_pdp(self):
        fit = _step_effect_fit()
        X = np.zeros((4, 3))
        grid = np.array([-1.0, 1.0])
        cs = ice_ite_curves(fit, X, 0, grid=grid, bands=True, level=0.5)
        assert cs.band_lo is not None
        assert np.all(cs.band_lo <= cs.pdp + 1e-12)
        assert np.all(cs.pdp <= cs.band_hi + 1e-12)

    def test_draw_stride_subsets_draws(self):
        fit = _step_effect_fit(scale=2.0)
        X = np.zeros((2, 3))
        grid = np.array([1.0])
        full = ice_ite_curves(fit, X, 0, grid=grid)
        strided = ice_ite_curves(fit, X, 0, grid=grid, draw_stride=2)
        assert full.ice[0, 0] == pytest.approx(1.5)  # mean of both draws
        assert strided.ice[0, 0] == pytest.approx(1.0)  # first draw only

    def test_non_causal_fit_rejected(self):
        fit = _step_effect_fit()
        object.__setattr__(fit, "treatment_col", None)
        with pytest.raises(ValueError):
            ice_ite_curves(fit, np.zeros((2, 3)), 0)


class TestSubsample:
    def test_grid_and_individual_thinning(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(30, 2))
        cs = ice_curves(_fn, X, 0)
        small = subsample_grid(cs, max_grid=7, max_individuals=5, rng=rng)
        assert small.grid.size <= 7
        assert small.ice.shape[0] == 5
        assert small.individuals.shape == (5,)
        # surviving grid points keep their full-population averages
        kept = np.isin(cs.grid, small.grid)
        assert np.allclose(small.pdp, cs.pdp[kept])

    def test_no_limits_is_identity(self):
        X = np.random.default_rng(4).normal(size=(6, 2))
        cs = ice_curves(_fn, X, 1)
        same = subsample_grid(cs)
        assert np.array_equal(same.ice, cs.ice)

    def test_invalid_limits_rejected(self):
        X = np.zeros((3, 2))
        cs = ice_curves(_fn, X, 0, grid=[0.1, 0.2])
        with pytest.raises(ValueError):
            subsample_grid(cs, max_grid=0)


class TestCurveSetValidation:
    def test_unsorted_grid_rejected(self):
        with pytest.raises(ValueError):
            CurveSet(
                S=0,
                grid=np.array([1.0, 0.0]),
                ice=np.zeros((2, 2)),
                pdp=np.zeros(2),
            )

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            CurveSet(
                S=0,
                grid=np.array([0.0, 1.0]),
                ice=np.zeros((2, 2)),
                pdp=np.zeros(3),
            )
