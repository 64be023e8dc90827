"""Partial dependence and individual conditional expectation curves.

The treatment-effect variants plot the counterfactual difference (ITE) at each
grid value instead of the raw prediction, which is what makes these curves
usable for causal sensitivity analysis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import BcfFit, FitResult

__all__ = [
    "CurveSet",
    "ice_curves",
    "pdp_curve",
    "ice_ite_curves",
    "pdp_cate_curve",
    "subsample_grid",
]


@dataclass(frozen=True)
class CurveSet:
    """ICE curves (one row per individual) over a sorted grid, plus their average."""

    S: int
    grid: np.ndarray
    ice: np.ndarray
    pdp: np.ndarray
    individuals: np.ndarray | None = None  # row ids when subsampled for display
    band_lo: np.ndarray | None = None
    band_hi: np.ndarray | None = None

    def __post_init__(self):
        if np.any(np.diff(self.grid) < 0):
            raise ValueError("grid must be sorted ascending")
        if self.ice.shape != (self.ice.shape[0], self.grid.size):
            raise ValueError("ice shape does not match grid")
        if self.pdp.shape != self.grid.shape:
            raise ValueError("pdp shape does not match grid")

    @property
    def n_individuals(self) -> int:
        return self.ice.shape[0]

    def to_rows(self) -> list[tuple]:
        """Flat (grid_value, series_id, value) triples; the average is series 'pdp'."""
        ids = (
            self.individuals
            if self.individuals is not None
            else np.arange(self.ice.shape[0])
        )
        rows = []
        for g, gv in enumerate(self.grid):
            rows.append((float(gv), "pdp", float(self.pdp[g])))
            for i in range(self.ice.shape[0]):
                rows.append((float(gv), str(int(ids[i])), float(self.ice[i, g])))
        return rows

    def to_json_dict(self) -> dict:
        d = {
            "variable": int(self.S),
            "grid": self.grid.tolist(),
            "pdp": self.pdp.tolist(),
            "ice": self.ice.tolist(),
        }
        if self.individuals is not None:
            d["individuals"] = self.individuals.tolist()
        if self.band_lo is not None:
            d["band_lo"] = self.band_lo.tolist()
            d["band_hi"] = self.band_hi.tolist()
        return d


def _resolve_grid(X, S, grid):
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    if not 0 <= S < p:
        raise ValueError("S out of range")
    if grid is None:
        grid = np.sort(X[:, S])  # all observed values, duplicates retained
    else:
        grid = np.sort(np.asarray(grid, dtype=np.float64))
    return X, grid


def ice_curves(predict_fn, X, S: int, grid=None) -> CurveSet:
    """One curve per individual: its own covariates, variable S swept over the grid.

    predict_fn maps a covariate matrix to a vector of predictions. The PDP is
    the pointwise mean of the ICE curves, exactly.
    """
    X, grid = _resolve_grid(X, S, grid)
    n = X.shape[0]
    ice = np.empty((n, grid.size))
    for i in range(n):
        Xi = np.tile(X[i], (grid.size, 1))
        Xi[:, S] = grid
        ice[i] = predict_fn(Xi)
    return CurveSet(S=S, grid=grid, ice=ice, pdp=ice.mean(axis=0))


def pdp_curve(predict_fn, X, S: int, grid=None) -> np.ndarray:
    """Partial dependence by the direct definition: average prediction per grid value.

    Loops grid-first over full-population copies, independently of ice_curves;
    the two agree to floating-point accuracy.
    """
    X, grid = _resolve_grid(X, S, grid)
    out = np.empty(grid.size)
    for g in range(grid.size):
        Xg = X.copy()
        Xg[:, S] = grid[g]
        out[g] = float(np.mean(predict_fn(Xg)))
    return out


def _ite_predict_fn(fit, draw_stride: int = 1):
    """Posterior-mean ITE as a function of a design matrix."""
    if isinstance(fit, BcfFit):
        draws = fit.draws_alpha if draw_stride <= 1 else fit.draws_alpha.subset(draw_stride)
        scale = fit.scaler.scale

        def fn(Xm):
            return draws.eval_mean(np.ascontiguousarray(Xm)) * scale

        return fn
    if fit.treatment_col is None:
        raise ValueError("model has no treatment input")
    draws = fit.draws if draw_stride <= 1 else fit.draws.subset(draw_stride)
    col = fit.treatment_col
    scale = fit.scaler.scale

    def fn(Xm):
        d = draws.eval_diff_draws(np.ascontiguousarray(Xm), col, 1.0, 0.0)
        return d.mean(axis=0) * scale

    return fn


def ice_ite_curves(fit, X, S: int, grid=None, draw_stride: int = 1, bands: bool = False, level: float = 0.95) -> CurveSet:
    """ICE curves of the individual treatment effect along variable S.

    fit is a FitResult whose design included the treatment, or a BcfFit; X is
    the matching design matrix. With bands=True the PDP gets per-grid-point
    credible bands from per-draw averaging.
    """
    fn = _ite_predict_fn(fit, draw_stride)
    cs = ice_curves(fn, X, S, grid)
    if not bands:
        return cs
    X2, grid2 = _resolve_grid(X, S, cs.grid)
    lo = np.empty(grid2.size)
    hi = np.empty(grid2.size)
    tail = (1.0 - level) / 2.0
    if isinstance(fit, BcfFit):
        draws = fit.draws_alpha if draw_stride <= 1 else fit.draws_alpha.subset(draw_stride)
        scale = fit.scaler.scale
        per_draw = lambda Xg: draws.eval_draws(np.ascontiguousarray(Xg)) * scale
    else:
        draws = fit.draws if draw_stride <= 1 else fit.draws.subset(draw_stride)
        scale = fit.scaler.scale
        col = fit.treatment_col
        per_draw = lambda Xg: draws.eval_diff_draws(np.ascontiguousarray(Xg), col, 1.0, 0.0) * scale
    for g in range(grid2.size):
        Xg = X2.copy()
        Xg[:, S] = grid2[g]
        cate_g = per_draw(Xg).mean(axis=1)
        lo[g], hi[g] = np.quantile(cate_g, [tail, 1.0 - tail])
    return CurveSet(
        S=cs.S, grid=cs.grid, ice=cs.ice, pdp=cs.pdp,
        individuals=cs.individuals, band_lo=lo, band_hi=hi,
    )


def pdp_cate_curve(fit, X, S: int, grid=None, draw_stride: int = 1) -> np.ndarray:
    """Average treatment effect per grid value, by the direct definition."""
    fn = _ite_predict_fn(fit, draw_stride)
    return pdp_curve(fn, X, S, grid)


def subsample_grid(
    curves: CurveSet,
    max_grid: int | None = None,
    max_individuals: int | None = None,
    rng: np.random.Generator | None = None,
) -> CurveSet:
    """Thin a CurveSet for display: fewer grid points, fewer plotted individuals.

    Grid points are taken at evenly spaced index quantiles; individuals are a
    seeded random subset. The PDP keeps its full-population averaging at the
    surviving grid points.
    """
    if (max_grid is not None and max_grid < 1) or (
        max_individuals is not None and max_individuals < 1
    ):
        raise ValueError("limits must be >= 1")
    g_idx = np.arange(curves.grid.size)
    if max_grid is not None and max_grid < curves.grid.size:
        g_idx = np.unique(
            np.round(np.linspace(0, curves.grid.size - 1, max_grid)).astype(np.intp)
        )
    n = curves.ice.shape[0]
    i_idx = (
        curves.individuals
        if curves.individuals is not None
        else np.arange(n)
    )
    rows = np.arange(n)
    if max_individuals is not None and max_individuals < n:
        rng = np.random.default_rng(0) if rng is None else rng
        rows = np.sort(rng.choice(n, size=max_individuals, replace=False))
    return CurveSet(
        S=curves.S,
        grid=curves.grid[g_idx],
        ice=curves.ice[np.ix_(rows, g_idx)],
        pdp=curves.pdp[g_idx],
        individuals=np.asarray(i_idx)[rows],
        band_lo=None if curves.band_lo is None else curves.band_lo[g_idx],
        band_hi=None if curves.band_hi is None else curves.band_hi[g_idx],
    )
