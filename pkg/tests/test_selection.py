"""Posterior inclusion probabilities and selection scoring."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from treecause.selection import (
    compute_pip,
    dirichlet_summary,
    make_report,
    ps_usage,
    selection_metrics,
)


class TestPip:
    def test_counts_usage_fraction(self):
        usage = np.array([[1, 0, 1], [1, 0, 0], [1, 1, 0], [1, 0, 0]], dtype=bool)
        assert compute_pip(usage).tolist() == [1.0, 0.25, 0.25]

    def test_rejects_wrong_shape(self):
        with pytest.raises(ValueError):
            compute_pip(np.zeros(4, dtype=bool))

    @given(st.integers(1, 40), st.integers(1, 8), st.integers(0, 10_000))
    def test_bounds(self, d, p, seed):
        usage = np.random.default_rng(seed).random((d, p)) < 0.5
        pip = compute_pip(usage)
        assert np.all((0.0 <= pip) & (pip <= 1.0))


class TestMetrics:
    def test_perfect_selection(self):
        pr, rc, f1, pd, rd = selection_metrics([True, False, True], [True, False, True])
        assert (pr, rc, f1) == (1.0, 1.0, 1.0)
        assert pd and rd

    def test_hand_computed_case(self):
        # tp=1, fp=1, fn=1 -> precision=recall=f1=0.5
        pr, rc, f1, *_ = selection_metrics(
            [True, True, False, False], [True, False, True, False]
        )
        assert (pr, rc, f1) == (0.5, 0.5, 0.5)

    def test_nothing_selected_flags_undefined_precision(self):
        pr, rc, f1, p_def, r_def = selection_metrics([False, False], [True, False])
        assert (pr, rc, f1) == (0.0, 0.0, 0.0)
        assert not p_def and r_def

    def test_ps_usage_percentage(self):
        assert ps_usage([True, True, False, False]) == 50.0
        with pytest.raises(ValueError):
            ps_usage([])


class TestReport:
    def test_threshold_strictly_above_half(self):
        usage = np.array([[1, 1], [1, 0]], dtype=bool)  # pips 1.0 and 0.5
        rep = make_report(usage)
        assert rep.selected.tolist() == [True, False]

    def test_scored_report_round_trip(self):
        usage = np.array([[1, 0, 1], [1, 0, 1], [1, 0, 0]], dtype=bool)
        s_draws = np.array([[0.7, 0.2, 0.1], [0.6, 0.3, 0.1]])
        rep = make_report(usage, truth_relevant=[True, False, True], s_draws=s_draws)
        d = rep.to_dict()
        assert d["selected"] == [True, False, True]
        assert d["f1"] == 1.0
        assert len(d["s_summary"]) == 3
        assert d["s_summary"][0]["mean"] == pytest.approx(0.65)

    def test_dirichlet_summary_ordering(self):
        rng = np.random.default_rng(1)
        s = rng.dirichlet([2.0, 1.0, 0.5], size=500)
        for mean, lo, hi in dirichlet_summary(s):
            assert lo <= mean <= hi
