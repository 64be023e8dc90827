"""Dataset validation, response scaling, split candidates, CSV ingestion."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from treecause.data import (
    DataError,
    Dataset,
    ResponseScaler,
    SplitCandidates,
    build_split_candidates,
    load_csv,
    read_table,
    standardize_response,
)


class TestDataset:
    def test_basic_fields(self):
        d = Dataset(y=[1.0, 2.0, 3.0], X=[[1.0], [2.0], [3.0]], z=[0, 1, 0])
        assert d.n == 3 and d.p == 1
        assert d.column_names == ("x1",)
        assert d.z.dtype == np.float64

    def test_rejects_mismatched_rows(self):
        with pytest.raises(DataError):
            Dataset(y=[1.0, 2.0], X=[[1.0], [2.0], [3.0]])

    def test_rejects_nonbinary_treatment(self):
        with pytest.raises(DataError, match="binary"):
            Dataset(y=[1.0, 2.0], X=[[1.0], [2.0]], z=[0.0, 0.5])

    def test_rejects_single_class_treatment(self):
        with pytest.raises(DataError, match="both classes"):
            Dataset(y=[1.0, 2.0], X=[[1.0], [2.0]], z=[1.0, 1.0])

    def test_rejects_nonfinite(self):
        with pytest.raises(DataError):
            Dataset(y=[1.0, np.nan], X=[[1.0], [2.0]])
        with pytest.raises(DataError):
            Dataset(y=[1.0, 2.0], X=[[1.0], [np.inf]])

    def test_rejects_bad_names(self):
        with pytest.raises(DataError, match="column_names"):
            Dataset(y=[1.0, 2.0], X=[[1.0, 2.0], [2.0, 3.0]], column_names=("a",))


class TestResponseScaler:
    def test_maps_extremes_to_half_unit(self):
        y = np.array([3.0, 7.0, 5.0])
        scaled, scaler = standardize_response(y)
        assert scaled.min() == -0.5 and scaled.max() == 0.5
        assert scaler.scale == 4.0

    def test_degenerate_response_rejected(self):
        with pytest.raises(DataError):
            standardize_response([2.0, 2.0, 2.0])

    def test_dict_round_trip(self):
        s = ResponseScaler(-1.5, 2.5)
        assert ResponseScaler.from_dict(s.to_dict()) == s

    @given(
        st.floats(-1e6, 1e6),
        st.floats(1e-3, 1e6),
        st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20),
    )
    def test_transform_inverse_round_trip(self, lo, width, vals):
        s = ResponseScaler(lo, lo + width)
        v = np.asarray(vals)
        back = s.inverse(s.transform(v))
        assert np.allclose(back, v, rtol=1e-9, atol=1e-9 * (abs(lo) + width))

    def test_identity_scaler_is_unit(self):
        s = ResponseScaler.identity()
        v = np.array([-0.3, 0.0, 0.4])
        assert np.array_equal(s.transform(v), v)
        assert s.scale == 1.0


class TestSplitCandidates:
    def test_midpoints_of_small_distinct_sets(self):
        X = np.array([[0.0], [1.0], [3.0], [1.0]])
        c = build_split_candidates(X, max_cuts=100)
        assert np.array_equal(c.per_var[0], [0.5, 2.0])

    def test_quantile_path_caps_count(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(500, 2))
        c = build_split_candidates(X, max_cuts=10)
        assert all(len(cc) <= 10 for cc in c.per_var)

    def test_constant_column_gets_no_candidates(self):
        X = np.array([[1.0, 0.0], [1.0, 2.0], [1.0, 5.0]])
        c = build_split_candidates(X)
        assert c.per_var[0].size == 0
        assert c.counts().tolist() == [0, 2]

    def test_flat_view_matches_per_var(self):
        X = np.array([[0.0, 9.0], [1.0, 8.0], [2.0, 7.0]])
        c = build_split_candidates(X)
        assert np.array_equal(
            c.flat_values, np.concatenate([c.per_var[0], c.per_var[1]])
        )
        assert c.offsets.tolist() == [0, 2, 4]

    def test_rejects_unsorted(self):
        with pytest.raises(DataError):
            SplitCandidates((np.array([1.0, 0.5]),))

    @given(
        st.lists(
            st.floats(-100.0, 100.0), min_size=2, max_size=60
        ),
        st.integers(1, 30),
    )
    def test_candidates_strictly_interior(self, vals, max_cuts):
        col = np.asarray(vals)
        c = build_split_candidates(col[:, None], max_cuts=max_cuts)
        cc = c.per_var[0]
        if cc.size:
            assert cc.min() > col.min() and cc.max() < col.max()
            assert np.all(np.diff(cc) > 0)
            # every candidate splits the rows into two nonempty groups
            for cut in cc:
                assert np.any(col <= cut) and np.any(col > cut)


class TestCsv:
    def test_read_table_skips_comments(self, tmp_path):
        f = tmp_path / "t.csv"
        f.write_text("# meta\na,b\n1,2\n3,4\n")
        header, mat = read_table(f)
        assert header == ("a", "b")
        assert mat.tolist() == [[1.0, 2.0], [3.0, 4.0]]

    def test_load_csv_splits_roles(self, tmp_path):
        f = tmp_path / "t.csv"
        f.write_text("x1,z,y\n0.1,0,1.5\n0.2,1,2.5\n0.3,0,3.5\n")
        d = load_csv(f, response_col="y", treatment_col="z")
        assert d.column_names == ("x1",)
        assert d.y.tolist() == [1.5, 2.5, 3.5]
        assert d.z.tolist() == [0.0, 1.0, 0.0]

    def test_missing_columns_rejected(self, tmp_path):
        f = tmp_path / "t.csv"
        f.write_text("a,b\n1,2\n3,4\n")
        with pytest.raises(DataError, match="response"):
            load_csv(f, response_col="y")

    def test_ragged_row_rejected(self, tmp_path):
        f = tmp_path / "t.csv"
        f.write_text("a,b\n1,2\n3\n")
        with pytest.raises(DataError, match="row 2"):
            read_table(f)

    def test_non_numeric_cell_rejected(self, tmp_path):
        f = tmp_path / "t.csv"
        f.write_text("a,b\n1,2\nx,4\n")
        with pytest.raises(DataError, match="non-numeric"):
            read_table(f)
