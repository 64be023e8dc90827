"""Dataset container, response scaling, split-candidate grids, CSV ingestion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DataError",
    "Dataset",
    "ResponseScaler",
    "SplitCandidates",
    "standardize_response",
    "build_split_candidates",
    "load_csv",
]


class DataError(ValueError):
    """Raised for invalid or degenerate input data."""


def _as_float_vector(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise DataError(f"{name} must be one-dimensional")
    return arr


@dataclass(frozen=True)
class Dataset:
    """A regression / causal sample: response y, covariates X, optional binary treatment z.

    Immutable after construction; safe to share across threads.
    """

    y: np.ndarray
    X: np.ndarray
    z: np.ndarray | None = None
    column_names: tuple[str, ...] = ()

    def __post_init__(self):
        y = _as_float_vector(self.y, "y")
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise DataError("X must be a 2-d matrix")
        n = y.shape[0]
        if n < 2:
            raise DataError("need at least 2 observations")
        if X.shape[0] != n:
            raise DataError(f"X has {X.shape[0]} rows but y has {n}")
        if not np.all(np.isfinite(X)):
            raise DataError("X contains non-finite values")
        if not np.all(np.isfinite(y)):
            raise DataError("y contains non-finite values")
        names = tuple(self.column_names) if self.column_names else tuple(
            f"x{j + 1}" for j in range(X.shape[1])
        )
        if len(names) != X.shape[1]:
            raise DataError("column_names length must match X columns")
        z = self.z
        if z is not None:
            z = _as_float_vector(z, "z")
            if z.shape[0] != n:
                raise DataError("z length must match y")
            vals = np.unique(z)
            if not np.all(np.isin(vals, (0.0, 1.0))):
                raise DataError("treatment must be binary")
            if vals.size < 2:
                raise DataError("treatment must contain both classes")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class ResponseScaler:
    """Affine map sending [y_min, y_max] onto [-0.5, 0.5]."""

    y_min: float
    y_max: float

    def __post_init__(self):
        if not (self.y_max > self.y_min):
            raise DataError("degenerate response: max must exceed min")

    @property
    def scale(self) -> float:
        """Width of the original range; multiplies scaled-space sigmas back to data units."""
        return self.y_max - self.y_min

    def transform(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        return (v - self.y_min) / self.scale - 0.5

    def inverse(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        return (u + 0.5) * self.scale + self.y_min

    def to_dict(self) -> dict:
        return {"y_min": float(self.y_min), "y_max": float(self.y_max)}

    @classmethod
    def from_dict(cls, d: dict) -> "ResponseScaler":
        return cls(float(d["y_min"]), float(d["y_max"]))

    @classmethod
    def identity(cls) -> "ResponseScaler":
        """Unit scaler for responses already on the centered scale (probit latents)."""
        return cls(-0.5, 0.5)


def standardize_response(y) -> tuple[np.ndarray, ResponseScaler]:
    """Scale a response vector onto [-0.5, 0.5] and return the inverse map."""
    y = _as_float_vector(y, "y")
    if y.shape[0] < 2:
        raise DataError("need at least 2 observations")
    lo, hi = float(np.min(y)), float(np.max(y))
    if not hi > lo:
        raise DataError("degenerate response")
    scaler = ResponseScaler(lo, hi)
    return scaler.transform(y), scaler


@dataclass(frozen=True)
class SplitCandidates:
    """Per-variable sorted candidate cutpoints, plus a flat view for hot loops."""

    per_var: tuple[np.ndarray, ...]
    flat_values: np.ndarray = field(repr=False, default=None)
    offsets: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        per_var = tuple(np.asarray(c, dtype=np.float64) for c in self.per_var)
        for c in per_var:
            if c.size > 1 and not np.all(np.diff(c) > 0):
                raise DataError("candidate cutpoints must be strictly increasing")
        offsets = np.zeros(len(per_var) + 1, dtype=np.int64)
        for j, c in enumerate(per_var):
            offsets[j + 1] = offsets[j] + c.size
        flat = (
            np.concatenate(per_var)
            if offsets[-1] > 0
            else np.empty(0, dtype=np.float64)
        )
        object.__setattr__(self, "per_var", per_var)
        object.__setattr__(self, "flat_values", flat)
        object.__setattr__(self, "offsets", offsets)

    @property
    def p(self) -> int:
        return len(self.per_var)

    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)


def build_split_candidates(X, max_cuts: int = 100) -> SplitCandidates:
    """Candidate cutpoints per variable.

    Midpoints of consecutive distinct observed values when there are at most
    max_cuts+1 distinct values; otherwise midpoints of max_cuts+1 evenly spaced
    quantiles, deduplicated. Every candidate lies strictly between the observed
    min and max, so any candidate split leaves both sides nonempty.
    """
    if max_cuts < 1:
        raise DataError("max_cuts must be >= 1")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    cand = []
    for j in range(X.shape[1]):
        col = X[:, j]
        u = np.unique(col)
        if u.size < 2:
            cand.append(np.empty(0, dtype=np.float64))
            continue
        if u.size <= max_cuts + 1:
            mids = 0.5 * (u[:-1] + u[1:])
        else:
            qs = np.quantile(col, np.linspace(0.0, 1.0, max_cuts + 1))
            mids = 0.5 * (qs[:-1] + qs[1:])
            mids = np.unique(mids)
        mids = mids[(mids > u[0]) & (mids < u[-1])]
        cand.append(mids)
    return SplitCandidates(tuple(cand))


def _parse_cell(text: str, row: int, col_name: str) -> float:
    s = text.strip()
    if s == "":
        raise DataError(f"empty cell at row {row}, column '{col_name}'")
    try:
        v = float(s)
    except ValueError:
        raise DataError(
            f"non-numeric value '{s}' at row {row}, column '{col_name}'"
        ) from None
    if not np.isfinite(v):
        raise DataError(f"non-finite value at row {row}, column '{col_name}'")
    return v


def read_table(path) -> tuple[tuple, np.ndarray]:
    """Read a headered numeric CSV as (column names, float matrix).

    Comment lines starting with '#' are skipped; row indices in error messages
    are 1-based data rows.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n").rstrip("\r") for ln in fh]
    lines = [ln for ln in lines if ln.strip() != "" and not ln.startswith("#")]
    if not lines:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in lines[0].split(",")]
    n_cols = len(header)
    rows = []
    for i, ln in enumerate(lines[1:], start=1):
        cells = ln.split(",")
        if len(cells) != n_cols:
            raise DataError(
                f"{path}: row {i} has {len(cells)} cells, expected {n_cols}"
            )
        rows.append([_parse_cell(c, i, header[j]) for j, c in enumerate(cells)])
    if len(rows) < 2:
        raise DataError(f"{path}: need at least 2 data rows")
    return tuple(header), np.asarray(rows, dtype=np.float64)


def load_csv(path, response_col: str, treatment_col: str | None = None) -> Dataset:
    """Read a headered numeric CSV into a Dataset.

    Columns other than the response and (optional) treatment become covariates,
    in file order.
    """
    header, mat = read_table(path)
    header = list(header)
    if response_col not in header:
        raise DataError(f"{path}: missing response column '{response_col}'")
    if treatment_col is not None and treatment_col not in header:
        raise DataError(f"{path}: missing treatment column '{treatment_col}'")
    y = mat[:, header.index(response_col)]
    z = mat[:, header.index(treatment_col)] if treatment_col is not None else None
    keep = [
        j for j, h in enumerate(header) if h != response_col and h != treatment_col
    ]
    X = mat[:, keep]
    names = tuple(header[j] for j in keep)
    return Dataset(y=y, X=X, z=z, column_names=names)
