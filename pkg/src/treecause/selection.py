"""Variable selection: posterior inclusion probabilities and quality metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SelectionReport",
    "compute_pip",
    "selection_metrics",
    "ps_usage",
    "dirichlet_summary",
    "make_report",
]


@dataclass(frozen=True)
class SelectionReport:
    """PIP-based selection with optional split-probability summaries and scores."""

    pip: np.ndarray
    selected: np.ndarray
    s_summary: list | None = None  # per-variable (mean, lo, hi)
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    precision_defined: bool = True
    recall_defined: bool = True

    def to_dict(self) -> dict:
        d = {
            "pip": self.pip.tolist(),
            "selected": self.selected.astype(bool).tolist(),
        }
        if self.s_summary is not None:
            d["s_summary"] = [
                {"mean": m, "lo": lo, "hi": hi} for (m, lo, hi) in self.s_summary
            ]
        if self.f1 is not None:
            d.update(
                precision=self.precision,
                recall=self.recall,
                f1=self.f1,
                precision_defined=self.precision_defined,
                recall_defined=self.recall_defined,
            )
        return d


def compute_pip(usage: np.ndarray) -> np.ndarray:
    """Fraction of draws in which each variable appears in at least one split."""
    usage = np.asarray(usage)
    if usage.ndim != 2 or usage.shape[0] < 1:
        raise ValueError("usage must be a draws x variables matrix")
    return usage.mean(axis=0).astype(np.float64)


def selection_metrics(selected, truth_relevant):
    """(precision, recall, f1); undefined ratios reported as 0 with a flag.

    Returns (precision, recall, f1, precision_defined, recall_defined).
    """
    sel = np.asarray(selected, dtype=bool)
    rel = np.asarray(truth_relevant, dtype=bool)
    if sel.shape != rel.shape:
        raise ValueError("length mismatch")
    tp = int(np.sum(sel & rel))
    fp = int(np.sum(sel & ~rel))
    fn = int(np.sum(~sel & rel))
    p_def = (tp + fp) > 0
    r_def = (tp + fn) > 0
    precision = tp / (tp + fp) if p_def else 0.0
    recall = tp / (tp + fn) if r_def else 0.0
    f1 = (
        2.0 * precision * recall / (precision + recall)
        if (precision + recall) > 0
        else 0.0
    )
    return precision, recall, f1, p_def, r_def


def ps_usage(flags) -> float:
    """Percentage of replications whose fit selected the propensity column."""
    flags = np.asarray(flags, dtype=bool)
    if flags.size == 0:
        raise ValueError("no replications")
    return float(flags.mean() * 100.0)


def dirichlet_summary(s_draws: np.ndarray, level: float = 0.95) -> list:
    """Per-variable (mean, lo, hi) of split-probability draws."""
    s_draws = np.asarray(s_draws, dtype=np.float64)
    tail = (1.0 - level) / 2.0
    mean = s_draws.mean(axis=0)
    lo = np.quantile(s_draws, tail, axis=0)
    hi = np.quantile(s_draws, 1.0 - tail, axis=0)
    return [(float(mean[j]), float(lo[j]), float(hi[j])) for j in range(s_draws.shape[1])]


def make_report(usage, truth_relevant=None, s_draws=None) -> SelectionReport:
    """Assemble PIPs, the >0.5 selection rule, and scores against a truth set."""
    pip = compute_pip(usage)
    selected = pip > 0.5  # strict: ties at exactly 0.5 are not selected
    kw = {}
    if truth_relevant is not None:
        precision, recall, f1, p_def, r_def = selection_metrics(selected, truth_relevant)
        kw = dict(
            precision=precision, recall=recall, f1=f1,
            precision_defined=p_def, recall_defined=r_def,
        )
    s_summary = None if s_draws is None else dirichlet_summary(s_draws)
    return SelectionReport(pip=pip, selected=selected, s_summary=s_summary, **kw)
