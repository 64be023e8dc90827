"""Prior and hyperprior parameterizations and their calibration.

Covers the tree-structure prior, leaf-value prior, error-variance prior, the
sparsity-inducing Dirichlet prior over split variables, and the treatment-forest
modifications used by the causal-forest model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .data import SplitCandidates

__all__ = [
    "TreePriorParams",
    "LeafPriorParams",
    "SigmaPriorParams",
    "SplitVarPrior",
    "BcfPriorParams",
    "split_probability",
    "compute_sigma_mu",
    "calibrate_lambda",
    "bcf_eta_from_alpha0",
    "sigma_hat_ols",
    "legal_cut_counts",
    "log_tree_prior",
]


@dataclass(frozen=True)
class TreePriorParams:
    """Depth-penalized split prior: P(split at depth d) = eta * (1 + d)^(-beta)."""

    eta: float = 0.95
    beta: float = 2.0

    def __post_init__(self):
        if not (0.0 < self.eta < 1.0):
            raise ValueError("eta must lie in (0, 1)")
        if self.beta < 0.0:
            raise ValueError("beta must be >= 0")


def split_probability(depth: int, params: TreePriorParams) -> float:
    if depth < 0:
        raise ValueError("depth must be >= 0")
    return params.eta * (1.0 + depth) ** (-params.beta)


def compute_sigma_mu(k: float, m: int) -> float:
    """Leaf prior sd shrinking each tree's contribution: 0.5 / (k * sqrt(m))."""
    if k <= 0 or m < 1:
        raise ValueError("need k > 0 and m >= 1")
    return 0.5 / (k * math.sqrt(m))


@dataclass(frozen=True)
class LeafPriorParams:
    """Leaf-value prior N(prior_mean, sigma_mu^2).

    half_range is the half-width of the response scale the forest must span:
    0.5 for the standardized regression response, 3.0 on the latent probit scale.
    """

    k: float = 2.0
    m: int = 200
    prior_mean: float = 0.0
    half_range: float = 0.5

    @property
    def sigma_mu(self) -> float:
        return self.half_range / (self.k * math.sqrt(self.m))


def calibrate_lambda(sigma_hat: float, nu: float, q: float) -> float:
    """lambda such that P(sigma < sigma_hat) = q under sigma^2 ~ nu*lambda/chi2_nu."""
    if sigma_hat <= 0 or nu <= 0 or not (0.0 < q < 1.0):
        raise ValueError("need sigma_hat > 0, nu > 0, q in (0, 1)")
    return sigma_hat**2 * stats.chi2.ppf(1.0 - q, nu) / nu


@dataclass(frozen=True)
class SigmaPriorParams:
    nu: float
    q: float
    lam: float
    sigma_hat: float

    @classmethod
    def calibrated(cls, sigma_hat: float, nu: float = 3.0, q: float = 0.90):
        return cls(nu=nu, q=q, lam=calibrate_lambda(sigma_hat, nu, q), sigma_hat=sigma_hat)


@dataclass
class SplitVarPrior:
    """Split-variable distribution: fixed uniform, or Dirichlet with concentration theta.

    theta / (theta + rho) ~ Beta(a, b) is the sparsity hyperprior; rho defaults to P.
    """

    kind: str = "uniform"
    s: np.ndarray | None = None
    theta: float | None = None
    a: float = 0.5
    b: float = 1.0
    rho: float | None = None

    def __post_init__(self):
        if self.kind not in ("uniform", "dirichlet"):
            raise ValueError("kind must be 'uniform' or 'dirichlet'")

    def initialized(self, p: int) -> "SplitVarPrior":
        s = np.full(p, 1.0 / p) if self.s is None else np.asarray(self.s, dtype=np.float64)
        if abs(s.sum() - 1.0) > 1e-12:
            raise ValueError("s must sum to 1")
        theta = float(p) if self.theta is None else float(self.theta)
        rho = float(p) if self.rho is None else float(self.rho)
        return SplitVarPrior(kind=self.kind, s=s, theta=theta, a=self.a, b=self.b, rho=rho)


def bcf_eta_from_alpha0(alpha0: float, L_alpha: int) -> float:
    """eta with (1 - eta)^L_alpha = alpha0: prior mass alpha0 on an all-root treatment forest."""
    if not (0.0 < alpha0 < 1.0) or L_alpha < 1:
        raise ValueError("need alpha0 in (0, 1) and L_alpha >= 1")
    return 1.0 - alpha0 ** (1.0 / L_alpha)


@dataclass(frozen=True)
class BcfPriorParams:
    """Treatment-forest prior: few small trees, aggressively depth-penalized, scaled leaves."""

    alpha0: float = 0.5
    L_alpha: int = 50
    beta_alpha: float = 3.0
    nu0: float = 0.25

    @property
    def eta_alpha(self) -> float:
        return bcf_eta_from_alpha0(self.alpha0, self.L_alpha)


def sigma_hat_ols(X: np.ndarray, y_scaled: np.ndarray) -> float:
    """Residual sd of least squares of the scaled response on [1, X].

    Falls back to sd(y_scaled) when the design leaves no residual degrees of freedom.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y_scaled, dtype=np.float64)
    n = y.shape[0]
    A = np.column_stack([np.ones(n), X])
    coef, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    dof = n - rank
    floor = max(1e-6 * float(np.std(y)), 1e-12)
    if dof < 1:
        return max(float(np.std(y)), floor)
    resid = y - A @ coef
    return max(float(np.sqrt(resid @ resid / dof)), floor)


def legal_cut_counts(
    X: np.ndarray, rows: np.ndarray, candidates: SplitCandidates
) -> np.ndarray:
    """Per variable: number of candidate cutpoints strictly inside the rows' value range.

    A cut c is legal at a node iff min < c < max over the node's rows, which is
    exactly the condition that both children receive at least one row.
    """
    counts = np.zeros(candidates.p, dtype=np.int64)
    for v in range(candidates.p):
        c = candidates.per_var[v]
        if c.size == 0:
            continue
        vals = X[rows, v]
        mn, mx = vals.min(), vals.max()
        lo = np.searchsorted(c, mn, side="right")
        hi = np.searchsorted(c, mx, side="left")
        counts[v] = max(hi - lo, 0)
    return counts


def log_tree_prior(tree, params: TreePriorParams, candidates: SplitCandidates, s=None, X=None):
    """Log prior probability of a tree's structure under the generative split process.

    At each node the process first checks which variables still admit a legal
    cut for the node's data; a node with none is terminal with probability one,
    otherwise it splits with probability eta(1+d)^(-beta), picks a variable from
    s restricted (and renormalized) to the legal ones, and a cutpoint uniformly
    among that variable's legal cuts. Probabilities over all data-valid trees
    therefore sum to one.
    """
    from .trees import Internal, Leaf  # local import to avoid cycle

    if X is None:
        raise ValueError("need the training matrix X to assess cut legality")
    X = np.asarray(X, dtype=np.float64)
    p = candidates.p
    s = np.full(p, 1.0 / p) if s is None else np.asarray(s, dtype=np.float64)

    def go(nd, rows, d):
        counts = legal_cut_counts(X, rows, candidates)
        legal = counts > 0
        sp = split_probability(d, params)
        if isinstance(nd, Leaf):
            return math.log1p(-sp) if legal.any() else 0.0
        if candidates.per_var[nd.var].size == 0:
            raise ValueError(f"split on variable {nd.var} with empty candidate list")
        if counts[nd.var] <= 0:
            raise ValueError("tree splits where no legal cut exists for the data")
        sum_s = float(s[legal].sum())
        if sum_s <= 0.0 or s[nd.var] <= 0.0:
            raise ValueError("split variable has zero prior probability")
        term = (
            math.log(sp)
            + math.log(s[nd.var])
            - math.log(sum_s)
            - math.log(counts[nd.var])
        )
        go_left = rows[X[rows, nd.var] <= nd.cut]
        go_right = rows[X[rows, nd.var] > nd.cut]
        if go_left.size == 0 or go_right.size == 0:
            raise ValueError("tree routes no data to one child")
        return term + go(nd.left, go_left, d + 1) + go(nd.right, go_right, d + 1)

    return go(tree.root, np.arange(X.shape[0]), 0)
