"""Bayesian backfitting MCMC: integrated likelihood, tree moves, conjugate draws.

Two layers live here. The object-level functions (propose_move, draw_leaf_values,
...) operate on trees.Tree values and document the algorithm plainly; unit tests
exercise them directly. ChainState wraps the compiled heap-array kernel that
production fits run on; the two are cross-checked against each other and against
enumeration oracles in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, ndtr, ndtri

from . import _kernels
from .data import SplitCandidates
from .priors import TreePriorParams
from .trees import Forest, Internal, Leaf, Tree

__all__ = [
    "SamplerConfig",
    "integrated_log_likelihood",
    "mh_accept",
    "draw_leaf_values",
    "draw_sigma",
    "update_split_probabilities",
    "update_theta",
    "probit_latent_draw",
    "propose_move",
    "ChainState",
    "ForestDraws",
    "tree_from_heap",
    "heap_from_tree",
]

HEAP_CAPACITY = 2047  # full binary heap of depth 10
RANGE_CACHE_SLOTS = 511  # nodes at depth <= 8 keep cached legal-cut ranges


@dataclass(frozen=True)
class SamplerConfig:
    """Chain-length and move-mixture settings."""

    m: int = 200
    burn_in: int = 1000
    n_draws: int = 2000
    thinning: int = 1
    p_grow: float = 0.5
    p_prune: float = 0.3
    p_change: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.m < 1 or self.burn_in < 0 or self.n_draws < 1 or self.thinning < 1:
            raise ValueError("invalid chain lengths")
        if abs(self.p_grow + self.p_prune + self.p_change - 1.0) > 1e-12:
            raise ValueError("move probabilities must sum to 1")

    @classmethod
    def sparse(cls, **kw) -> "SamplerConfig":
        """Longer, heavily thinned preset used for sparse variable-selection runs."""
        kw.setdefault("burn_in", 5000)
        kw.setdefault("n_draws", 1000)
        kw.setdefault("thinning", 50)
        return cls(**kw)

    @property
    def total_sweeps(self) -> int:
        return self.burn_in + self.n_draws

    @property
    def kept_draws(self) -> int:
        """Post-burn-in sweeps are kept every thinning-th, so n_draws/thinning survive."""
        return self.n_draws // self.thinning


# ---------------------------------------------------------------------------
# closed-form pieces
# ---------------------------------------------------------------------------


def integrated_log_likelihood(stats, sigma: float, sigma_mu: float, prior_mean: float = 0.0) -> float:
    """Marginal log-likelihood of a leaf partition with leaf means integrated out.

    stats is a sequence of (n_i, ybar_i, sse_i) per leaf, where sse_i is the
    within-leaf sum of squared deviations from ybar_i.
    """
    n = np.asarray([t[0] for t in stats], dtype=np.float64)
    ybar = np.asarray([t[1] for t in stats], dtype=np.float64)
    sse = np.asarray([t[2] for t in stats], dtype=np.float64)
    if np.any(n < 1):
        raise ValueError("every leaf needs at least one observation")
    s2 = sigma * sigma
    m2 = sigma_mu * sigma_mu
    den = n * m2 + s2
    terms = (
        -0.5 * n * np.log(2.0 * np.pi * s2)
        + 0.5 * np.log(s2 / den)
        - sse / (2.0 * s2)
        - n * (ybar - prior_mean) ** 2 / (2.0 * den)
    )
    return float(terms.sum())


def mh_accept(log_ratio: float, rng: np.random.Generator) -> bool:
    """Accept with probability min{1, exp(log_ratio)}."""
    if log_ratio >= 0.0:
        return True
    return rng.random() < math.exp(log_ratio)


def draw_leaf_values(tree: Tree, n_i, ybar_i, sigma: float, sigma_mu: float, k: float, rng: np.random.Generator) -> Tree:
    """Conjugate Normal draw for every leaf, in preorder leaf order."""
    n_i = np.asarray(n_i, dtype=np.float64)
    ybar_i = np.asarray(ybar_i, dtype=np.float64)
    s2 = sigma * sigma
    m2 = sigma_mu * sigma_mu
    leaves = _preorder_leaves(tree.root)
    if len(leaves) != n_i.shape[0]:
        raise ValueError("stats length must match leaf count")
    for i, lf in enumerate(leaves):
        den = n_i[i] * m2 + s2
        mean = (m2 * n_i[i] * ybar_i[i] + s2 * k) / den
        sd = math.sqrt(s2 * m2 / den)
        lf.mu = mean + sd * rng.standard_normal()
    return tree


def draw_sigma(residuals, nu: float, lam: float, rng: np.random.Generator) -> float:
    """sigma with sigma^2 ~ (nu*lambda + sum e_i^2) / chi2_{nu + n}."""
    e = np.asarray(residuals, dtype=np.float64)
    n = e.shape[0]
    return math.sqrt((nu * lam + float(e @ e)) / rng.chisquare(nu + n))


def update_split_probabilities(counts, theta: float, rng: np.random.Generator) -> np.ndarray:
    """s ~ Dirichlet(theta/P + count_1, ..., theta/P + count_P)."""
    counts = np.asarray(counts, dtype=np.float64)
    p = counts.shape[0]
    return rng.dirichlet(theta / p + counts)


def update_theta(s, a: float, b: float, rho: float, grid=1000, rng: np.random.Generator | None = None) -> float:
    """Gridded draw from the concentration parameter's full conditional.

    With an integer grid size G the grid is even in lam = theta/(theta+rho);
    an explicit array is interpreted as theta values (with the change-of-
    variables Jacobian applied to the Beta prior on lam).
    """
    s = np.asarray(s, dtype=np.float64)
    p = s.size
    log_s_sum = float(np.sum(np.log(np.maximum(s, 1e-300))))
    if np.isscalar(grid):
        g = int(grid)
        lam = (np.arange(g) + 0.5) / g
        theta = rho * lam / (1.0 - lam)
        log_jac = np.zeros(g)
    else:
        theta = np.asarray(grid, dtype=np.float64)
        lam = theta / (theta + rho)
        log_jac = math.log(rho) - 2.0 * np.log(theta + rho)
    logw = (
        gammaln(theta)
        - p * gammaln(theta / p)
        + (theta / p - 1.0) * log_s_sum
        + (a - 1.0) * np.log(lam)
        + (b - 1.0) * np.log1p(-lam)
        + log_jac
    )
    logw -= logw.max()
    w = np.exp(logw)
    w /= w.sum()
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(w), u))
    return float(theta[min(idx, theta.size - 1)])


def probit_latent_draw(f, z, rng: np.random.Generator) -> np.ndarray:
    """latent_i ~ N(f_i, 1) truncated to (0, inf) if z_i = 1, (-inf, 0) if z_i = 0.

    Uses the Gaussian tail quantile directly, so extreme f stay finite.
    """
    f = np.asarray(f, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    u = 1.0 - rng.random(f.shape[0])
    tiny = 2.0**-53
    u = np.clip(u, tiny, 1.0 - tiny)
    out = np.empty_like(f)
    pos = z > 0.5
    # E ~ N(0,1) | E > -f : P(E > t) = u * Phi(f)
    out[pos] = f[pos] - ndtri(u[pos] * ndtr(f[pos]))
    # E ~ N(0,1) | E < -f : P(E < t) = u * Phi(-f)
    neg = ~pos
    out[neg] = f[neg] + ndtri(u[neg] * ndtr(-f[neg]))
    return out


# ---------------------------------------------------------------------------
# object-level tree moves
# ---------------------------------------------------------------------------


def _preorder_leaves(root) -> list[Leaf]:
    out = []

    def go(nd):
        if isinstance(nd, Leaf):
            out.append(nd)
        else:
            go(nd.left)
            go(nd.right)

    go(root)
    return out


def _clone(nd):
    if isinstance(nd, Leaf):
        return Leaf(nd.mu)
    return Internal(nd.var, nd.cut, _clone(nd.left), _clone(nd.right))


def _node_rows(root, X) -> dict[int, np.ndarray]:
    rows = {id(root): np.arange(X.shape[0])}

    def go(nd):
        if isinstance(nd, Internal):
            r = rows[id(nd)]
            mask = X[r, nd.var] <= nd.cut
            rows[id(nd.left)] = r[mask]
            rows[id(nd.right)] = r[~mask]
            go(nd.left)
            go(nd.right)

    go(root)
    return rows


def _legal_ranges(X, rows, candidates: SplitCandidates):
    """Per-variable (lo, hi) candidate index ranges strictly inside the rows' span."""
    out = []
    for v in range(candidates.p):
        c = candidates.per_var[v]
        if c.size == 0:
            out.append((0, 0))
            continue
        vals = X[rows, v]
        lo = int(np.searchsorted(c, vals.min(), side="right"))
        hi = int(np.searchsorted(c, vals.max(), side="left"))
        out.append((lo, max(hi, lo)))
    return out


def _depth_of(root, target) -> int:
    def go(nd, d):
        if nd is target:
            return d
        if isinstance(nd, Leaf):
            return -1
        r = go(nd.left, d + 1)
        if r >= 0:
            return r
        return go(nd.right, d + 1)

    return go(root, 0)


def propose_move(
    tree: Tree,
    candidates: SplitCandidates,
    s,
    move_probs,
    rng: np.random.Generator,
    X,
    kind: str | None = None,
):
    """One GROW/PRUNE/CHANGE proposal on a Tree.

    Returns (proposal, log_q_ratio, info) with log_q_ratio =
    log q(T | T*) - log q(T* | T), the term added to the posterior log-ratio in
    the acceptance probability. proposal is None when the sampled move dead-ends
    (no legal cutpoint), in which case the chain keeps the current tree.
    """
    X = np.asarray(X, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    pg, pp, pc = move_probs
    rows = _node_rows(tree.root, X)
    leaves, internals, prunable = [], [], []

    def collect(nd):
        if isinstance(nd, Leaf):
            leaves.append(nd)
        else:
            internals.append(nd)
            if isinstance(nd.left, Leaf) and isinstance(nd.right, Leaf):
                prunable.append(nd)
            collect(nd.left)
            collect(nd.right)

    collect(tree.root)

    if kind is None:
        if not internals:
            kind = "grow"
        else:
            u = rng.random()
            kind = "grow" if u < pg else ("prune" if u < pg + pp else "change")
    info = {"kind": kind}

    def ranges_sum(rr):
        return float(sum(s[v] for v, (lo, hi) in enumerate(rr) if hi > lo))

    def pick_var(rr, total):
        uu = rng.random() * total
        acc = 0.0
        v = -1
        for v2, (lo, hi) in enumerate(rr):
            if hi > lo:
                acc += s[v2]
                v = v2
                if uu < acc:
                    break
        return v

    p_g_cur = 1.0 if not internals else pg

    if kind == "grow":
        target = leaves[rng.integers(0, len(leaves))]
        r = rows[id(target)]
        rr = _legal_ranges(X, r, candidates)
        total = ranges_sum(rr)
        if total <= 0.0:
            return None, 0.0, info
        v = pick_var(rr, total)
        lo, hi = rr[v]
        c = candidates.per_var[v][lo + rng.integers(0, hi - lo)]
        new_root = _clone(tree.root)
        # locate the cloned counterpart by leaf order
        new_leaf = _preorder_leaves(new_root)[
            [i for i, lf in enumerate(_preorder_leaves(tree.root)) if lf is target][0]
        ]
        new_split = Internal(v, float(c), Leaf(target.mu), Leaf(target.mu))
        if new_leaf is new_root:
            proposal = Tree(new_split)
        else:
            _replace(new_root, new_leaf, new_split)
            proposal = Tree(new_root)
        n_prunable_new = len(prunable) + 1 - _parent_prunable(tree.root, target)
        log_q = (
            math.log(pp)
            - math.log(n_prunable_new)
            - math.log(p_g_cur)
            + math.log(len(leaves))
            - math.log(s[v])
            + math.log(total)
            + math.log(hi - lo)
        )
        info.update(var=v, cut=float(c))
        return proposal, log_q, info

    if kind == "prune":
        if not prunable:
            return None, 0.0, info
        target = prunable[rng.integers(0, len(prunable))]
        r = rows[id(target)]
        rr = _legal_ranges(X, r, candidates)
        total = ranges_sum(rr)
        lo, hi = rr[target.var]
        new_root = _clone(tree.root)
        idx = [i for i, nd in enumerate(_preorder_internal(tree.root)) if nd is target][0]
        new_target = _preorder_internal(new_root)[idx] if _preorder_internal(new_root) else None
        merged = Leaf(0.0)
        if new_target is new_root or new_root is None or tree.root is target:
            proposal = Tree(merged)
        else:
            _replace(new_root, new_target, merged)
            proposal = Tree(new_root)
        p_g_new = 1.0 if len(internals) == 1 else pg
        log_q = (
            math.log(p_g_new)
            - math.log(len(leaves) - 1)
            + math.log(s[target.var])
            - math.log(total)
            - math.log(hi - lo)
            - math.log(pp)
            + math.log(len(prunable))
        )
        info.update(var=target.var)
        return proposal, log_q, info

    # change
    if not internals:
        return None, 0.0, info
    target = internals[rng.integers(0, len(internals))]
    r = rows[id(target)]
    rr = _legal_ranges(X, r, candidates)
    total = ranges_sum(rr)
    v_new = pick_var(rr, total)
    lo, hi = rr[v_new]
    c_new = float(candidates.per_var[v_new][lo + rng.integers(0, hi - lo)])
    lo_o, hi_o = rr[target.var]
    new_root = _clone(tree.root)
    idx = [i for i, nd in enumerate(_preorder_internal(tree.root)) if nd is target][0]
    new_target = _preorder_internal(new_root)[idx]
    new_target.var = v_new
    new_target.cut = c_new
    proposal = Tree(new_root)
    # reject if any node below loses all its data or leaves the prior support
    if not _subtree_valid(new_target, rows[id(target)], X, candidates):
        return None, 0.0, info
    log_q = (math.log(s[target.var]) - math.log(hi_o - lo_o)) - (
        math.log(s[v_new]) - math.log(hi - lo)
    )
    info.update(var=v_new, cut=c_new)
    return proposal, log_q, info


def _preorder_internal(root) -> list[Internal]:
    out = []

    def go(nd):
        if isinstance(nd, Internal):
            out.append(nd)
            go(nd.left)
            go(nd.right)

    go(root)
    return out


def _replace(root, old, new) -> None:
    def go(nd):
        if isinstance(nd, Internal):
            if nd.left is old:
                nd.left = new
                return True
            if nd.right is old:
                nd.right = new
                return True
            return go(nd.left) or go(nd.right)
        return False

    if root is old:
        raise ValueError("cannot replace the root in place")
    go(root)


def _parent_prunable(root, leaf) -> int:
    def go(nd):
        if isinstance(nd, Internal):
            if nd.left is leaf or nd.right is leaf:
                return 1 if (isinstance(nd.left, Leaf) and isinstance(nd.right, Leaf)) else 0
            return max(go(nd.left), go(nd.right))
        return 0

    return go(root)


def _subtree_valid(nd, r, X, candidates) -> bool:
    if isinstance(nd, Leaf):
        return True
    vals = X[r, nd.var]
    if not (vals.min() < nd.cut < vals.max()):
        return False
    mask = vals <= nd.cut
    return _subtree_valid(nd.left, r[mask], X, candidates) and _subtree_valid(
        nd.right, r[~mask], X, candidates
    )


# ---------------------------------------------------------------------------
# heap <-> Tree conversion
# ---------------------------------------------------------------------------


def tree_from_heap(var_row, cut_row, mu_row, node: int = 0) -> Tree:
    def build(i):
        if var_row[i] == _kernels.NODE_LEAF:
            return Leaf(float(mu_row[i]))
        return Internal(
            int(var_row[i]), float(cut_row[i]), build(2 * i + 1), build(2 * i + 2)
        )

    return Tree(build(node))


def heap_from_tree(tree: Tree, capacity: int = HEAP_CAPACITY):
    var = np.full(capacity, _kernels.NODE_UNUSED, dtype=np.int32)
    cut = np.zeros(capacity, dtype=np.float64)
    mu = np.zeros(capacity, dtype=np.float64)

    def go(nd, i):
        if i >= capacity:
            raise ValueError("tree exceeds heap capacity")
        if isinstance(nd, Leaf):
            var[i] = _kernels.NODE_LEAF
            mu[i] = nd.mu
        else:
            var[i] = nd.var
            cut[i] = nd.cut
            go(nd.left, 2 * i + 1)
            go(nd.right, 2 * i + 2)

    go(tree.root, 0)
    return var, cut, mu


def structure_key(var_row, cut_row, node: int = 0) -> tuple:
    """Hashable canonical key of a heap tree's split structure."""
    v = var_row[node]
    if v == _kernels.NODE_LEAF:
        return ("L",)
    return (
        int(v),
        float(cut_row[node]),
        structure_key(var_row, cut_row, 2 * node + 1),
        structure_key(var_row, cut_row, 2 * node + 2),
    )


# ---------------------------------------------------------------------------
# posterior forest snapshots
# ---------------------------------------------------------------------------


class ForestDraws:
    """Flat, pointer-linked storage of every kept draw's forest."""

    def __init__(self, nvar, ncut, nmu, nleft, nright, tptr, n_draws, m):
        self.nvar = nvar
        self.ncut = ncut
        self.nmu = nmu
        self.nleft = nleft
        self.nright = nright
        self.tptr = tptr
        self.n_draws = n_draws
        self.m = m

    def eval_draws(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.empty((self.n_draws, X.shape[0]))
        _kernels.eval_draws(
            self.nvar, self.ncut, self.nmu, self.nleft, self.nright, self.tptr,
            self.n_draws, self.m, X, out,
        )
        return out

    def eval_mean(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.empty(X.shape[0])
        _kernels.eval_mean(
            self.nvar, self.ncut, self.nmu, self.nleft, self.nright, self.tptr,
            self.n_draws, self.m, X, out,
        )
        return out

    def eval_mean_probit(self, X, offset: float) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.empty(X.shape[0])
        _kernels.eval_mean_probit(
            self.nvar, self.ncut, self.nmu, self.nleft, self.nright, self.tptr,
            self.n_draws, self.m, X, offset, out,
        )
        return out

    def _uses_col(self, col: int) -> np.ndarray:
        hits = np.concatenate([[0], np.cumsum(self.nvar == col)])
        starts = self.tptr[:-1]
        ends = self.tptr[1:]
        return (hits[ends] - hits[starts] > 0).astype(np.uint8)

    def eval_diff_draws(self, X, col: int, hi_val: float = 1.0, lo_val: float = 0.0) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.empty((self.n_draws, X.shape[0]))
        _kernels.eval_diff_draws(
            self.nvar, self.ncut, self.nmu, self.nleft, self.nright, self.tptr,
            self._uses_col(col), self.n_draws, self.m, X, col, hi_val, lo_val, out,
        )
        return out

    def subset(self, stride: int) -> "ForestDraws":
        keep = list(range(0, self.n_draws, stride))
        acc = DrawAccumulator(self.m)
        for d in keep:
            a = self.tptr[d * self.m]
            b = self.tptr[(d + 1) * self.m]
            acc.add(
                self.nvar[a:b],
                self.ncut[a:b],
                self.nmu[a:b],
                np.where(self.nleft[a:b] >= 0, self.nleft[a:b] - a, -1),
                np.where(self.nright[a:b] >= 0, self.nright[a:b] - a, -1),
                self.tptr[d * self.m : (d + 1) * self.m + 1] - a,
            )
        return acc.finalize()

    def draw_tree(self, d: int, t: int) -> Tree:
        base = self.tptr[d * self.m + t]

        def build(j):
            if self.nvar[j] < 0:
                return Leaf(float(self.nmu[j]))
            return Internal(
                int(self.nvar[j]),
                float(self.ncut[j]),
                build(self.nleft[j]),
                build(self.nright[j]),
            )

        return Tree(build(base))

    def draw_forest(self, d: int) -> Forest:
        return Forest([self.draw_tree(d, t) for t in range(self.m)])

    def to_nested(self) -> list:
        from .trees import tree_to_dict

        return [
            [tree_to_dict(self.draw_tree(d, t)) for t in range(self.m)]
            for d in range(self.n_draws)
        ]

    @classmethod
    def from_forests(cls, forests: list[Forest]) -> "ForestDraws":
        m = forests[0].m
        acc = DrawAccumulator(m)
        for fr in forests:
            if fr.m != m:
                raise ValueError("all draws must have the same tree count")
            nvar, ncut, nmu, nleft, nright, tptr = _flatten_forest(fr)
            acc.add(nvar, ncut, nmu, nleft, nright, tptr)
        return acc.finalize()


def _flatten_forest(forest: Forest):
    nvar, ncut, nmu, nleft, nright = [], [], [], [], []
    tptr = [0]

    def emit(nd):
        pos = len(nvar)
        if isinstance(nd, Leaf):
            nvar.append(-1)
            ncut.append(0.0)
            nmu.append(nd.mu)
            nleft.append(-1)
            nright.append(-1)
        else:
            nvar.append(nd.var)
            ncut.append(nd.cut)
            nmu.append(0.0)
            nleft.append(0)
            nright.append(0)
            nleft[pos] = emit(nd.left)
            nright[pos] = emit(nd.right)
        return pos

    for t in forest.trees:
        emit(t.root)
        tptr.append(len(nvar))
    return (
        np.asarray(nvar, dtype=np.int16),
        np.asarray(ncut, dtype=np.float64),
        np.asarray(nmu, dtype=np.float64),
        np.asarray(nleft, dtype=np.int32),
        np.asarray(nright, dtype=np.int32),
        np.asarray(tptr, dtype=np.int64),
    )


class DrawAccumulator:
    """Collects per-draw forest snapshots and concatenates them once at the end."""

    def __init__(self, m: int):
        self.m = m
        self.pieces = []

    def add(self, nvar, ncut, nmu, nleft, nright, tptr):
        self.pieces.append((nvar, ncut, nmu, nleft, nright, tptr))

    def finalize(self) -> ForestDraws:
        if not self.pieces:
            return ForestDraws(
                np.empty(0, np.int16), np.empty(0), np.empty(0),
                np.empty(0, np.int32), np.empty(0, np.int32),
                np.zeros(1, np.int64), 0, self.m,
            )
        offs = np.zeros(len(self.pieces) + 1, dtype=np.int64)
        for i, pc in enumerate(self.pieces):
            offs[i + 1] = offs[i] + pc[0].size
        nvar = np.concatenate([pc[0] for pc in self.pieces])
        ncut = np.concatenate([pc[1] for pc in self.pieces])
        nmu = np.concatenate([pc[2] for pc in self.pieces])
        nleft = np.concatenate(
            [np.where(pc[3] >= 0, pc[3] + offs[i], -1) for i, pc in enumerate(self.pieces)]
        ).astype(np.int32)
        nright = np.concatenate(
            [np.where(pc[4] >= 0, pc[4] + offs[i], -1) for i, pc in enumerate(self.pieces)]
        ).astype(np.int32)
        tptr = np.concatenate(
            [pc[5][:-1] + offs[i] for i, pc in enumerate(self.pieces)]
            + [offs[-1:]]
        ).astype(np.int64)
        return ForestDraws(nvar, ncut, nmu, nleft, nright, tptr, len(self.pieces), self.m)


# ---------------------------------------------------------------------------
# chain state over the compiled kernel
# ---------------------------------------------------------------------------


class ChainState:
    """Heap-array MCMC state for one forest plus the scratch the kernel needs.

    The driver (models module) owns sigma, the split-variable prior state, and
    any latent-variable augmentation; sweep() performs the per-tree structure
    moves and leaf redraws for the current settings.
    """

    def __init__(
        self,
        X: np.ndarray,
        y_eff: np.ndarray,
        candidates: SplitCandidates,
        m: int,
        tree_prior: TreePriorParams,
        rng: np.random.Generator,
        w: np.ndarray | None = None,
        move_probs=(0.5, 0.3, 0.2),
        prior_only: bool = False,
    ):
        X = np.ascontiguousarray(X, dtype=np.float64)
        n, p = X.shape
        if candidates.p != p:
            raise ValueError("candidate set does not match X")
        counts = candidates.counts()
        if counts.size and counts.max() >= np.iinfo(np.int16).max:
            raise ValueError("too many cutpoints per variable (int16 range cache)")
        self.n, self.p, self.m = n, p, m
        self.Xt = np.ascontiguousarray(X.T)
        self.X = X
        self.y_eff = np.array(y_eff, dtype=np.float64)
        self.w = np.ones(n) if w is None else np.asarray(w, dtype=np.float64)
        if not np.all((self.w == 0.0) | (self.w == 1.0)):
            raise ValueError("row weights must be 0 or 1")
        self._wall1 = bool(np.all(self.w == 1.0))
        self.candidates = candidates
        self.cvals = candidates.flat_values
        self.coff = candidates.offsets
        self.tree_prior = tree_prior
        self.move_probs = move_probs
        self.prior_only = prior_only
        self.rng = rng

        cap = HEAP_CAPACITY
        rcap = min(RANGE_CACHE_SLOTS, cap)
        self.var = np.full((m, cap), _kernels.NODE_UNUSED, dtype=np.int32)
        self.cut = np.zeros((m, cap), dtype=np.float64)
        self.mu = np.zeros((m, cap), dtype=np.float64)
        self.nn = np.zeros((m, cap), dtype=np.int32)
        self.seg = np.zeros((m, cap, 2), dtype=np.int32)
        self.order = np.tile(np.arange(n, dtype=np.int32), (m, 1))
        self.rlo = np.zeros((m, rcap, p), dtype=np.int16)
        self.rhi = np.zeros((m, rcap, p), dtype=np.int16)
        self.var[:, 0] = _kernels.NODE_LEAF
        self.nn[:, 0] = n
        self.seg[:, 0, 1] = n
        self.rhi[:, 0, :] = counts.astype(np.int16)
        self.fit = np.zeros(n)
        self.ssq_leaf = np.zeros(m)
        self.counts_var = np.zeros(p, dtype=np.int64)
        self.move_stats = np.zeros(6, dtype=np.int64)
        self.sigma: float | None = None

        self._bufs = (
            np.zeros(cap, dtype=np.int32),  # st
            np.zeros(cap, dtype=np.int32),  # lv
            np.zeros(cap, dtype=np.int32),  # in
            np.zeros(cap, dtype=np.int32),  # pr
            np.zeros(n, dtype=np.int32),  # rows1
            np.zeros(n, dtype=np.int32),  # rows2
            np.zeros(n),  # tf
            np.zeros(n),  # res
            np.zeros(cap),  # NW
            np.zeros(cap),  # S
            np.zeros(cap),  # Q
            np.zeros(p, dtype=np.int64),  # rl
            np.zeros(p, dtype=np.int64),  # rh
            np.zeros(p, dtype=np.int64),  # rl2
            np.zeros(p, dtype=np.int64),  # rh2
            np.zeros(cap, dtype=np.int32),  # sg2lo
            np.zeros(cap, dtype=np.int32),  # sg2hi
            np.zeros(cap),  # NW2
            np.zeros(cap),  # S2
            np.zeros(cap),  # Q2
            np.zeros((cap, p)),  # rmn
            np.zeros((cap, p)),  # rmx
            np.zeros(p),  # fmn
            np.zeros(p),  # fmx
        )

    def sweep(self, sigma: float, sigma_mu: float, s: np.ndarray) -> None:
        pg, pp, pc = self.move_probs
        _kernels.run_sweep(
            self.var, self.cut, self.mu, self.nn, self.seg, self.order,
            self.rlo, self.rhi, self.fit, self.ssq_leaf, self.counts_var,
            self.y_eff, self.w, self._wall1, self.X, self.Xt, self.cvals, self.coff,
            s, pg, pp, pc,
            self.tree_prior.eta, self.tree_prior.beta,
            sigma, sigma_mu, self.prior_only, self.rng,
            *self._bufs, self.move_stats,
        )

    @property
    def usage(self) -> np.ndarray:
        return self.counts_var > 0

    def snapshot(self):
        """Flat pointer-linked copy of the current forest (see ForestDraws)."""
        m, cap = self.var.shape
        flat = self.var.ravel()
        act = np.flatnonzero(flat != _kernels.NODE_UNUSED)
        mapping = np.full(m * cap, -1, dtype=np.int64)
        mapping[act] = np.arange(act.size)
        tree_of = act // cap
        pos = act % cap
        nvar = flat[act].astype(np.int16)
        internal = nvar >= 0
        lglob = np.where(internal, tree_of * cap + 2 * pos + 1, 0)
        rglob = np.where(internal, tree_of * cap + 2 * pos + 2, 0)
        nleft = np.where(internal, mapping[lglob], -1).astype(np.int32)
        nright = np.where(internal, mapping[rglob], -1).astype(np.int32)
        ncut = self.cut.ravel()[act].copy()
        nmu = self.mu.ravel()[act].copy()
        tptr = np.zeros(m + 1, dtype=np.int64)
        np.cumsum(np.bincount(tree_of, minlength=m), out=tptr[1:])
        return nvar, ncut, nmu, nleft, nright, tptr

    def exact_eval(self, snap=None) -> np.ndarray:
        """Forest evaluation at the training rows from a fresh snapshot (no weights)."""
        snap = self.snapshot() if snap is None else snap
        nvar, ncut, nmu, nleft, nright, tptr = snap
        out = np.empty((1, self.n))
        _kernels.eval_draws(nvar, ncut, nmu, nleft, nright, tptr, 1, self.m, self.X, out)
        return out[0]

    def refresh_fit(self, snap=None) -> np.ndarray:
        """Replace the incrementally maintained fit with an exact recomputation.

        Keeps float drift from accumulating over long chains; returns the
        unweighted forest evaluation.
        """
        ev = self.exact_eval(snap)
        self.fit[:] = self.w * ev
        return ev

    def tree(self, t: int) -> Tree:
        return tree_from_heap(self.var[t], self.cut[t], self.mu[t])

    def structure_key(self, t: int = 0) -> tuple:
        return structure_key(self.var[t], self.cut[t])

    def validate(self, atol: float = 1e-9) -> None:
        """Brute-force consistency check of segments, counts, ranges, and fit."""
        from .priors import legal_cut_counts

        fit_ref = np.zeros(self.n)
        for t in range(self.m):
            rows_by_node = {0: np.arange(self.n)}
            stack = [0]
            seen_rows = 0
            while stack:
                node = stack.pop()
                r = rows_by_node[node]
                a, b = self.seg[t, node]
                seg_rows = self.order[t, a:b]
                if sorted(seg_rows.tolist()) != sorted(r.tolist()):
                    raise AssertionError(f"segment mismatch at tree {t} node {node}")
                if self.nn[t, node] != r.size:
                    raise AssertionError(f"count mismatch at tree {t} node {node}")
                rcap = self.rlo.shape[1]
                if node < rcap:
                    counts = legal_cut_counts(self.X, r, self.candidates)
                    stored = (
                        self.rhi[t, node].astype(np.int64)
                        - self.rlo[t, node].astype(np.int64)
                    )
                    if not np.array_equal(counts, stored):
                        raise AssertionError(f"range mismatch at tree {t} node {node}")
                v = self.var[t, node]
                if v == _kernels.NODE_LEAF:
                    fit_ref[r] += self.w[r] * self.mu[t, node]
                    seen_rows += r.size
                else:
                    mask = self.X[r, v] <= self.cut[t, node]
                    if not (mask.any() and (~mask).any()):
                        raise AssertionError(f"empty child at tree {t} node {node}")
                    rows_by_node[2 * node + 1] = r[mask]
                    rows_by_node[2 * node + 2] = r[~mask]
                    stack.extend((2 * node + 1, 2 * node + 2))
            if seen_rows != self.n:
                raise AssertionError(f"leaves of tree {t} do not partition the rows")
        if np.max(np.abs(fit_ref - self.fit)) > atol:
            raise AssertionError("cached fit drifted from direct recomputation")
        counts_ref = np.zeros(self.p, dtype=np.int64)
        active = self.var[self.var >= 0]
        for v in active:
            counts_ref[v] += 1
        if not np.array_equal(counts_ref, self.counts_var):
            raise AssertionError("split-variable counts out of sync")
