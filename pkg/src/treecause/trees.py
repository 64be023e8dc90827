"""Binary regression trees, forest evaluation, and partial-residual bookkeeping.

Trees here are the structured, immutable-by-convention view used by the public
API, serialization, and tests. The sampler keeps its own array-backed state and
emits snapshots convertible to these objects.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "Leaf",
    "Internal",
    "Node",
    "Tree",
    "Forest",
    "evaluate_tree",
    "evaluate_tree_matrix",
    "evaluate_forest",
    "forest_predict",
    "partial_residual",
    "variable_usage",
    "PartitionCache",
    "node_to_dict",
    "node_from_dict",
    "tree_to_dict",
    "tree_from_dict",
]


@dataclass
class Leaf:
    mu: float


@dataclass
class Internal:
    var: int
    cut: float
    left: "Node"
    right: "Node"


Node = Union[Leaf, Internal]


@dataclass
class Tree:
    root: Node

    def leaves(self) -> list[Leaf]:
        out = []
        stack = [self.root]
        while stack:
            nd = stack.pop()
            if isinstance(nd, Leaf):
                out.append(nd)
            else:
                stack.append(nd.right)
                stack.append(nd.left)
        return out

    def internal_nodes(self) -> list[Internal]:
        out = []
        stack = [self.root]
        while stack:
            nd = stack.pop()
            if isinstance(nd, Internal):
                out.append(nd)
                stack.append(nd.right)
                stack.append(nd.left)
        return out

    def n_leaves(self) -> int:
        return len(self.leaves())

    def depth(self) -> int:
        def go(nd, d):
            if isinstance(nd, Leaf):
                return d
            return max(go(nd.left, d + 1), go(nd.right, d + 1))

        return go(self.root, 0)


@dataclass
class Forest:
    trees: list[Tree]

    @property
    def m(self) -> int:
        return len(self.trees)


def evaluate_tree(tree: Tree, x) -> float:
    """Route x to its unique leaf; ties at the cut go left (x_l <= c)."""
    nd = tree.root
    while isinstance(nd, Internal):
        nd = nd.left if x[nd.var] <= nd.cut else nd.right
    return nd.mu


def evaluate_tree_matrix(tree: Tree, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        out[i] = evaluate_tree(tree, X[i])
    return out


def evaluate_forest(forest: Forest, x) -> float:
    return float(sum(evaluate_tree(t, x) for t in forest.trees))


def forest_predict(forest: Forest, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    out = np.zeros(X.shape[0])
    for t in forest.trees:
        out += evaluate_tree_matrix(t, X)
    return out


def leaf_assignments(tree: Tree, X: np.ndarray) -> np.ndarray:
    """Index of the leaf (in preorder leaf numbering) reached by each row."""
    order: dict[int, int] = {}

    def number(nd):
        if isinstance(nd, Leaf):
            order[id(nd)] = len(order)
        else:
            number(nd.left)
            number(nd.right)

    number(tree.root)
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        nd = tree.root
        while isinstance(nd, Internal):
            nd = nd.left if X[i, nd.var] <= nd.cut else nd.right
        out[i] = order[id(nd)]
    return out


class PartitionCache:
    """Per-tree leaf memberships, fits, and per-leaf residual sufficient statistics.

    fits[j] caches tree j's value at every training row so that the partial
    residual R_j = y - (total fit - fits[j]) is an O(n) update rather than an
    O(m n) recomputation.
    """

    def __init__(self, forest: Forest, X: np.ndarray, y_scaled: np.ndarray):
        self.X = np.asarray(X, dtype=np.float64)
        self.y = np.asarray(y_scaled, dtype=np.float64)
        self.refresh(forest)

    def refresh(self, forest: Forest) -> None:
        n = self.X.shape[0]
        m = forest.m
        self.leaf_index = [leaf_assignments(t, self.X) for t in forest.trees]
        self.fits = np.zeros((m, n))
        for j, t in enumerate(forest.trees):
            mus = np.array([lf.mu for lf in t.leaves()])
            self.fits[j] = mus[self.leaf_index[j]]
        self.total_fit = self.fits.sum(axis=0) if m else np.zeros(n)

    def partial_residual(self, j: int) -> np.ndarray:
        return self.y - self.total_fit + self.fits[j]

    def leaf_stats(self, j: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(counts, residual sums, residual sums of squares) per leaf of tree j."""
        idx = self.leaf_index[j]
        r = self.partial_residual(j)
        b = int(idx.max()) + 1 if idx.size else 0
        n_i = np.bincount(idx, minlength=b).astype(np.float64)
        s_i = np.bincount(idx, weights=r, minlength=b)
        q_i = np.bincount(idx, weights=r * r, minlength=b)
        return n_i, s_i, q_i


def partial_residual(
    y_scaled: np.ndarray,
    forest: Forest,
    j: int,
    X: np.ndarray | None = None,
    cache: PartitionCache | None = None,
) -> np.ndarray:
    """R_j = y - sum_{h != j} g(x; T_h, M_h), computed incrementally via the cache."""
    if cache is not None:
        return cache.partial_residual(j)
    if X is None:
        raise ValueError("need X or a PartitionCache")
    total = forest_predict(forest, X)
    own = evaluate_tree_matrix(forest.trees[j], X)
    return np.asarray(y_scaled, dtype=np.float64) - total + own


def variable_usage(forest: Forest, p: int) -> np.ndarray:
    """Boolean vector: variable l appears in at least one splitting rule."""
    used = np.zeros(p, dtype=bool)
    for t in forest.trees:
        for nd in t.internal_nodes():
            used[nd.var] = True
    return used


def node_to_dict(nd: Node) -> dict:
    if isinstance(nd, Leaf):
        return {"mu": float(nd.mu)}
    return {
        "var": int(nd.var),
        "cut": float(nd.cut),
        "left": node_to_dict(nd.left),
        "right": node_to_dict(nd.right),
    }


def node_from_dict(d: dict) -> Node:
    if "mu" in d:
        return Leaf(float(d["mu"]))
    return Internal(
        int(d["var"]),
        float(d["cut"]),
        node_from_dict(d["left"]),
        node_from_dict(d["right"]),
    )


def tree_to_dict(tree: Tree) -> dict:
    return node_to_dict(tree.root)


def tree_from_dict(d: dict) -> Tree:
    return Tree(node_from_dict(d))
