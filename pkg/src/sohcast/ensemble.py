"""Regression trees, cost-complexity pruning and tree ensembles.

Trees are stored as flat node arrays (sklearn-style): ``feature[i] == -1``
marks a leaf; internal nodes send ``x[feature] <= threshold`` left. Every
node keeps its training count, mean and squared error so pruning and
importance need no access to the data.

Split search tries every midpoint between consecutive distinct values of
every candidate feature and takes the smallest summed squared error. A
candidate only replaces the incumbent when it is better by more than a small
relative tolerance, so ties go to the lowest feature index, then the lowest
threshold.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import EmptyData, WidthMismatch

FORMAT_VERSION = 1
REL_TOL = 1e-10


@dataclass
class FeatureMatrix:
    feature_names: list
    values: np.ndarray
    target: np.ndarray
    dropped_rows: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        self.target = np.asarray(self.target, dtype=float)
        self.feature_names = list(self.feature_names)
        if len(set(self.feature_names)) != len(self.feature_names):
            raise ValueError("feature names must be unique")
        if self.values.shape != (len(self.target), len(self.feature_names)):
            raise ValueError(f"shape mismatch: values {self.values.shape}, target {self.target.shape}")
        if not (np.isfinite(self.values).all() and np.isfinite(self.target).all()):
            raise ValueError("feature matrix contains missing values")

    @property
    def n_rows(self) -> int:
        return len(self.target)

    def select(self, names) -> "FeatureMatrix":
        cols = [self.feature_names.index(n) for n in names]
        return FeatureMatrix(list(names), self.values[:, cols], self.target, self.dropped_rows)

    def rows(self, index) -> "FeatureMatrix":
        return FeatureMatrix(self.feature_names, self.values[index], self.target[index], self.dropped_rows)


@njit(cache=True, nogil=True)
def _best_split(X, y, seg, features, min_leaf):
    """Best (feature, threshold, sse) for the samples ``seg``; feature -1 if none."""
    m = seg.shape[0]
    mean = 0.0
    for i in range(m):
        mean += y[seg[i]]
    mean /= m
    yc = np.empty(m)
    for i in range(m):
        yc[i] = y[seg[i]] - mean
    node_sse = 0.0
    total_s = 0.0
    for i in range(m):
        node_sse += yc[i] * yc[i]
        total_s += yc[i]

    best_f = -1
    best_t = 0.0
    best_sse = node_sse
    tol = REL_TOL * (1.0 + node_sse)
    xs = np.empty(m)
    for fi in range(features.shape[0]):
        j = features[fi]
        for i in range(m):
            xs[i] = X[seg[i], j]
        order = np.argsort(xs, kind="mergesort")
        s = 0.0
        q = 0.0
        for k in range(m - 1):
            v = yc[order[k]]
            s += v
            q += v * v
            a = xs[order[k]]
            b = xs[order[k + 1]]
            if b <= a:
                continue
            nl = k + 1
            nr = m - nl
            if nl < min_leaf or nr < min_leaf:
                continue
            sr = total_s - s
            sse = (q - s * s / nl) + ((node_sse - q) - sr * sr / nr)
            if sse < best_sse - tol:
                best_sse = sse
                best_f = j
                best_t = 0.5 * (a + b)
                if best_t >= b:  # adjacent floats: keep the split strict
                    best_t = a
    return best_f, best_t, best_sse, node_sse, mean


@njit(cache=True, nogil=True)
def _build(X, y, sample, max_depth, min_leaf, n_sub, keys):
    n = sample.shape[0]
    p = X.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    count = np.zeros(cap, dtype=np.int64)
    sse = np.zeros(cap)

    seg_lo = np.zeros(cap, dtype=np.int64)
    seg_hi = np.zeros(cap, dtype=np.int64)
    depth = np.zeros(cap, dtype=np.int64)
    work = sample.copy()
    all_features = np.arange(p)

    n_nodes = 1
    seg_lo[0] = 0
    seg_hi[0] = n
    stack = np.empty(cap, dtype=np.int64)
    top = 0
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        seg = work[seg_lo[node] : seg_hi[node]]
        m = seg.shape[0]
        if n_sub < p:
            chosen = np.sort(np.argsort(keys[node])[:n_sub])
        else:
            chosen = all_features
        f, t, best, node_sse, mean = _best_split(X, y, seg, chosen, min_leaf)
        value[node] = mean
        count[node] = m
        sse[node] = node_sse
        if f < 0 or m < 2 or (max_depth >= 0 and depth[node] >= max_depth):
            continue
        # stable partition of the node's segment
        lo = seg_lo[node]
        buf = seg.copy()
        nl = 0
        for i in range(m):
            if X[buf[i], f] <= t:
                work[lo + nl] = buf[i]
                nl += 1
        k = nl
        for i in range(m):
            if X[buf[i], f] > t:
                work[lo + k] = buf[i]
                k += 1
        feature[node] = f
        threshold[node] = t
        li = n_nodes
        ri = n_nodes + 1
        n_nodes += 2
        left[node] = li
        right[node] = ri
        seg_lo[li] = lo
        seg_hi[li] = lo + nl
        seg_lo[ri] = lo + nl
        seg_hi[ri] = seg_hi[node]
        depth[li] = depth[node] + 1
        depth[ri] = depth[node] + 1
        stack[top] = ri
        top += 1
        stack[top] = li
        top += 1
    return (
        feature[:n_nodes],
        threshold[:n_nodes],
        left[:n_nodes],
        right[:n_nodes],
        value[:n_nodes],
        count[:n_nodes],
        sse[:n_nodes],
    )


@njit(cache=True, nogil=True)
def _route(X, feature, threshold, left, right):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@dataclass
class RegressionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    sse: np.ndarray
    n_features: int
    alpha: float = 0.0

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def apply(self, X) -> np.ndarray:
        X = _as_rows(X, self.n_features)
        return _route(X, self.feature, self.threshold, self.left, self.right)

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def split_gains(self) -> np.ndarray:
        """Squared-error decrease at each node (0 for leaves)."""
        gain = np.zeros(self.n_nodes)
        internal = self.feature >= 0
        gain[internal] = self.sse[internal] - self.sse[self.left[internal]] - self.sse[self.right[internal]]
        return gain

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
            "sse": self.sse.tolist(),
            "n_features": self.n_features,
            "alpha": self.alpha,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RegressionTree":
        return cls(
            feature=np.array(doc["feature"], dtype=np.int64),
            threshold=np.array(doc["threshold"], dtype=float),
            left=np.array(doc["left"], dtype=np.int64),
            right=np.array(doc["right"], dtype=np.int64),
            value=np.array(doc["value"], dtype=float),
            n_samples=np.array(doc["n_samples"], dtype=np.int64),
            sse=np.array(doc["sse"], dtype=float),
            n_features=int(doc["n_features"]),
            alpha=float(doc.get("alpha", 0.0)),
        )


def _as_rows(X, width: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :] if width > 1 or X.shape[0] == 1 else X[:, None]
    if X.shape[1] != width:
        raise WidthMismatch(f"expected {width} features, got {X.shape[1]}")
    return np.ascontiguousarray(X)


def _grow(X, y, sample, max_depth, min_leaf, n_sub=None, keys=None) -> RegressionTree:
    p = X.shape[1]
    n_sub = p if n_sub is None else n_sub
    if keys is None:
        keys = np.zeros((1, p))
    arrays = _build(X, y, sample, -1 if max_depth is None else int(max_depth), int(min_leaf), int(n_sub), keys)
    return RegressionTree(*arrays, n_features=p)


def _check(data: FeatureMatrix, minimum: int = 1) -> tuple[np.ndarray, np.ndarray]:
    if data.n_rows < minimum:
        raise EmptyData(f"need at least {minimum} rows, got {data.n_rows}")
    return np.ascontiguousarray(data.values), np.ascontiguousarray(data.target)


def fit_cart(data: FeatureMatrix, max_depth: int | None = None, min_leaf: int = 1) -> RegressionTree:
    """Grow a least-squares regression tree until leaves are pure, single-sample, or depth-capped."""
    X, y = _check(data)
    return _grow(X, y, np.arange(data.n_rows, dtype=np.int64), max_depth, min_leaf)


def _subtree_stats(tree: RegressionTree, leaf: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Leaf count and summed leaf SSE of each node's current subtree."""
    n = tree.n_nodes
    leaves = np.zeros(n, dtype=np.int64)
    risk = np.zeros(n)
    for node in range(n - 1, -1, -1):  # children always have larger ids
        if leaf[node]:
            leaves[node] = 1
            risk[node] = tree.sse[node]
        else:
            leaves[node] = leaves[tree.left[node]] + leaves[tree.right[node]]
            risk[node] = risk[tree.left[node]] + risk[tree.right[node]]
    return leaves, risk


def _reachable(tree: RegressionTree, leaf: np.ndarray) -> np.ndarray:
    keep = np.zeros(tree.n_nodes, dtype=bool)
    stack = [0]
    while stack:
        node = stack.pop()
        keep[node] = True
        if not leaf[node]:
            stack.extend((tree.left[node], tree.right[node]))
    return keep


def _compact(tree: RegressionTree, leaf: np.ndarray, alpha: float) -> RegressionTree:
    keep = np.flatnonzero(_reachable(tree, leaf))
    new_id = np.full(tree.n_nodes, -1, dtype=np.int64)
    new_id[keep] = np.arange(len(keep))
    is_leaf = leaf[keep]
    left = np.where(is_leaf, -1, new_id[np.where(is_leaf, 0, tree.left[keep])])
    right = np.where(is_leaf, -1, new_id[np.where(is_leaf, 0, tree.right[keep])])
    return RegressionTree(
        feature=np.where(is_leaf, -1, tree.feature[keep]),
        threshold=np.where(is_leaf, 0.0, tree.threshold[keep]),
        left=left,
        right=right,
        value=tree.value[keep].copy(),
        n_samples=tree.n_samples[keep].copy(),
        sse=tree.sse[keep].copy(),
        n_features=tree.n_features,
        alpha=alpha,
    )


def prune(tree: RegressionTree, alpha: float) -> RegressionTree:
    """Weakest-link pruning: collapse the node with the smallest critical alpha while it is <= ``alpha``.

    The result minimises ``sum(leaf SSE) + alpha * n_leaves`` over subtrees.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if alpha == 0:
        return tree
    leaf = tree.feature < 0
    while True:
        idx = np.flatnonzero(_reachable(tree, leaf) & ~leaf)
        if len(idx) == 0:
            break
        leaves, risk = _subtree_stats(tree, leaf)
        g = (tree.sse[idx] - risk[idx]) / (leaves[idx] - 1)
        k = int(np.argmin(g))
        if g[k] > alpha:
            break
        leaf[idx[k]] = True
    return _compact(tree, leaf, alpha)


def cost_complexity(tree: RegressionTree, alpha: float) -> float:
    leaves = tree.feature < 0
    return float(tree.sse[leaves].sum() + alpha * leaves.sum())


@dataclass
class Ensemble:
    kind: str  # "bagging" | "random_forest" | "gbm"
    trees: list
    B: int
    seed: int
    tree_seeds: list
    n_features: int
    params: dict = field(default_factory=dict)
    learning_rate: float | None = None
    feature_subsample: int | None = None
    init: float = 0.0

    def predict(self, X) -> np.ndarray:
        X = _as_rows(X, self.n_features)
        if self.kind == "gbm":
            out = np.full(len(X), self.init)
            for tree in self.trees:
                out += self.learning_rate * tree.predict(X)
            return out
        preds = np.array([tree.predict(X) for tree in self.trees])
        # averaging offsets from the first tree keeps identical trees exact
        return preds[0] + (preds - preds[0]).mean(axis=0)

    def to_dict(self) -> dict:
        return {
            "format": "sohcast-ensemble",
            "version": FORMAT_VERSION,
            "kind": self.kind,
            "B": self.B,
            "seed": self.seed,
            "tree_seeds": [int(s) for s in self.tree_seeds],
            "n_features": self.n_features,
            "params": self.params,
            "learning_rate": self.learning_rate,
            "feature_subsample": self.feature_subsample,
            "init": self.init,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Ensemble":
        if doc.get("format") != "sohcast-ensemble" or doc.get("version") != FORMAT_VERSION:
            raise ValueError("not a version-1 sohcast ensemble document")
        return cls(
            kind=doc["kind"],
            trees=[RegressionTree.from_dict(t) for t in doc["trees"]],
            B=int(doc["B"]),
            seed=int(doc["seed"]),
            tree_seeds=list(doc["tree_seeds"]),
            n_features=int(doc["n_features"]),
            params=dict(doc["params"]),
            learning_rate=doc["learning_rate"],
            feature_subsample=doc["feature_subsample"],
            init=float(doc["init"]),
        )


def predict(model, X) -> np.ndarray:
    """Predict with a tree or an ensemble."""
    return model.predict(X)


def tree_seeds(seed: int, B: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(B)]


def fit_bagging(
    data: FeatureMatrix,
    B: int = 100,
    seed: int = 0,
    bootstrap: bool = True,
    feature_subsample: int | None = None,
    max_depth: int | None = None,
    min_leaf: int = 1,
    n_jobs: int = 1,
) -> Ensemble:
    """Bootstrap-aggregated CART; ``feature_subsample=k`` gives the random-forest variant.

    Tree ``b`` draws its resample (and feature keys) from its own generator
    seeded with ``tree_seeds(seed, B)[b]``, so results do not depend on ``n_jobs``.
    """
    X, y = _check(data, 2 if bootstrap else 1)
    n, p = X.shape
    k = p if feature_subsample is None else int(min(max(feature_subsample, 1), p))
    seeds = tree_seeds(seed, B)

    def one(s: int) -> RegressionTree:
        rng = np.random.default_rng(s)
        sample = rng.integers(0, n, n) if bootstrap else np.arange(n)
        keys = rng.random((2 * n + 1, p)) if k < p else None
        return _grow(X, y, sample.astype(np.int64), max_depth, min_leaf, k, keys)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            trees = list(pool.map(one, seeds))
    else:
        trees = [one(s) for s in seeds]
    kind = "bagging" if feature_subsample is None else "random_forest"
    params = {"bootstrap": bootstrap, "max_depth": max_depth, "min_leaf": min_leaf}
    return Ensemble(kind, trees, B, seed, seeds, p, params, feature_subsample=feature_subsample)


def fit_random_forest(data: FeatureMatrix, B: int = 100, seed: int = 0, feature_subsample: int | None = None, **kw) -> Ensemble:
    """Random-forest baseline; defaults to a third of the features (at least one) per split."""
    if feature_subsample is None:
        feature_subsample = max(1, data.values.shape[1] // 3)
    return fit_bagging(data, B=B, seed=seed, feature_subsample=feature_subsample, **kw)


def fit_gbm(data: FeatureMatrix, B: int = 200, learning_rate: float = 0.1, max_depth: int | None = 3, seed: int = 0) -> Ensemble:
    """Least-squares gradient boosting: each stage fits a depth-limited tree to the current residuals."""
    X, y = _check(data, 2)
    init = float(y.mean())
    resid = y - init
    trees = []
    sample = np.arange(len(y), dtype=np.int64)
    for _ in range(B):
        tree = _grow(X, resid, sample, max_depth, 1)
        trees.append(tree)
        resid = resid - learning_rate * tree.predict(X)
    params = {"max_depth": max_depth}
    return Ensemble("gbm", trees, B, seed, [], X.shape[1], params, learning_rate=learning_rate, init=init)


def feature_importance(model) -> np.ndarray:
    """Impurity-decrease importance summed over all trees and normalised to 1.

    Returns zeros (with a warning) when no tree has a split.
    """
    trees = model.trees if isinstance(model, Ensemble) else [model]
    scores = np.zeros(trees[0].n_features)
    for tree in trees:
        gain = tree.split_gains()
        internal = tree.feature >= 0
        np.add.at(scores, tree.feature[internal], gain[internal])
    total = scores.sum()
    if total <= 0:
        warnings.warn("model has no splits; importances are all zero", RuntimeWarning, stacklevel=2)
        return scores
    return scores / total


def correlation_matrix(data: FeatureMatrix) -> np.ndarray:
    """Pearson correlations between features; constant columns get 0 off-diagonal."""
    X = data.values
    Z = X - X.mean(axis=0)
    sd = np.sqrt((Z**2).sum(axis=0))
    constant = sd == 0
    if constant.any():
        names = [n for n, c in zip(data.feature_names, constant) if c]
        warnings.warn(f"constant feature(s) {names}; correlations set to 0", RuntimeWarning, stacklevel=2)
    Z = Z / np.where(constant, 1.0, sd)
    corr = Z.T @ Z
    corr = (corr + corr.T) / 2.0
    np.fill_diagonal(corr, 1.0)
    return np.clip(corr, -1.0, 1.0)


@dataclass(frozen=True)
class Learner:
    """A model family plus hyperparameters, fitted on demand."""

    kind: str  # "cart" | "bagging" | "random_forest" | "gbm"
    params: tuple = ()

    @classmethod
    def make(cls, kind: str, **params) -> "Learner":
        if kind not in ("cart", "bagging", "random_forest", "gbm"):
            raise ValueError(f"unknown learner kind {kind!r}")
        return cls(kind, tuple(sorted(params.items())))

    @property
    def options(self) -> dict:
        return dict(self.params)

    def fit(self, data: FeatureMatrix, seed: int | None = None):
        opts = self.options
        if seed is not None and self.kind != "cart":
            opts.setdefault("seed", seed)
        if self.kind == "cart":
            alpha = opts.pop("alpha", 0.0)
            tree = fit_cart(data, **opts)
            return prune(tree, alpha) if alpha else tree
        if self.kind == "bagging":
            return fit_bagging(data, **opts)
        if self.kind == "random_forest":
            return fit_random_forest(data, **opts)
        return fit_gbm(data, **opts)

    def label(self) -> str:
        return {"cart": "CART", "bagging": "BAG", "random_forest": "RF", "gbm": "GBM"}[self.kind]
