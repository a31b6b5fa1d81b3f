"""Extremely randomized trees and a 1-nearest-neighbour baseline.

The forest follows Geurts et al.: every tree sees the full training set, each
node draws ``max(1, floor(sqrt(d)))`` attributes among those that are not
constant in the node, picks one uniform cut per attribute in ``[min, max)``
and keeps the cut with the lowest weighted Gini impurity. Samples with
``x <= cut`` go left. Growth stops at pure nodes, single samples and nodes
whose attributes are all constant.

Per-tree randomness comes from ``SeedSequence(seed).spawn(n_trees)`` so the
result does not depend on the order in which trees are built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DegenerateInput


@njit(cache=True)
def _grow(X, y, n_classes, k, rand):
    n, d = X.shape
    cap = 2 * n
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros((cap, n_classes), dtype=np.int64)

    idx = np.arange(n)
    stack_node = np.empty(cap, dtype=np.int64)
    stack_lo = np.empty(cap, dtype=np.int64)
    stack_hi = np.empty(cap, dtype=np.int64)
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    top = 1
    n_nodes = 1
    r = 0

    fmin = np.empty(d)
    fmax = np.empty(d)
    nonconst = np.empty(d, dtype=np.int64)
    counts_l = np.zeros(n_classes, dtype=np.int64)

    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        size = hi - lo
        for i in range(lo, hi):
            value[node, y[idx[i]]] += 1
        pure = False
        for c in range(n_classes):
            if value[node, c] == size:
                pure = True
        if size < 2 or pure:
            continue

        for f in range(d):
            fmin[f] = X[idx[lo], f]
            fmax[f] = X[idx[lo], f]
        for i in range(lo + 1, hi):
            row = idx[i]
            for f in range(d):
                v = X[row, f]
                if v < fmin[f]:
                    fmin[f] = v
                elif v > fmax[f]:
                    fmax[f] = v
        m = 0
        for f in range(d):
            if fmax[f] > fmin[f]:
                nonconst[m] = f
                m += 1
        if m == 0:
            continue

        kk = min(k, m)
        # partial Fisher-Yates: the first kk entries become the candidates
        for j in range(kk):
            s = j + int(rand[r] * (m - j))
            r += 1
            if s >= m:
                s = m - 1
            tmp = nonconst[j]
            nonconst[j] = nonconst[s]
            nonconst[s] = tmp

        best_score = -1.0
        best_f = -1
        best_cut = 0.0
        for j in range(kk):
            f = nonconst[j]
            cut = fmin[f] + rand[r] * (fmax[f] - fmin[f])
            r += 1
            if cut >= fmax[f]:
                cut = fmin[f]
            for c in range(n_classes):
                counts_l[c] = 0
            n_l = 0
            for i in range(lo, hi):
                row = idx[i]
                if X[row, f] <= cut:
                    counts_l[y[row]] += 1
                    n_l += 1
            n_r = size - n_l
            # maximising sum_c n_c^2 / n per child minimises weighted Gini
            score = 0.0
            sq_l = 0.0
            sq_r = 0.0
            for c in range(n_classes):
                cl = counts_l[c]
                cr = value[node, c] - cl
                sq_l += cl * cl
                sq_r += cr * cr
            score = sq_l / n_l + sq_r / n_r
            if score > best_score or (score == best_score and f < best_f):
                best_score = score
                best_f = f
                best_cut = cut

        # stable in-place partition of idx[lo:hi]
        buf = idx[lo:hi].copy()
        a = lo
        for i in range(size):
            if X[buf[i], best_f] <= best_cut:
                idx[a] = buf[i]
                a += 1
        mid = a
        for i in range(size):
            if X[buf[i], best_f] > best_cut:
                idx[a] = buf[i]
                a += 1

        feature[node] = best_f
        threshold[node] = best_cut
        left[node] = n_nodes
        right[node] = n_nodes + 1
        # push right first so the left subtree is built first
        stack_node[top] = n_nodes + 1
        stack_lo[top] = mid
        stack_hi[top] = hi
        top += 1
        stack_node[top] = n_nodes
        stack_lo[top] = lo
        stack_hi[top] = mid
        top += 1
        n_nodes += 2

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
    )


@njit(cache=True)
def _leaves(X, feature, threshold, left, right):
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@dataclass(frozen=True)
class DecisionTree:
    """Array-encoded tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # class counts per node

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def max_depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            if self.feature[node] >= 0:
                depth[self.left[node]] = depth[self.right[node]] = depth[node] + 1
        return int(depth.max())

    def leaf_proba(self, X) -> np.ndarray:
        leaves = _leaves(X, self.feature, self.threshold, self.left, self.right)
        counts = self.value[leaves].astype(np.float64)
        return counts / counts.sum(axis=1, keepdims=True)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, doc) -> "DecisionTree":
        return cls(
            np.asarray(doc["feature"], dtype=np.int64),
            np.asarray(doc["threshold"], dtype=np.float64),
            np.asarray(doc["left"], dtype=np.int64),
            np.asarray(doc["right"], dtype=np.int64),
            np.asarray(doc["value"], dtype=np.int64).reshape(len(doc["feature"]), -1),
        )


@dataclass(frozen=True)
class ExtraTreesModel:
    trees: tuple
    n_classes: int
    n_features: int
    k_features: int
    seed: int

    def predict_proba(self, X) -> np.ndarray:
        X = _check_matrix(X, self.n_features)
        total = np.zeros((X.shape[0], self.n_classes))
        for tree in self.trees:
            total += tree.leaf_proba(X)
        return total / len(self.trees)

    def predict(self, X) -> np.ndarray:
        # argmax returns the first maximum, i.e. the lowest class index on ties
        return np.argmax(self.predict_proba(X), axis=1)

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "n_classes": self.n_classes,
            "n_features": self.n_features,
            "k_features": self.k_features,
            "seed": self.seed,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, doc) -> "ExtraTreesModel":
        if doc.get("format_version") != 1:
            raise ValueError("unsupported classifier format")
        return cls(
            tuple(DecisionTree.from_dict(t) for t in doc["trees"]),
            int(doc["n_classes"]),
            int(doc["n_features"]),
            int(doc["k_features"]),
            int(doc["seed"]),
        )


def _check_matrix(X, n_features=None) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DegenerateInput("feature matrix must be 2-D")
    if n_features is not None and X.shape[1] != n_features:
        raise DegenerateInput(f"expected {n_features} features, got {X.shape[1]}")
    return X


def fit_extra_trees(X, y, n_trees: int = 10, seed: int = 0, n_classes: int | None = None) -> ExtraTreesModel:
    X = _check_matrix(X)
    y = np.ascontiguousarray(y, dtype=np.int64)
    n, d = X.shape
    if n == 0 or d == 0:
        raise DegenerateInput("empty feature matrix")
    if y.shape != (n,):
        raise DegenerateInput("label vector does not match the feature matrix")
    if not np.all(np.isfinite(X)):
        raise DegenerateInput("features must be finite")
    if n < 2 or np.unique(y).size < 2:
        raise DegenerateInput("need at least 2 instances of at least 2 classes")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    k = max(1, int(math.isqrt(d)))
    trees = []
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.Generator(np.random.PCG64(child))
        rand = rng.random(2 * k * n + 1)
        trees.append(DecisionTree(*_grow(X, y, n_classes, k, rand)))
    return ExtraTreesModel(tuple(trees), n_classes, d, k, int(seed))


def predict(model: ExtraTreesModel, X) -> np.ndarray:
    return model.predict(X)


def predict_proba(model: ExtraTreesModel, X) -> np.ndarray:
    return model.predict_proba(X)


def fit_predict_1nn(train_X, train_y, test_X) -> np.ndarray:
    """Label of the nearest training row (Euclidean); ties go to the lowest row index."""
    A = np.asarray(train_X, dtype=np.float64)
    B = np.asarray(test_X, dtype=np.float64)
    out = np.empty(B.shape[0], dtype=np.int64)
    labels = np.asarray(train_y)
    for start in range(0, B.shape[0], 256):
        block = B[start : start + 256]
        dist = ((block[:, None, :] - A[None, :, :]) ** 2).sum(axis=2)
        out[start : start + len(block)] = labels[np.argmin(dist, axis=1)]
    return out


def accuracy(pred, truth) -> float:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.size == 0:
        raise ValueError("prediction and truth must be non-empty and equally shaped")
    return float(np.mean(pred == truth))
