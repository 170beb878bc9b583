"""Downstream model and metrics: a from-scratch random forest plus task scores.

Trees are CART with exhaustive threshold search over midpoints of sorted
unique values (Gini for classification, variance reduction for regression);
the forest bags rows per tree and subsamples features per split.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import FeatureTable, REGRESSION
from .seeding import derive_rng

log = logging.getLogger(__name__)

F1_MICRO = "f1_micro"
ACCURACY = "accuracy"
RECALL_MACRO = "recall_macro"
ONE_MINUS_RAE = "one_minus_rae"

CLASSIFICATION_METRICS = (F1_MICRO, ACCURACY, RECALL_MACRO)


class MetricError(ValueError):
    """Raised for metric/task mismatches or undefined metric values."""


@dataclass
class ForestParams:
    n_trees: int = 20
    max_depth: int = 12
    min_leaf: int = 2


@dataclass
class _TreeNode:
    feature: int = -1
    threshold: float = 0.0
    left: "_TreeNode | None" = None
    right: "_TreeNode | None" = None
    value: float = 0.0
    is_leaf: bool = True


@dataclass
class ForestModel:
    trees: list[_TreeNode]
    task_kind: str
    n_classes: int = 0
    constant_features: bool = False

    @property
    def is_classification(self) -> bool:
        return self.task_kind != REGRESSION


def _gini_best_threshold(x_sorted, y_sorted, n_classes, min_leaf):
    """Best split position for one feature by Gini; returns (impurity, threshold)."""
    m = x_sorted.size
    onehot = np.zeros((m, n_classes))
    onehot[np.arange(m), y_sorted.astype(int)] = 1.0
    left_counts = np.cumsum(onehot, axis=0)[:-1]  # counts left of each boundary
    total = left_counts[-1] + onehot[-1]
    right_counts = total[None, :] - left_counts

    n_left = np.arange(1, m)
    n_right = m - n_left
    valid = (x_sorted[1:] > x_sorted[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not np.any(valid):
        return None
    gini_left = 1.0 - np.sum((left_counts / n_left[:, None]) ** 2, axis=1)
    gini_right = 1.0 - np.sum((right_counts / n_right[:, None]) ** 2, axis=1)
    weighted = (n_left * gini_left + n_right * gini_right) / m
    weighted[~valid] = np.inf
    best = int(np.argmin(weighted))
    threshold = 0.5 * (x_sorted[best] + x_sorted[best + 1])
    return float(weighted[best]), threshold


def _variance_best_threshold(x_sorted, y_sorted, min_leaf):
    """Best split position for one feature by summed child SSE."""
    m = x_sorted.size
    csum = np.cumsum(y_sorted)[:-1]
    csum2 = np.cumsum(y_sorted**2)[:-1]
    total = y_sorted.sum()
    total2 = (y_sorted**2).sum()

    n_left = np.arange(1, m)
    n_right = m - n_left
    valid = (x_sorted[1:] > x_sorted[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not np.any(valid):
        return None
    sse_left = csum2 - csum**2 / n_left
    sse_right = (total2 - csum2) - (total - csum) ** 2 / n_right
    score = sse_left + sse_right
    score[~valid] = np.inf
    best = int(np.argmin(score))
    threshold = 0.5 * (x_sorted[best] + x_sorted[best + 1])
    return float(score[best]), threshold


def _leaf_value(y, is_classification):
    if is_classification:
        return float(np.bincount(y.astype(int)).argmax())
    return float(y.mean())


def _grow_tree(X, y, depth, params, n_classes, n_candidates, rng, is_classification):
    node = _TreeNode()
    if (
        depth >= params.max_depth
        or y.size < 2 * params.min_leaf
        or np.unique(y).size == 1
    ):
        node.value = _leaf_value(y, is_classification)
        return node

    features = rng.choice(X.shape[1], size=n_candidates, replace=False)
    best = None
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs, ys = X[order, f], y[order]
        if is_classification:
            found = _gini_best_threshold(xs, ys, n_classes, params.min_leaf)
        else:
            found = _variance_best_threshold(xs, ys, params.min_leaf)
        if found is None:
            continue
        score, threshold = found
        if best is None or score < best[0]:
            best = (score, int(f), threshold)

    if best is None:
        node.value = _leaf_value(y, is_classification)
        return node

    _, feature, threshold = best
    go_left = X[:, feature] <= threshold
    node.is_leaf = False
    node.feature = feature
    node.threshold = threshold
    node.left = _grow_tree(
        X[go_left], y[go_left], depth + 1, params, n_classes, n_candidates, rng, is_classification
    )
    node.right = _grow_tree(
        X[~go_left], y[~go_left], depth + 1, params, n_classes, n_candidates, rng, is_classification
    )
    return node


def _tree_predict(node, X, out):
    if node.is_leaf:
        out[:] = node.value
        return
    go_left = X[:, node.feature] <= node.threshold
    if np.any(go_left):
        left_out = np.empty(int(go_left.sum()))
        _tree_predict(node.left, X[go_left], left_out)
        out[go_left] = left_out
    if not np.all(go_left):
        right_out = np.empty(int((~go_left).sum()))
        _tree_predict(node.right, X[~go_left], right_out)
        out[~go_left] = right_out


def train_forest(
    train: FeatureTable,
    mask,
    params: ForestParams,
    seed: int,
) -> ForestModel:
    """Train the forest on the masked feature columns; deterministic per seed."""
    mask = np.asarray(mask, dtype=bool)
    if not np.any(mask):
        raise ValueError("mask selects no features")
    if train.n_rows < 2:
        raise ValueError("need at least 2 training rows")
    X = train.X[:, mask]
    y = train.labels
    is_classification = train.is_classification
    n_classes = train.n_classes if is_classification else 0

    constant = bool(np.all(X.max(axis=0) - X.min(axis=0) <= 0.0))
    if constant:
        log.warning("all masked features are constant; forest predicts the base rate")

    d = X.shape[1]
    if is_classification:
        n_candidates = max(1, int(round(math.sqrt(d))))
    else:
        n_candidates = max(1, d // 3)
    n_candidates = min(n_candidates, d)

    trees = []
    for t in range(params.n_trees):
        rng = derive_rng(seed, "tree", t)
        bag = rng.integers(0, X.shape[0], size=X.shape[0])
        trees.append(
            _grow_tree(
                X[bag], y[bag], 0, params, n_classes, n_candidates, rng, is_classification
            )
        )
    return ForestModel(
        trees=trees,
        task_kind=train.task_kind,
        n_classes=n_classes,
        constant_features=constant,
    )


def predict(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """Majority vote (classification) or mean (regression) over the trees."""
    votes = np.empty((len(model.trees), X.shape[0]))
    for i, tree in enumerate(model.trees):
        _tree_predict(tree, X, votes[i])
    if model.is_classification:
        preds = np.empty(X.shape[0])
        for j in range(X.shape[0]):
            counts = np.bincount(votes[:, j].astype(int), minlength=model.n_classes)
            preds[j] = counts.argmax()
        return preds
    return votes.mean(axis=0)


def score(model: ForestModel, valid: FeatureTable, mask, metric: str) -> float:
    """Score the model on the validation rows with the requested metric."""
    mask = np.asarray(mask, dtype=bool)
    preds = predict(model, valid.X[:, mask])
    if metric == ONE_MINUS_RAE:
        if model.is_classification:
            raise MetricError("one_minus_rae is undefined for classification tasks")
        return one_minus_rae(valid.labels, preds)
    if model.is_classification:
        return classification_metric(valid.labels.astype(int), preds.astype(int), metric)
    raise MetricError(f"metric {metric!r} is undefined for regression tasks")


def classification_metric(y_true: np.ndarray, y_pred: np.ndarray, metric: str) -> float:
    if metric not in CLASSIFICATION_METRICS:
        raise MetricError(f"unknown classification metric {metric!r}")
    if metric == ACCURACY:
        return float(np.mean(y_true == y_pred))
    if metric == F1_MICRO:
        return f1_micro(y_true, y_pred)
    return recall_macro(y_true, y_pred)


def f1_micro(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """F1 from class-pooled TP/FP/FN; equals accuracy for single-label tasks."""
    classes = np.unique(np.concatenate([y_true, y_pred]))
    tp = fp = fn = 0
    for c in classes:
        tp += int(np.sum((y_pred == c) & (y_true == c)))
        fp += int(np.sum((y_pred == c) & (y_true != c)))
        fn += int(np.sum((y_pred != c) & (y_true == c)))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def recall_macro(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Unweighted mean of per-class recall over classes present in y_true."""
    recalls = []
    for c in np.unique(y_true):
        support = np.sum(y_true == c)
        recalls.append(float(np.sum((y_true == c) & (y_pred == c)) / support))
    return float(np.mean(recalls))


def one_minus_rae(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """1 - sum|y - yhat| / sum|y - ybar|; can be negative, errors on constant targets."""
    baseline = np.sum(np.abs(y_true - y_true.mean()))
    if baseline == 0.0:
        raise MetricError("undefined 1-RAE: constant validation targets")
    return float(1.0 - np.sum(np.abs(y_true - y_pred)) / baseline)


def default_metric(task_kind: str) -> str:
    return ONE_MINUS_RAE if task_kind == REGRESSION else F1_MICRO
