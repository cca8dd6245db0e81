"""Train/test protocol, the five classifiers, and evaluation metrics.

All fits are deterministic given their seed and every predict is pure.
Tie-breaking rules are pinned everywhere so identical inputs give
identical models on any platform:

* KNN votes break ties by smallest summed distance, then smallest label.
* Tree splits maximize Gini decrease; equal gains keep the lowest feature
  index, then the lowest threshold (midpoints of adjacent sorted values).
* Forest/class votes break ties toward the smallest label.

The default split granularity keeps all superpixel rows of a sample on
one side: rows of one sample are near-duplicates, and splitting them
across train/test inflates accuracy.  Row-level splitting stays available
to mimic pixel-level protocols, but it warns.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ValidationError
from .features import DataMatrix
from .synth import stream


class Granularity(Enum):
    SAMPLE = "sample"
    ROW = "row"


@dataclass(frozen=True)
class Split:
    """Disjoint train/test unit ids (sample ids, or ``row:<i>`` for row level)."""

    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    fraction: float
    seed: int
    granularity: Granularity

    def __post_init__(self):
        overlap = set(self.train_ids) & set(self.test_ids)
        if overlap:
            raise ValidationError(f"split sides overlap: {sorted(overlap)[:5]}")

    def to_json(self) -> dict:
        return {
            "train_ids": list(self.train_ids),
            "test_ids": list(self.test_ids),
            "fraction": self.fraction,
            "seed": self.seed,
            "granularity": self.granularity.value,
        }


def stratified_split(
    matrix: DataMatrix,
    fraction: float = 0.75,
    seed: int = 0,
    granularity: Granularity = Granularity.SAMPLE,
) -> Split:
    """Per-label split sending ceil(fraction * n) units to the training side."""
    if not 0.0 < fraction < 1.0:
        raise ValidationError(f"fraction must lie in (0, 1): {fraction}")

    if granularity is Granularity.SAMPLE:
        units: dict[str, float] = {}
        for sid, label in matrix.row_meta:
            key = label.key
            if sid in units and units[sid] != key:
                raise ValidationError(f"sample {sid} carries inconsistent labels")
            units.setdefault(sid, key)
        unit_ids = list(units)
        unit_labels = np.array([units[u] for u in unit_ids])
    else:
        warnings.warn(
            "row-level split lets rows of one sample straddle train/test (leakage)"
        )
        unit_ids = [f"row:{i}" for i in range(matrix.n_rows)]
        unit_labels = matrix.label_keys()

    train, test = [], []
    for label in np.unique(unit_labels):
        members = [u for u, l in zip(unit_ids, unit_labels) if l == label]
        if len(members) < 2:
            raise ValidationError(
                f"label {label} has {len(members)} unit(s); need at least 2 to split"
            )
        n_train = math.ceil(fraction * len(members))
        if n_train >= len(members):
            n_train = len(members) - 1
        order = stream(seed, "split", label).permutation(len(members))
        shuffled = [members[i] for i in order]
        train.extend(shuffled[:n_train])
        test.extend(shuffled[n_train:])
    return Split(
        train_ids=tuple(train),
        test_ids=tuple(test),
        fraction=fraction,
        seed=seed,
        granularity=granularity,
    )


def split_matrix(matrix: DataMatrix, split: Split) -> tuple[DataMatrix, DataMatrix]:
    """Materialize the train and test row subsets of a matrix."""
    if split.granularity is Granularity.SAMPLE:
        train_set, test_set = set(split.train_ids), set(split.test_ids)
        train_idx = [i for i, (sid, _) in enumerate(matrix.row_meta) if sid in train_set]
        test_idx = [i for i, (sid, _) in enumerate(matrix.row_meta) if sid in test_set]
    else:
        train_idx = [int(u.split(":")[1]) for u in split.train_ids]
        test_idx = [int(u.split(":")[1]) for u in split.test_ids]
    return matrix.select_rows(train_idx), matrix.select_rows(test_idx)


# --------------------------------------------------------------------------
# Classifiers
# --------------------------------------------------------------------------


class KNearestNeighbors:
    """Euclidean k-nearest-neighbor majority vote."""

    def __init__(self, k: int = 5):
        self.k = k
        self.train_x = None
        self.train_y = None

    def fit(self, x: np.ndarray, y: np.ndarray) -> "KNearestNeighbors":
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if self.k < 1 or self.k > x.shape[0]:
            raise ValidationError(f"k={self.k} outside [1, n_train={x.shape[0]}]")
        self.train_x, self.train_y = x, y
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        if self.train_x is None:
            raise ValidationError("predict before fit")
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        # squared distances via |x|^2 + |t|^2 - 2 x.t, clipped at zero
        d2 = (
            (x**2).sum(axis=1)[:, None]
            + (self.train_x**2).sum(axis=1)[None, :]
            - 2.0 * (x @ self.train_x.T)
        )
        np.maximum(d2, 0.0, out=d2)
        if self.k < self.train_x.shape[0]:
            candidates = np.argpartition(d2, self.k - 1, axis=1)[:, : self.k]
        else:
            candidates = np.broadcast_to(
                np.arange(self.train_x.shape[0]), (x.shape[0], self.train_x.shape[0])
            )
        out = np.empty(x.shape[0])
        for i in range(x.shape[0]):
            nearest = candidates[i]
            votes = self.train_y[nearest]
            dists = d2[i, nearest]
            labels = np.unique(votes)
            counts = np.array([(votes == l).sum() for l in labels])
            sums = np.array([dists[votes == l].sum() for l in labels])
            best = counts == counts.max()
            tied = labels[best]
            tied_sums = sums[best]
            # ties: smallest summed distance, then smallest label (labels
            # are sorted, so argmin picks the smaller label on equal sums)
            out[i] = tied[np.argmin(tied_sums)]
        return out

    def to_json(self) -> dict:
        return {
            "kind": "knn",
            "k": self.k,
            "train_x": self.train_x.tolist(),
            "train_y": self.train_y.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "KNearestNeighbors":
        model = cls(k=obj["k"])
        return model.fit(np.array(obj["train_x"]), np.array(obj["train_y"]))


def _gini(counts: np.ndarray, total: int) -> float:
    p = counts / total
    return float(1.0 - (p * p).sum())


def _best_split(x, y_idx, n_classes, features, min_leaf):
    """Best (gain, feature, threshold) over candidate features, or None.

    Candidates are midpoints of adjacent distinct sorted values.  The
    scan order (features ascending, thresholds ascending, strict
    improvement) realizes the documented tie-break.
    """
    n = x.shape[0]
    total_counts = np.bincount(y_idx, minlength=n_classes)
    parent = _gini(total_counts, n)
    best = None
    for f in features:
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        boundaries = np.nonzero(xs[:-1] < xs[1:])[0]
        if boundaries.size == 0:
            continue
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), y_idx[order]] = 1.0
        left_counts = np.cumsum(onehot, axis=0)[boundaries]
        n_left = boundaries + 1
        n_right = n - n_left
        valid = (n_left >= min_leaf) & (n_right >= min_leaf)
        if not valid.any():
            continue
        right_counts = total_counts - left_counts
        gini_left = 1.0 - (left_counts**2).sum(axis=1) / n_left**2
        gini_right = 1.0 - (right_counts**2).sum(axis=1) / n_right**2
        gain = parent - (n_left * gini_left + n_right * gini_right) / n
        gain[~valid] = -np.inf
        pick = int(np.argmax(gain))
        if gain[pick] == -np.inf:
            continue
        threshold = (xs[boundaries[pick]] + xs[boundaries[pick] + 1]) / 2.0
        if best is None or gain[pick] > best[0]:
            best = (float(gain[pick]), int(f), float(threshold))
    return best


class DecisionTree:
    """CART-style binary tree with Gini impurity and pinned tie-breaks."""

    def __init__(self, max_depth: int | None = None, min_leaf: int = 1):
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.classes_ = None
        self.root = None
        self._feature_picker = None

    def fit(self, x: np.ndarray, y: np.ndarray) -> "DecisionTree":
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.classes_ = np.unique(y)
        y_idx = np.searchsorted(self.classes_, y)
        self.root = self._grow(x, y_idx, depth=0)
        return self

    def _pick_features(self, d: int):
        if self._feature_picker is None:
            return np.arange(d)
        return self._feature_picker(d)

    def _grow(self, x, y_idx, depth):
        counts = np.bincount(y_idx, minlength=self.classes_.size)
        majority = int(np.argmax(counts))  # argmax takes the smallest label on ties
        if counts.max() == y_idx.size:
            return {"leaf": majority}
        if self.max_depth is not None and depth >= self.max_depth:
            return {"leaf": majority}
        if y_idx.size < 2 * self.min_leaf:
            return {"leaf": majority}
        found = _best_split(x, y_idx, self.classes_.size, self._pick_features(x.shape[1]), self.min_leaf)
        if found is None:
            return {"leaf": majority}
        _, feature, threshold = found
        mask = x[:, feature] <= threshold
        return {
            "feature": feature,
            "threshold": threshold,
            "left": self._grow(x[mask], y_idx[mask], depth + 1),
            "right": self._grow(x[~mask], y_idx[~mask], depth + 1),
        }

    def predict(self, x: np.ndarray) -> np.ndarray:
        if self.root is None:
            raise ValidationError("predict before fit")
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.empty(x.shape[0], dtype=np.int64)
        for i, row in enumerate(x):
            node = self.root
            while "leaf" not in node:
                node = node["left"] if row[node["feature"]] <= node["threshold"] else node["right"]
            out[i] = node["leaf"]
        return self.classes_[out]

    def to_json(self) -> dict:
        return {
            "kind": "decision_tree",
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "classes": self.classes_.tolist(),
            "root": self.root,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DecisionTree":
        model = cls(max_depth=obj["max_depth"], min_leaf=obj["min_leaf"])
        model.classes_ = np.array(obj["classes"], dtype=np.float64)
        model.root = obj["root"]
        return model


class RandomForest:
    """Bagged trees with per-split feature subsampling and majority vote."""

    def __init__(
        self,
        n_trees: int = 100,
        mtry: int | None = None,
        bootstrap: bool = True,
        seed: int = 0,
        max_depth: int | None = None,
        min_leaf: int = 1,
    ):
        self.n_trees = n_trees
        self.mtry = mtry
        self.bootstrap = bootstrap
        self.seed = seed
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.trees: list[DecisionTree] = []
        self.classes_ = None

    def fit(self, x: np.ndarray, y: np.ndarray) -> "RandomForest":
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        n, d = x.shape
        self.classes_ = np.unique(y)
        mtry = self.mtry if self.mtry is not None else math.ceil(math.sqrt(d))
        mtry = min(mtry, d)
        self.trees = []
        for t in range(self.n_trees):
            rng = stream(self.seed, "forest", t)
            idx = rng.integers(0, n, n) if self.bootstrap else np.arange(n)
            tree = DecisionTree(max_depth=self.max_depth, min_leaf=self.min_leaf)
            if mtry < d:
                tree._feature_picker = lambda dim, r=rng, m=mtry: np.sort(
                    r.choice(dim, size=m, replace=False)
                )
            tree.fit(x[idx], y[idx])
            self.trees.append(tree)
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        if not self.trees:
            raise ValidationError("predict before fit")
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        votes = np.stack([tree.predict(x) for tree in self.trees])
        out = np.empty(x.shape[0])
        for i in range(x.shape[0]):
            labels, counts = np.unique(votes[:, i], return_counts=True)
            out[i] = labels[counts == counts.max()].min()
        return out

    def to_json(self) -> dict:
        return {
            "kind": "random_forest",
            "n_trees": self.n_trees,
            "mtry": self.mtry,
            "bootstrap": self.bootstrap,
            "seed": self.seed,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "classes": self.classes_.tolist(),
            "trees": [t.to_json() for t in self.trees],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RandomForest":
        model = cls(
            n_trees=obj["n_trees"],
            mtry=obj["mtry"],
            bootstrap=obj["bootstrap"],
            seed=obj["seed"],
            max_depth=obj["max_depth"],
            min_leaf=obj["min_leaf"],
        )
        model.classes_ = np.array(obj["classes"], dtype=np.float64)
        model.trees = [DecisionTree.from_json(t) for t in obj["trees"]]
        return model


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


class LogisticRegressionGD:
    """Multinomial softmax regression by full-batch gradient descent."""

    def __init__(
        self,
        l2: float = 1e-4,
        lr: float = 1.0,
        lr_decay: float = 1e-3,
        epochs: int = 5000,
        tol: float = 1e-6,
    ):
        self.l2 = l2
        self.lr = lr
        self.lr_decay = lr_decay
        self.epochs = epochs
        self.tol = tol
        self.classes_ = None
        self.weights = None
        self.bias = None

    def loss_and_grads(self, x, y_onehot, weights, bias):
        """Mean cross-entropy plus L2 on weights, with analytic gradients."""
        n = x.shape[0]
        probs = softmax(x @ weights.T + bias)
        eps = 1e-300
        data_loss = -np.log(np.maximum((probs * y_onehot).sum(axis=1), eps)).mean()
        loss = data_loss + 0.5 * self.l2 * (weights**2).sum()
        grad_w, grad_b = self._grads(x, y_onehot, probs, weights)
        return loss, grad_w, grad_b

    def _grads(self, x, y_onehot, probs, weights):
        n = x.shape[0]
        delta = (probs - y_onehot) / n
        grad_w = delta.T @ x + self.l2 * weights
        grad_b = delta.sum(axis=0)
        return grad_w, grad_b

    def fit(self, x: np.ndarray, y: np.ndarray) -> "LogisticRegressionGD":
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.classes_ = np.unique(y)
        c, d = self.classes_.size, x.shape[1]
        onehot = (y[:, None] == self.classes_[None, :]).astype(np.float64)
        weights = np.zeros((c, d))
        bias = np.zeros(c)
        for epoch in range(self.epochs):
            probs = softmax(x @ weights.T + bias)
            grad_w, grad_b = self._grads(x, onehot, probs, weights)
            if max(np.abs(grad_w).max(), np.abs(grad_b).max()) < self.tol:
                break
            lr = self.lr / (1.0 + self.lr_decay * epoch)
            weights -= lr * grad_w
            bias -= lr * grad_b
        self.weights, self.bias = weights, bias
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        if self.weights is None:
            raise ValidationError("predict before fit")
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        scores = x @ self.weights.T + self.bias
        return self.classes_[np.argmax(scores, axis=1)]

    def to_json(self) -> dict:
        return {
            "kind": "logistic",
            "l2": self.l2,
            "classes": self.classes_.tolist(),
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LogisticRegressionGD":
        model = cls(l2=obj["l2"])
        model.classes_ = np.array(obj["classes"], dtype=np.float64)
        model.weights = np.array(obj["weights"])
        model.bias = np.array(obj["bias"])
        return model


class LinearSVM:
    """Linear SVM: per-class margins, argmax prediction, subgradient descent.

    The default training objective is the multiclass (Crammer-Singer)
    hinge: each row pushes its true-class score at least one margin above
    the strongest rival.  A plain one-vs-rest hinge (``loss="ovr"``) is
    also available, but on ordered adulteration levels the middle classes
    are not one-vs-rest separable and their scores collapse, so the joint
    hinge is the default.
    """

    def __init__(
        self,
        c: float = 1.0,
        lr: float = 10.0,
        lr_decay: float = 1e-2,
        epochs: int = 1500,
        loss: str = "multiclass",
    ):
        if loss not in ("multiclass", "ovr"):
            raise ValidationError(f"unknown SVM loss {loss!r}")
        self.c = c
        self.lr = lr
        self.lr_decay = lr_decay
        self.epochs = epochs
        self.loss = loss
        self.classes_ = None
        self.weights = None
        self.bias = None

    def _grads_multiclass(self, x, y_idx, weights, bias, reg):
        n = x.shape[0]
        scores = x @ weights.T + bias
        true_scores = scores[np.arange(n), y_idx]
        rival = scores.copy()
        rival[np.arange(n), y_idx] = -np.inf
        rival_idx = np.argmax(rival, axis=1)
        violating = 1.0 + rival[np.arange(n), rival_idx] - true_scores > 0.0
        push = np.zeros_like(scores)
        rows = np.nonzero(violating)[0]
        push[rows, rival_idx[rows]] += 1.0
        push[rows, y_idx[rows]] -= 1.0
        grad_w = reg * weights + push.T @ x / n
        grad_b = push.sum(axis=0) / n
        return grad_w, grad_b

    def _grads_ovr(self, x, signs, weights, bias, reg):
        n = x.shape[0]
        margins = signs * (x @ weights.T + bias)
        violating = (margins < 1.0).astype(np.float64) * signs
        grad_w = reg * weights - (violating.T @ x) / n
        grad_b = -violating.sum(axis=0) / n
        return grad_w, grad_b

    def fit(self, x: np.ndarray, y: np.ndarray) -> "LinearSVM":
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.classes_ = np.unique(y)
        n, d = x.shape
        c_count = self.classes_.size
        y_idx = np.searchsorted(self.classes_, y)
        signs = np.where(y[:, None] == self.classes_[None, :], 1.0, -1.0)
        weights = np.zeros((c_count, d))
        bias = np.zeros(c_count)
        reg = 1.0 / (self.c * n)
        for epoch in range(self.epochs):
            if self.loss == "multiclass":
                grad_w, grad_b = self._grads_multiclass(x, y_idx, weights, bias, reg)
            else:
                grad_w, grad_b = self._grads_ovr(x, signs, weights, bias, reg)
            lr = self.lr / (1.0 + self.lr_decay * epoch)
            weights -= lr * grad_w
            bias -= lr * grad_b
        self.weights, self.bias = weights, bias
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        if self.weights is None:
            raise ValidationError("predict before fit")
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return self.classes_[np.argmax(x @ self.weights.T + self.bias, axis=1)]

    def to_json(self) -> dict:
        return {
            "kind": "linear_svm",
            "c": self.c,
            "loss": self.loss,
            "classes": self.classes_.tolist(),
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LinearSVM":
        model = cls(c=obj["c"], loss=obj.get("loss", "multiclass"))
        model.classes_ = np.array(obj["classes"], dtype=np.float64)
        model.weights = np.array(obj["weights"])
        model.bias = np.array(obj["bias"])
        return model


MODEL_KINDS = {
    "knn": KNearestNeighbors,
    "decision_tree": DecisionTree,
    "random_forest": RandomForest,
    "logistic": LogisticRegressionGD,
    "linear_svm": LinearSVM,
}


def model_from_json(obj: dict):
    kind = obj.get("kind")
    if kind not in MODEL_KINDS:
        raise ValidationError(f"unknown model kind {kind!r}")
    return MODEL_KINDS[kind].from_json(obj)


def save_model(model, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_json(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        return model_from_json(json.load(fh))


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts[i, j] = rows with true label i predicted as label j."""

    labels: tuple[float, ...]
    counts: np.ndarray = field(repr=False)

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (len(self.labels), len(self.labels)):
            raise ValidationError("confusion matrix must be C x C")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        total = self.total
        return float(np.trace(self.counts) / total) if total else 0.0

    def per_class_recall(self) -> dict[float, float]:
        out = {}
        for i, label in enumerate(self.labels):
            row = self.counts[i].sum()
            out[label] = float(self.counts[i, i] / row) if row else 0.0
        return out

    def to_json(self) -> dict:
        return {
            "labels": list(self.labels),
            "confusion": self.counts.tolist(),
            "accuracy": self.accuracy,
            "per_class_recall": {str(k): v for k, v in self.per_class_recall().items()},
        }


def evaluate(model, test: DataMatrix) -> ConfusionMatrix:
    """Confusion matrix of a fitted model over the test matrix rows."""
    truth = test.label_keys()
    predicted = model.predict(test.values)
    labels = tuple(sorted(set(truth.tolist()) | set(np.asarray(predicted).tolist())))
    index = {label: i for i, label in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(truth, predicted):
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(labels=labels, counts=counts)
