"""K-nearest-neighbour detection on flattened heatmap features.

Exact linear scan with Euclidean distance. Neighbour order is fully
deterministic: distance ties go to the lower training index, class-vote ties
go to "no object".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, KTooLarge, TooFewSamples
from .heatmap import NO_OBJECT

DEFAULT_K = 1
DEFAULT_SEED = 42


@dataclass(frozen=True, eq=False)
class KnnModel:
    features: np.ndarray
    labels: np.ndarray
    k: int = DEFAULT_K

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def fit(features, labels, k: int = DEFAULT_K) -> KnnModel:
    X = np.array(features, dtype=float)
    if X.ndim != 2:
        raise DimensionMismatch(f"features must be 2-D (n, d), got shape {X.shape}")
    y = np.array(labels)
    if len(y) != len(X):
        raise DimensionMismatch(f"{len(X)} feature rows but {len(y)} labels")
    if k < 1 or k > len(X):
        raise KTooLarge(f"k must satisfy 1 <= k <= n={len(X)}, got {k}")
    X.setflags(write=False)
    y.setflags(write=False)
    return KnnModel(X, y, int(k))


def _check_query(model: KnnModel, query) -> np.ndarray:
    q = np.asarray(query, dtype=float)
    if q.ndim != 1 or q.shape[0] != model.dim:
        raise DimensionMismatch(f"query has shape {q.shape}, model expects ({model.dim},)")
    return q


def squared_distances(model: KnnModel, query) -> np.ndarray:
    q = _check_query(model, query)
    diff = model.features - q
    return np.einsum("ij,ij->i", diff, diff)


def neighbors(model: KnnModel, query) -> np.ndarray:
    """Indices of the k nearest training rows, nearest first (stable on ties)."""
    d2 = squared_distances(model, query)
    return np.argsort(d2, kind="stable")[: model.k]


def classify(model: KnnModel, query) -> tuple[int, float]:
    """Majority vote among the k nearest neighbours.

    Returns ``(label, vote_fraction)``. A tied vote that includes
    :data:`~gazepercept.heatmap.NO_OBJECT` resolves to it; other ties go to
    the smallest label.
    """
    idx = neighbors(model, query)
    votes = model.labels[idx]
    values, counts = np.unique(votes, return_counts=True)
    top = counts.max()
    winners = values[counts == top]
    if NO_OBJECT in winners:
        label = NO_OBJECT
    else:
        label = winners.min()
    return int(label), float(top) / model.k


def regress(model: KnnModel, query) -> np.ndarray:
    """Unweighted mean of the k nearest targets."""
    idx = neighbors(model, query)
    targets = np.asarray(model.labels, dtype=float)
    return targets[idx].mean(axis=0)


def classify_batch(model: KnnModel, queries) -> tuple[np.ndarray, np.ndarray]:
    labels, fracs = zip(*(classify(model, q) for q in np.asarray(queries, dtype=float)))
    return np.array(labels), np.array(fracs)


def regress_batch(model: KnnModel, queries) -> np.ndarray:
    return np.array([regress(model, q) for q in np.asarray(queries, dtype=float)])


@dataclass
class CVReport:
    task: str
    k: int
    folds: int
    seed: int
    per_fold: list[float]
    mean: float
    std: float
    per_fold_component: list[list[float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "metric": "accuracy" if self.task == "classify" else "mean_absolute_error",
            "k": self.k,
            "folds": self.folds,
            "seed": self.seed,
            "per_fold": self.per_fold,
            "mean": self.mean,
            "std": self.std,
            "per_fold_component": self.per_fold_component,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def fold_assignment(n: int, folds: int, seed: int = DEFAULT_SEED) -> list[np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def cross_validate(
    features,
    labels,
    folds: int = 5,
    k: int = DEFAULT_K,
    seed: int = DEFAULT_SEED,
    task: str | None = None,
) -> CVReport:
    """Seeded k-fold cross-validation.

    ``task`` is inferred from the label shape: 1-D labels classify (accuracy),
    (n, 4) targets regress (mean absolute error, averaged over components).
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels)
    n = len(X)
    if n < folds or folds < 2:
        raise TooFewSamples(f"need at least {folds} samples and 2 folds, got n={n}")
    if task is None:
        task = "regress" if y.ndim == 2 else "classify"
    scores, comps = [], []
    for test_idx in fold_assignment(n, folds, seed):
        train = np.ones(n, dtype=bool)
        train[test_idx] = False
        model = fit(X[train], y[train], min(k, int(train.sum())))
        if task == "classify":
            pred, _ = classify_batch(model, X[test_idx])
            scores.append(float(np.mean(pred == y[test_idx])))
        else:
            pred = regress_batch(model, X[test_idx])
            err = np.abs(pred - y[test_idx].astype(float)).mean(axis=0)
            comps.append([float(v) for v in err])
            scores.append(float(err.mean()))
    return CVReport(task, k, folds, seed, scores, float(np.mean(scores)), float(np.std(scores)), comps)
