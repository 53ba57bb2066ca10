"""Clustering scores, density scores and ground-truth parameter tracking."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .dpm import (
    CountStats,
    MixtureState,
    expected_mixture_weights,
    predict_responsibilities,
    predictive_log_lik,
)

ACTIVE_THRESHOLD = 1.0


class MetricUndefined(ValueError):
    """The metric has no value for this input (e.g. silhouette of a single cluster)."""


@dataclass
class BatchMetrics:
    test_loglik_per_point: float
    silhouette: float
    nmi: float
    ari: float
    purity: float
    n_active_components: int
    e_rho_mean: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def hard_assign(phi) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest index."""
    return np.argmax(np.asarray(phi), axis=1)


def _contingency(pred, true) -> np.ndarray:
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ValueError("label vectors must be 1-D and of equal length")
    if pred.size == 0:
        raise ValueError("label vectors are empty")
    _, pi = np.unique(pred, return_inverse=True)
    _, ti = np.unique(true, return_inverse=True)
    table = np.zeros((pi.max() + 1, ti.max() + 1), dtype=np.int64)
    np.add.at(table, (pi, ti), 1)
    return table


def purity(pred_labels, true_labels) -> float:
    table = _contingency(pred_labels, true_labels)
    return float(table.max(axis=1).sum() / table.sum())


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def nmi(pred_labels, true_labels) -> float:
    """Mutual information normalised by the arithmetic mean of the two entropies."""
    table = _contingency(pred_labels, true_labels).astype(float)
    n = table.sum()
    rows, cols = table.sum(axis=1), table.sum(axis=0)
    h_pred, h_true = _entropy(rows), _entropy(cols)
    if h_pred == 0.0 and h_true == 0.0:
        return 1.0
    nz = table > 0
    outer = np.outer(rows, cols)
    mi = float(np.sum(table[nz] / n * (np.log(table[nz] * n) - np.log(outer[nz]))))
    denom = 0.5 * (h_pred + h_true)
    return float(np.clip(max(mi, 0.0) / denom, 0.0, 1.0))


def _comb2(x):
    x = np.asarray(x, dtype=float)
    return x * (x - 1.0) / 2.0


def ari(pred_labels, true_labels) -> float:
    """Adjusted Rand index from the pair-counting contingency formula."""
    table = _contingency(pred_labels, true_labels)
    n = table.sum()
    index = _comb2(table).sum()
    sum_a = _comb2(table.sum(axis=1)).sum()
    sum_b = _comb2(table.sum(axis=0)).sum()
    total = _comb2(n)
    expected = sum_a * sum_b / total if total > 0 else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        # both partitions are trivial in the same way (one cluster, or all singletons)
        return 1.0
    return float((index - expected) / (max_index - expected))


def silhouette(points, labels) -> float:
    """Mean silhouette with Euclidean distances; points in singleton clusters score 0."""
    x = np.asarray(points, dtype=float)
    labels = np.asarray(labels)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != labels.shape[0]:
        raise ValueError("points and labels differ in length")
    uniq, inv = np.unique(labels, return_inverse=True)
    if uniq.size < 2:
        raise MetricUndefined("silhouette needs at least two clusters")
    diff = x[:, None, :] - x[None, :, :]
    dist = np.sqrt(np.einsum("ijd,ijd->ij", diff, diff))
    onehot = np.zeros((x.shape[0], uniq.size))
    onehot[np.arange(x.shape[0]), inv] = 1.0
    sizes = onehot.sum(axis=0)
    sums = dist @ onehot
    own = sizes[inv]
    a = sums[np.arange(x.shape[0]), inv] / np.maximum(own - 1.0, 1.0)
    other = sums / sizes
    other[np.arange(x.shape[0]), inv] = np.inf
    b = other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    s[own <= 1] = 0.0
    return float(s.mean())


# ---------------------------------------------------------------------------
# Parameter tracking
# ---------------------------------------------------------------------------


@dataclass
class TrackedPair:
    component: int
    truth: int
    mean_error: float
    std_error: float


@dataclass
class TrackingResult:
    pairs: list[TrackedPair]
    shortfall: int

    @property
    def mean_errors(self) -> np.ndarray:
        return np.array([p.mean_error for p in self.pairs])

    @property
    def std_errors(self) -> np.ndarray:
        return np.array([p.std_error for p in self.pairs])


def track_parameters(state: MixtureState, counts: CountStats, true_means, true_stds) -> TrackingResult:
    """Match the most populated components to the true clusters.

    The ``k`` most populated components (``k`` true clusters) are paired with
    the clusters by a minimum total mean-distance assignment. Components
    below the activity threshold are left out and reported as a shortfall.
    """
    true_means = np.atleast_2d(np.asarray(true_means, dtype=float))
    true_stds = np.asarray(true_stds, dtype=float)
    k = true_means.shape[0]
    order = np.argsort(-counts.e_nk, kind="stable")[:k]
    order = order[counts.e_nk[order] >= ACTIVE_THRESHOLD]
    est_means = state.means[order]
    est_stds = np.sqrt(state.b[order] / state.a[order])
    cost = np.sqrt(((est_means[:, None, :] - true_means[None, :, :]) ** 2).sum(-1))
    rows, cols = linear_sum_assignment(cost)
    pairs = [
        TrackedPair(int(order[r]), int(c), float(cost[r, c]), float(abs(est_stds[r] - true_stds[c])))
        for r, c in zip(rows, cols)
    ]
    return TrackingResult(pairs=pairs, shortfall=k - len(pairs))


# ---------------------------------------------------------------------------
# Per-batch evaluation
# ---------------------------------------------------------------------------


def n_active(counts: CountStats) -> int:
    return int(np.sum(counts.e_nk >= ACTIVE_THRESHOLD))


def evaluate_batch(state: MixtureState, counts: CountStats, alpha: float, test, test_labels, e_rho_mean=None) -> BatchMetrics:
    """Score a fitted batch on its held-out points.

    Clustering scores use hard assignments from one local pass over the test
    points with the globals frozen. Points labelled ``-1`` are ignored by the
    label-based scores; a score with no defined value is NaN.
    """
    test = np.asarray(test, dtype=float)
    test_labels = np.asarray(test_labels)
    weights, _ = expected_mixture_weights(counts, alpha)
    loglik = predictive_log_lik(test, state, weights)
    pred = hard_assign(predict_responsibilities(test, state, counts, alpha))
    try:
        sil = silhouette(test, pred)
    except MetricUndefined:
        sil = float("nan")
    known = test_labels >= 0
    if np.any(known):
        p, t = pred[known], test_labels[known]
        scores = (nmi(p, t), ari(p, t), purity(p, t))
    else:
        scores = (float("nan"),) * 3
    return BatchMetrics(
        test_loglik_per_point=loglik,
        silhouette=sil,
        nmi=scores[0],
        ari=scores[1],
        purity=scores[2],
        n_active_components=n_active(counts),
        e_rho_mean=e_rho_mean,
    )
