"""Evaluation metrics.

The popularity-fairness score is this package's own definition: the absolute
Pearson correlation between how often an item is rated and the mean score a
predictor gives it across all users.  Lower is fairer.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .baselines import Predictor
from .core import RatingMatrix


@dataclass(frozen=True)
class EvalReport:
    mae: float
    fairness: float
    pairwise_accuracy: float | None
    kendall_tau: float | None
    n_test: int
    seed: int
    runtime_ms: float

    def __post_init__(self):
        if self.n_test <= 0:
            raise ValueError("n_test must be positive")

    def as_dict(self) -> dict:
        return asdict(self)


def mae(predictor: Predictor, test: RatingMatrix) -> float:
    """Mean |prediction - star| with predictions clamped to [1, S]."""
    if len(test) == 0:
        raise ValueError("test set is empty")
    pred = np.clip(predictor.predict_many(test.users, test.items), 1.0, test.scale)
    return float(np.mean(np.abs(pred - test.stars)))


def _abs_pearson(x: np.ndarray, y: np.ndarray) -> float:
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        return 0.0
    x = x - x.mean()
    y = y - y.mean()
    r = float(x @ y) / float(np.sqrt((x @ x) * (y @ y)))
    return min(1.0, abs(r))


def fairness_popularity(predictor: Predictor, matrix: RatingMatrix) -> float:
    if matrix.n_items < 2:
        raise ValueError("fairness needs at least 2 items")
    popularity = matrix.item_counts().astype(np.float64)
    item_scores = predictor.score_grid(matrix.n_users, matrix.n_items).mean(axis=0)
    return _abs_pearson(item_scores, popularity)


def pairwise_accuracy(predictor: Predictor, test: RatingMatrix) -> float:
    """Share of within-user strict preference pairs ordered correctly; ties score 1/2."""
    pred = predictor.predict_many(test.users, test.items)
    hits = 0.0
    total = 0
    for u in range(test.n_users):
        pos = test.by_user[u]
        if pos.size < 2:
            continue
        s = test.stars[pos]
        p = pred[pos]
        mask = s[:, None] > s[None, :]
        n = int(mask.sum())
        if n == 0:
            continue
        diff = (p[:, None] - p[None, :])[mask]
        hits += float(np.sum(diff > 0) + 0.5 * np.sum(diff == 0))
        total += n
    if total == 0:
        raise ValueError("test set has no strict within-user preference pairs")
    return hits / total


def kendall_tau(ranking_a: Sequence[int], ranking_b: Sequence[int]) -> float:
    """Tau-a between two orderings of the same id set."""
    a = list(ranking_a)
    b = list(ranking_b)
    if len(set(a)) != len(a) or len(set(b)) != len(b):
        raise ValueError("rankings contain duplicate ids")
    if set(a) != set(b):
        raise ValueError("rankings must order the same id set")
    n = len(a)
    if n < 2:
        raise ValueError("need at least 2 ids")
    pos_b = {x: r for r, x in enumerate(b)}
    rb = np.array([pos_b[x] for x in a], dtype=np.int64)
    # a's positions are 0..n-1 in order, so concordance reduces to rb's ordering
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    signs = np.sign(rb[None, :] - rb[:, None])[upper]
    return float(signs.sum()) / (n * (n - 1) / 2)


def ranking_from_scores(scores) -> list[int]:
    """Ids ordered by decreasing score, ties by lowest id."""
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(scores.size), -scores)).tolist()
