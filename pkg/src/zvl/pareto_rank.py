"""Pareto Pairwise Ranking.

For every user ``i`` and every pair of rated items with ``R[i,j] > R[i,k]``
the loss charges ``1 / margin ** alpha`` where ``margin = U_i . (V_j - V_k)``.
Margins are clamped below at ``eps``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import (
    FactorModel,
    NumericDivergence,
    RatingMatrix,
    TrainConfig,
    TrainTrace,
    init_factors,
    make_rng,
)


@dataclass(frozen=True)
class RankTriple:
    user: int
    preferred_item: int
    other_item: int


def preference_pairs(items: np.ndarray, stars: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All ordered (j, k) with stars[j] > stars[k], as item id arrays."""
    a, b = np.nonzero(stars[:, None] > stars[None, :])
    return items[a], items[b]


def training_triples(matrix: RatingMatrix) -> list[RankTriple]:
    out = []
    for u in range(matrix.n_users):
        items, stars = matrix.user_ratings(u)
        for j, k in zip(*preference_pairs(items, stars)):
            out.append(RankTriple(u, int(j), int(k)))
    return out


def ppr_loss(model: FactorModel, matrix: RatingMatrix, alpha: float, eps: float = 1e-8) -> float:
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    model.check_shape(matrix.n_users, matrix.n_items)
    total = 0.0
    for u in range(matrix.n_users):
        items, stars = matrix.user_ratings(u)
        if items.size < 2:
            continue
        j, k = preference_pairs(items, stars)
        if j.size == 0:
            continue
        s = model.V @ model.U[u]
        margin = np.maximum(s[j] - s[k], eps)
        total += float(np.sum(margin ** -alpha))
    return total


def _step(U, V, i, j, k, step, eps):
    u = U[i]
    d = V[j] - V[k]
    g = max(float(u @ d), eps)
    c = step / g
    u_old = u.copy()
    u += c * d
    V[j] += c * u_old
    V[k] -= c * u_old


def ppr_update(model: FactorModel, triple: RankTriple, lr: float, alpha: float,
               eps: float = 1e-8) -> FactorModel:
    """Apply the three pairwise rules to one triple; returns a new model."""
    if triple.preferred_item == triple.other_item:
        raise ValueError("triple items must be distinct")
    U, V = model.mutable_copy()
    _step(U, V, triple.user, triple.preferred_item, triple.other_item, lr * alpha, eps)
    rows = (U[triple.user], V[triple.preferred_item], V[triple.other_item])
    if not all(np.all(np.isfinite(r)) for r in rows):
        raise NumericDivergence("non-finite factor after PPR update",
                                pair=(triple.user, triple.preferred_item, triple.other_item))
    return FactorModel(U, V)


def sample_user_items(matrix: RatingMatrix, rng: np.random.Generator, user_sample, item_sample):
    """Yield (user, items, stars) for one epoch's sampled users.

    Users are drawn without replacement (all of them when ``user_sample`` is
    None) and visited in the drawn order.  Each user's items are subsampled
    the same way and sorted by decreasing star, ties by item id.
    """
    eligible = np.array([u for u in range(matrix.n_users) if matrix.by_user[u].size >= 2],
                        dtype=np.int64)
    n = eligible.size if user_sample is None else min(user_sample, eligible.size)
    for u in rng.permutation(eligible)[:n].tolist():
        items, stars = matrix.user_ratings(u)
        if item_sample is not None and items.size > item_sample:
            pick = rng.choice(items.size, size=item_sample, replace=False)
            items, stars = items[pick], stars[pick]
        order = np.lexsort((items, -stars))
        yield u, items[order], stars[order]


def ppr_train(matrix: RatingMatrix, config: TrainConfig) -> tuple[FactorModel, TrainTrace]:
    if not training_triples_exist(matrix):
        raise ValueError("all ratings tied: no strict preference pairs to train on")
    started = time.perf_counter()
    model = init_factors(matrix.n_users, matrix.n_items, config.dim, config.seed)
    trace = TrainTrace()
    rng = make_rng([config.seed, 2])
    U, V = model.mutable_copy()
    step = config.lr * config.alpha
    for epoch in range(config.epochs):
        for u, items, stars in sample_user_items(matrix, rng, config.user_sample, config.item_sample):
            js, ks = preference_pairs(items, stars)
            for j, k in zip(js.tolist(), ks.tolist()):
                _step(U, V, u, j, k, step, config.eps)
        if not (np.all(np.isfinite(U)) and np.all(np.isfinite(V))):
            raise NumericDivergence("non-finite factor in PPR training", epoch=epoch)
        model = FactorModel(U.copy(), V.copy())
        trace.record(ppr_loss(model, matrix, config.alpha, config.eps), started)
    trace.model = model
    return model, trace


def training_triples_exist(matrix: RatingMatrix) -> bool:
    for u in range(matrix.n_users):
        stars = matrix.stars[matrix.by_user[u]]
        if stars.size >= 2 and stars.min() < stars.max():
            return True
    return False
