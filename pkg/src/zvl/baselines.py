"""Comparison predictors: classic regularized MF and trivial heuristics."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .core import (
    FactorModel,
    IncidencePattern,
    NumericDivergence,
    RatingMatrix,
    TrainConfig,
    TrainTrace,
    init_factors,
    make_rng,
)

KINDS = ("factor-model", "global-mean", "item-mean", "uniform-random")


def zipf_prior(scale: int) -> np.ndarray:
    """P(star = s) = s / (S(S+1)/2) for s = 1..S."""
    s = np.arange(1, scale + 1, dtype=np.float64)
    return s / s.sum()


@dataclass(frozen=True)
class StarCalibration:
    """Maps raw model scores onto stars by thresholds.

    A score above ``thresholds[t]`` (and not above the next one) maps to star
    ``t + 2``.  Built by :func:`zipf_calibration` without reading any star.
    """

    thresholds: tuple[float, ...]

    def apply(self, scores: np.ndarray) -> np.ndarray:
        return 1.0 + np.searchsorted(np.asarray(self.thresholds), scores, side="left")


def zipf_calibration(model: FactorModel, pattern: IncidencePattern, scale: int) -> StarCalibration:
    """Quantile-match the model's scores on rated pairs to the Zipf star prior."""
    raw = np.sort(model.scores(pattern.users, pattern.items))
    cum = np.cumsum(zipf_prior(scale))[:-1]
    return StarCalibration(tuple(float(np.quantile(raw, q)) for q in cum))


@dataclass(frozen=True)
class Predictor:
    """A scoring rule over (user, item) pairs.

    ``payload`` depends on ``kind``: a FactorModel, a global mean, a per-item
    mean array, or an RNG seed.
    """

    kind: str
    payload: object
    scale: int
    calibration: StarCalibration | None = field(default=None)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown predictor kind {self.kind!r}")

    @classmethod
    def factor(cls, model: FactorModel, scale: int, calibration=None) -> "Predictor":
        return cls("factor-model", model, scale, calibration)

    @classmethod
    def global_mean(cls, matrix: RatingMatrix) -> "Predictor":
        return cls("global-mean", float(np.mean(matrix.stars)), matrix.scale)

    @classmethod
    def item_mean(cls, matrix: RatingMatrix) -> "Predictor":
        counts = matrix.item_counts()
        sums = np.bincount(matrix.items, weights=matrix.stars, minlength=matrix.n_items)
        glob = float(np.mean(matrix.stars)) if len(matrix) else (matrix.scale + 1) / 2
        means = np.where(counts > 0, sums / np.maximum(counts, 1), glob)
        return cls("item-mean", means, matrix.scale)

    @classmethod
    def uniform_random(cls, seed: int, scale: int) -> "Predictor":
        return cls("uniform-random", int(seed), scale)

    def predict_many(self, users, items) -> np.ndarray:
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if self.kind == "factor-model":
            raw = self.payload.scores(users, items)
            return self.calibration.apply(raw) if self.calibration else raw
        if self.kind == "global-mean":
            return np.full(users.shape, self.payload, dtype=np.float64)
        if self.kind == "item-mean":
            return np.asarray(self.payload, dtype=np.float64)[items]
        return 1.0 + (self.scale - 1.0) * _pair_uniform(self.payload, users, items)

    def predict(self, user: int, item: int) -> float:
        return float(self.predict_many([user], [item])[0])

    def score_grid(self, n_users: int, n_items: int) -> np.ndarray:
        """Scores for every (user, item), shape (n_users, n_items)."""
        if self.kind == "factor-model":
            raw = self.payload.U @ self.payload.V.T
            return self.calibration.apply(raw) if self.calibration else raw
        if self.kind == "global-mean":
            return np.full((n_users, n_items), self.payload, dtype=np.float64)
        if self.kind == "item-mean":
            return np.tile(np.asarray(self.payload, dtype=np.float64), (n_users, 1))
        uu, ii = np.meshgrid(np.arange(n_users), np.arange(n_items), indexing="ij")
        return self.predict_many(uu.ravel(), ii.ravel()).reshape(n_users, n_items)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def _pair_uniform(seed: int, users: np.ndarray, items: np.ndarray) -> np.ndarray:
    """Uniform [0, 1) per (seed, user, item), independent of query order."""
    with np.errstate(over="ignore"):
        h = _splitmix64(np.full(users.shape, seed, dtype=np.uint64))
        h = _splitmix64(h ^ users.astype(np.uint64))
        h = _splitmix64(h ^ items.astype(np.uint64))
    return (h >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def mf_loss(model: FactorModel, matrix: RatingMatrix, sigma_u: float = 1.0, sigma_v: float = 1.0) -> float:
    err = matrix.stars - model.scores(matrix.users, matrix.items)
    return float(np.sum(err ** 2) + np.sum(model.U ** 2) / sigma_u ** 2 + np.sum(model.V ** 2) / sigma_v ** 2)


def mf_train(matrix: RatingMatrix, config: TrainConfig) -> tuple[FactorModel, TrainTrace]:
    """Classic SGD matrix factorization on observed stars.

    Regularization strengths are ``1 / sigma_u**2`` and ``1 / sigma_v**2``.
    """
    if len(matrix) == 0:
        raise ValueError("matrix is empty")
    started = time.perf_counter()
    model = init_factors(matrix.n_users, matrix.n_items, config.dim, config.seed)
    trace = TrainTrace()
    rng = make_rng([config.seed, 4])
    U, V = model.mutable_copy()
    lam_u = 1.0 / config.sigma_u ** 2
    lam_v = 1.0 / config.sigma_v ** 2
    users = matrix.users.tolist()
    items = matrix.items.tolist()
    stars = matrix.stars.astype(np.float64).tolist()
    lr = config.lr
    for epoch in range(config.epochs):
        for p in rng.permutation(len(users)).tolist():
            u = U[users[p]]
            v = V[items[p]]
            e = stars[p] - float(u @ v)
            u_old = u.copy()
            u += lr * (e * v - lam_u * u)
            v += lr * (e * u_old - lam_v * v)
        if not (np.all(np.isfinite(U)) and np.all(np.isfinite(V))):
            raise NumericDivergence("non-finite factor in MF training", epoch=epoch)
        model = FactorModel(U.copy(), V.copy())
        trace.record(mf_loss(model, matrix, config.sigma_u, config.sigma_v), started)
    trace.model = model
    return model, trace
