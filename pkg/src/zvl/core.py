"""Shared domain types, factor initialization, prediction and splitting.

All randomness in the package flows through :func:`make_rng`, which builds a
numpy ``Generator`` backed by PCG64.  Given the same integer seed it yields the
same stream on every platform numpy supports.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class NumericDivergence(ArithmeticError):
    """Raised when training produces a non-finite factor value."""

    def __init__(self, message: str, epoch: int | None = None, pair: tuple | None = None):
        self.epoch = epoch
        self.pair = pair
        context = []
        if epoch is not None:
            context.append(f"epoch={epoch}")
        if pair is not None:
            context.append(f"pair={pair}")
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator; ``seed`` may be an int or a sequence of ints."""
    return np.random.Generator(np.random.PCG64(seed))


def _frozen(a, dtype) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _group_index(keys: np.ndarray, size: int) -> tuple[np.ndarray, ...]:
    order = np.argsort(keys, kind="stable")
    counts = np.bincount(keys, minlength=size)
    groups = np.split(order, np.cumsum(counts)[:-1]) if size else []
    out = []
    for g in groups:
        g = np.asarray(g, dtype=np.int64)
        g.setflags(write=False)
        out.append(g)
    return tuple(out)


@dataclass(frozen=True, eq=False)
class RatingMatrix:
    """Sparse user x item integer star ratings.

    Entries are stored as three parallel arrays.  ``by_user[u]`` and
    ``by_item[i]`` hold positions into those arrays.
    """

    n_users: int
    n_items: int
    scale: int
    users: np.ndarray
    items: np.ndarray
    stars: np.ndarray
    by_user: tuple = field(init=False, repr=False)
    by_item: tuple = field(init=False, repr=False)

    def __post_init__(self):
        users = _frozen(self.users, np.int64)
        items = _frozen(self.items, np.int64)
        raw = np.asarray(self.stars)
        if raw.size and not np.all(np.equal(np.mod(raw, 1), 0)):
            raise ValueError("stars must be integers")
        stars = _frozen(raw, np.int64)
        if not (users.shape == items.shape == stars.shape) or users.ndim != 1:
            raise ValueError("users, items and stars must be 1-d arrays of equal length")
        if self.n_users < 0 or self.n_items < 0:
            raise ValueError("counts must be non-negative")
        if int(self.scale) < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")
        if users.size:
            if users.min() < 0 or users.max() >= self.n_users:
                raise ValueError("user id out of range")
            if items.min() < 0 or items.max() >= self.n_items:
                raise ValueError("item id out of range")
            if stars.min() < 1 or stars.max() > self.scale:
                raise ValueError(f"stars must lie in [1, {self.scale}]")
            keys = users * max(self.n_items, 1) + items
            uniq, counts = np.unique(keys, return_counts=True)
            if np.any(counts > 1):
                k = int(uniq[np.argmax(counts > 1)])
                raise ValueError(f"duplicate entry (user={k // self.n_items}, item={k % self.n_items})")
        object.__setattr__(self, "scale", int(self.scale))
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "stars", stars)
        object.__setattr__(self, "by_user", _group_index(users, self.n_users))
        object.__setattr__(self, "by_item", _group_index(items, self.n_items))

    @classmethod
    def from_entries(cls, entries: Iterable[tuple[int, int, int]], n_users: int,
                     n_items: int, scale: int) -> "RatingMatrix":
        entries = list(entries)
        if entries:
            u, i, s = zip(*entries)
        else:
            u = i = s = ()
        return cls(n_users, n_items, scale, np.array(u, dtype=np.int64),
                   np.array(i, dtype=np.int64), np.array(s, dtype=np.int64))

    def __len__(self) -> int:
        return int(self.users.size)

    def entries(self) -> list[tuple[int, int, int]]:
        return list(zip(self.users.tolist(), self.items.tolist(), self.stars.tolist()))

    def subset(self, positions: np.ndarray) -> "RatingMatrix":
        return RatingMatrix(self.n_users, self.n_items, self.scale, self.users[positions],
                            self.items[positions], self.stars[positions])

    def with_stars(self, stars: np.ndarray) -> "RatingMatrix":
        return RatingMatrix(self.n_users, self.n_items, self.scale, self.users, self.items, stars)

    def user_ratings(self, user: int) -> tuple[np.ndarray, np.ndarray]:
        """(items, stars) rated by ``user``."""
        pos = self.by_user[user]
        return self.items[pos], self.stars[pos]

    def item_counts(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.n_items)


@dataclass(frozen=True, eq=False)
class IncidencePattern:
    """Which (user, item) pairs were rated, without the star values."""

    n_users: int
    n_items: int
    users: np.ndarray
    items: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "users", _frozen(self.users, np.int64))
        object.__setattr__(self, "items", _frozen(self.items, np.int64))

    def __len__(self) -> int:
        return int(self.users.size)

    @property
    def pairs(self) -> set[tuple[int, int]]:
        return set(zip(self.users.tolist(), self.items.tolist()))

    def item_counts(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.n_items)


@dataclass(frozen=True, eq=False)
class FactorModel:
    """User factors ``U`` (n_users x dim) and item factors ``V`` (n_items x dim)."""

    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        U = _frozen(self.U, np.float64)
        V = _frozen(self.V, np.float64)
        if U.ndim != 2 or V.ndim != 2 or U.shape[1] != V.shape[1]:
            raise ValueError(f"incompatible factor shapes {U.shape} and {V.shape}")
        if not (np.all(np.isfinite(U)) and np.all(np.isfinite(V))):
            raise NumericDivergence("factor model contains non-finite values")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)

    @property
    def dim(self) -> int:
        return int(self.U.shape[1])

    @property
    def n_users(self) -> int:
        return int(self.U.shape[0])

    @property
    def n_items(self) -> int:
        return int(self.V.shape[0])

    def scores(self, users, items) -> np.ndarray:
        """Vectorized dot products for parallel id arrays."""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        return np.einsum("ij,ij->i", self.U[users], self.V[items])

    def check_shape(self, n_users: int, n_items: int) -> None:
        if (self.n_users, self.n_items) != (n_users, n_items):
            raise ValueError(f"model is {self.n_users}x{self.n_items}, data is {n_users}x{n_items}")

    def mutable_copy(self) -> tuple[np.ndarray, np.ndarray]:
        return self.U.copy(), self.V.copy()


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters shared by every trainer.

    ``user_sample``/``item_sample`` are only used by the ranking trainers;
    ``None`` means "all".
    """

    lr: float = 0.01
    alpha: float = 1.0
    sigma_u: float = 1.0
    sigma_v: float = 1.0
    epochs: int = 30
    dim: int = 8
    eps: float = 1e-8
    user_sample: int | None = None
    item_sample: int | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("alpha", "sigma_u", "sigma_v", "eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not self.lr >= 0:
            raise ValueError("lr must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        for name in ("user_sample", "item_sample"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class TrainTrace:
    losses: list[float] = field(default_factory=list)
    wall_clock: list[float] = field(default_factory=list)
    model: FactorModel | None = None

    def record(self, loss: float, started: float) -> None:
        self.losses.append(float(loss))
        self.wall_clock.append(time.perf_counter() - started)


def init_factors(n_users: int, n_items: int, dim: int, seed) -> FactorModel:
    """Uniform (0.01, 1.0) factors, so every initial dot product is positive."""
    if n_users < 1 or n_items < 1 or dim < 1:
        raise ValueError("n_users, n_items and dim must all be >= 1")
    rng = make_rng(seed)
    U = rng.uniform(0.01, 1.0, size=(n_users, dim))
    V = rng.uniform(0.01, 1.0, size=(n_items, dim))
    # uniform() is half-open at the top; lift any exact 0.01 off the boundary
    U[U <= 0.01] = np.nextafter(0.01, 1.0)
    V[V <= 0.01] = np.nextafter(0.01, 1.0)
    return FactorModel(U, V)


def dot_predict(model: FactorModel, user: int, item: int) -> float:
    if not 0 <= user < model.n_users:
        raise ValueError(f"user {user} out of range [0, {model.n_users})")
    if not 0 <= item < model.n_items:
        raise ValueError(f"item {item} out of range [0, {model.n_items})")
    return float(np.dot(model.U[user], model.V[item]))


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_holdout(matrix: RatingMatrix, train_fraction: float, seed) -> tuple[RatingMatrix, RatingMatrix]:
    """Random train/test partition of the entries.

    The train split holds ``round_half_up(train_fraction * N)`` entries.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    if len(matrix) == 0:
        raise ValueError("cannot split an empty matrix")
    n = len(matrix)
    n_train = round_half_up(train_fraction * n)
    perm = make_rng(seed).permutation(n)
    train_pos = np.sort(perm[:n_train])
    test_pos = np.sort(perm[n_train:])
    return matrix.subset(train_pos), matrix.subset(test_pos)


def strip_values(matrix: RatingMatrix) -> IncidencePattern:
    return IncidencePattern(matrix.n_users, matrix.n_items, matrix.users, matrix.items)


def check_finite(arrays: Sequence[np.ndarray], epoch=None, pair=None) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericDivergence("non-finite factor after update", epoch=epoch, pair=pair)
