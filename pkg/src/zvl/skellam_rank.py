"""Skellam Rank: pairwise ranking through a Skellam pair mass.

Every predicted rating ``U_i . V_j`` is clamped to [eps, S] and divided by
``S`` to give a Poisson intensity in (0, 1].  Two predicted ratings with
intensities ``a`` (user i, item j) and ``b`` (user w, item k) are compared by

    exp(-(a + b)) * (a / b) ** (nu / 2) * I_nu(2 sqrt(a b)),   nu = a - b

where ``I_nu`` is the modified Bessel function of the first kind with real
order, summed from its power series.  Training descends on the sum of these
masses over strict within-user preferences ``R[i,j] > R[i,k]``.

With a real order the mass is not bounded by 1 (it exceeds 1 when ``a`` is
small and ``b`` moderate); it is a score, not a probability.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln

from .core import (
    FactorModel,
    NumericDivergence,
    RatingMatrix,
    TrainConfig,
    TrainTrace,
    init_factors,
    make_rng,
)
from .pareto_rank import preference_pairs, sample_user_items, training_triples_exist

SERIES_RTOL = 1e-16
SERIES_MAX_TERMS = 200


def _series_terms(order: float, arg: float):
    """Terms (x/2)^(2t+nu) / (t! Gamma(t+nu+1)), built by ratio recurrence."""
    if arg < 0:
        raise ValueError(f"arg must be >= 0, got {arg}")
    if order <= -1:
        raise ValueError(f"order must be > -1, got {order}")
    if arg == 0.0:
        if order == 0.0:
            yield 1.0
        elif order > 0.0:
            yield 0.0
        else:
            raise NumericDivergence(f"I_{order}(0) is infinite")
        return
    half = arg / 2.0
    term = math.exp(order * math.log(half) - math.lgamma(order + 1.0))
    q = half * half
    total = 0.0
    for t in range(SERIES_MAX_TERMS + 1):
        if not math.isfinite(term):
            raise NumericDivergence(f"non-finite Bessel series term at t={t}")
        yield term
        total += term
        if term < SERIES_RTOL * total:
            return
        term *= q / ((t + 1) * (t + 1 + order))


def bessel_i(order: float, arg: float) -> float:
    """Modified Bessel function of the first kind, I_order(arg), for order > -1."""
    total = 0.0
    for term in _series_terms(order, arg):
        total += term
    if not math.isfinite(total):
        raise NumericDivergence(f"non-finite I_{order}({arg})")
    return total


def bessel_i_dorder(order: float, arg: float) -> float:
    """d I_nu(x) / d nu, by differentiating the series term by term."""
    if arg == 0.0:
        if order > 0.0:
            return 0.0
        raise NumericDivergence("order derivative undefined at arg 0")
    log_half = math.log(arg / 2.0)
    total = 0.0
    for t, term in enumerate(_series_terms(order, arg)):
        total += term * (log_half - float(digamma(t + order + 1.0)))
    return total


@dataclass(frozen=True)
class SkellamParams:
    e_i: float
    e_w: float
    eps: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "e_i", max(float(self.e_i), self.eps))
        object.__setattr__(self, "e_w", max(float(self.e_w), self.eps))

    @property
    def order(self) -> float:
        return self.e_i - self.e_w

    @property
    def arg(self) -> float:
        return 2.0 * math.sqrt(self.e_i * self.e_w)


def intensity(ratings, scale: int, eps: float = 1e-8) -> float:
    r = np.asarray(ratings, dtype=np.float64)
    if r.size == 0:
        raise ValueError("intensity of an empty rating list")
    return max(float(np.mean(r)) / scale, eps)


def skellam_pmf(params: SkellamParams) -> float:
    a, b = params.e_i, params.e_w
    nu = params.order
    return math.exp(-(a + b)) * (a / b) ** (nu / 2.0) * bessel_i(nu, params.arg)


def skellam_pmf_int(k: int, mu1: float, mu2: float) -> float:
    """Standard integer-support Skellam mass P(N1 - N2 = k), N1 ~ Pois(mu1), N2 ~ Pois(mu2)."""
    return (math.exp(-(mu1 + mu2)) * (mu1 / mu2) ** (k / 2.0)
            * bessel_i(abs(k), 2.0 * math.sqrt(mu1 * mu2)))


def log_pmf_grad(a: float, b: float) -> tuple[float, float]:
    """Partial derivatives of log pmf with respect to e_i = a and e_w = b."""
    nu = a - b
    x = 2.0 * math.sqrt(a * b)
    i_nu = bessel_i(nu, x)
    d_order = bessel_i_dorder(nu, x) / i_nu
    # d/dx log I_nu = I_{nu+1}/I_nu + nu/x
    d_arg = bessel_i(nu + 1.0, x) / i_nu + nu / x
    log_ratio = math.log(a) - math.log(b)
    da = -1.0 + 0.5 * log_ratio + nu / (2.0 * a) + d_order + d_arg * math.sqrt(b / a)
    db = -1.0 - 0.5 * log_ratio - nu / (2.0 * b) - d_order + d_arg * math.sqrt(a / b)
    return da, db


def pair_intensities(U: np.ndarray, V: np.ndarray, i: int, j: int, w: int, k: int,
                     scale: int, eps: float = 1e-8):
    """Intensities of the predicted ratings R[i,j] and R[w,k], plus their raw dot products."""
    di = float(U[i] @ V[j])
    dw = float(U[w] @ V[k])
    a = max(min(max(di, eps), scale) / scale, eps)
    b = max(min(max(dw, eps), scale) / scale, eps)
    return a, b, di, dw


def skellam_term(model: FactorModel, i: int, j: int, w: int, k: int, scale: int,
                 eps: float = 1e-8) -> float:
    """Pair mass for R[i,j] against R[w,k], intensities from predicted ratings."""
    a, b, _, _ = pair_intensities(model.U, model.V, i, j, w, k, scale, eps)
    return skellam_pmf(SkellamParams(a, b, eps))


def skellam_term_grad(U: np.ndarray, V: np.ndarray, i: int, j: int, w: int, k: int,
                      scale: int, eps: float = 1e-8):
    """Gradient of :func:`skellam_term` as (dU_i, dU_w, dV_j, dV_k).

    Zero through a prediction that sits on a clamp boundary.  When ``i == w``
    the two user parts belong to the same row and must both be applied.
    """
    a, b, di, dw = pair_intensities(U, V, i, j, w, k, scale, eps)
    p = skellam_pmf(SkellamParams(a, b, eps))
    ga, gb = log_pmf_grad(a, b)
    ga = p * ga / scale if eps < di < scale else 0.0
    gb = p * gb / scale if eps < dw < scale else 0.0
    return ga * V[j], gb * V[k], ga * U[i], gb * U[w]


def bessel_i_array(order: np.ndarray, arg: np.ndarray) -> np.ndarray:
    """Vectorized :func:`bessel_i` for arg > 0.

    Elements that converge early keep accumulating (negligible) terms until
    the slowest one converges.
    """
    order = np.asarray(order, dtype=np.float64)
    half = np.asarray(arg, dtype=np.float64) / 2.0
    if np.any(half <= 0) or np.any(order <= -1):
        raise ValueError("bessel_i_array needs arg > 0 and order > -1")
    term = np.exp(order * np.log(half) - gammaln(order + 1.0))
    q = half * half
    total = term.copy()
    # terms shrink monotonically once t > x/2, so stop when every element has converged
    for t in range(SERIES_MAX_TERMS):
        term *= q / ((t + 1) * (t + 1 + order))
        total += term
        if np.all(term < SERIES_RTOL * total):
            break
    if not np.all(np.isfinite(total)):
        raise NumericDivergence("non-finite Bessel series")
    return total


def skellam_pmf_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    nu = a - b
    return np.exp(-(a + b)) * (a / b) ** (nu / 2.0) * bessel_i_array(nu, 2.0 * np.sqrt(a * b))


def skellam_loss(model: FactorModel, matrix: RatingMatrix, eps: float = 1e-8) -> float:
    """Sum of pair masses over users i, w and strict pairs R[i,j] > R[i,k].

    The mass compares the predicted ratings of (i, j) and (w, k); ``w`` runs
    over every user.
    """
    model.check_shape(matrix.n_users, matrix.n_items)
    S = matrix.scale
    # intensity of every predicted rating, users x items
    E = np.maximum(np.clip(model.U @ model.V.T, eps, S) / S, eps)
    total = 0.0
    for i in range(matrix.n_users):
        items, stars = matrix.user_ratings(i)
        if items.size < 2:
            continue
        js, ks = preference_pairs(items, stars)
        if js.size == 0:
            continue
        a = np.repeat(E[i, js], matrix.n_users)
        b = E[:, ks].T.ravel()
        total += float(np.sum(skellam_pmf_array(a, b)))
    return total


def skellam_train(matrix: RatingMatrix, config: TrainConfig) -> tuple[FactorModel, TrainTrace]:
    """Sampled pairwise training.

    Per epoch: sample users, sample and sort each user's items, pair each
    sampled user ``i`` with the next sampled user ``w`` (cyclically), and for
    every strict pair ``(j, k)`` in ``i``'s list step ``U_i, U_w, V_j, V_k``
    down the gradient of the mass comparing R[i,j] with R[w,k].
    """
    if not training_triples_exist(matrix):
        raise ValueError("all ratings tied: no strict preference pairs to train on")
    started = time.perf_counter()
    model = init_factors(matrix.n_users, matrix.n_items, config.dim, config.seed)
    trace = TrainTrace()
    rng = make_rng([config.seed, 3])
    U, V = model.mutable_copy()
    S = matrix.scale
    lr = config.lr
    for epoch in range(config.epochs):
        sample = list(sample_user_items(matrix, rng, config.user_sample, config.item_sample))
        for pos, (i, items_i, stars_i) in enumerate(sample):
            w = sample[(pos + 1) % len(sample)][0]
            js, ks = preference_pairs(items_i, stars_i)
            for j, k in zip(js.tolist(), ks.tolist()):
                g_ui, g_uw, g_vj, g_vk = skellam_term_grad(U, V, i, j, w, k, S, config.eps)
                U[i] -= lr * g_ui
                U[w] -= lr * g_uw
                V[j] -= lr * g_vj
                V[k] -= lr * g_vk
        if not (np.all(np.isfinite(U)) and np.all(np.isfinite(V))):
            raise NumericDivergence("non-finite factor in Skellam training", epoch=epoch)
        model = FactorModel(U.copy(), V.copy())
        trace.record(skellam_loss(model, matrix, config.eps), started)
    trace.model = model
    return model, trace
