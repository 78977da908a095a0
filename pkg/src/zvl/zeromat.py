"""ZeroMat: matrix factorization trained on the incidence pattern alone.

The model maximizes

    sum_{(i,j) rated} log(U_i . V_j) - sum_i |U_i|^2 / sigma_u^2 - sum_j |V_j|^2 / sigma_v^2

by stochastic ascent, one rated pair at a time.  Star values are never read.
The Gaussian normalizing constants are dropped, and the prior terms carry no
factor 1/2 so that sigma = 1 reproduces the ``- 2 * U_i`` step exactly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    FactorModel,
    IncidencePattern,
    NumericDivergence,
    TrainConfig,
    TrainTrace,
    init_factors,
    make_rng,
)


@dataclass(frozen=True)
class ZeroMatState:
    model: FactorModel
    config: TrainConfig
    trace: TrainTrace


def zeromat_loglik(model: FactorModel, pattern: IncidencePattern, sigma_u: float = 1.0,
                   sigma_v: float = 1.0, eps: float = 1e-8) -> float:
    model.check_shape(pattern.n_users, pattern.n_items)
    g = np.maximum(model.scores(pattern.users, pattern.items), eps)
    return float(np.sum(np.log(g))
                 - np.sum(model.U ** 2) / sigma_u ** 2
                 - np.sum(model.V ** 2) / sigma_v ** 2)


def _step(U, V, i, j, lr, eps, inv_su2, inv_sv2):
    u = U[i]
    v = V[j]
    g = max(float(u @ v), eps)
    u_old = u.copy()
    u += lr * (v / g - 2.0 * inv_su2 * u)
    v += lr * (u_old / g - 2.0 * inv_sv2 * v)


def zeromat_update(state: ZeroMatState, user: int, item: int) -> ZeroMatState:
    """One ascent step on the rated pair ``(user, item)``; returns a new state.

    The item rule uses the user vector from before the step.
    """
    cfg = state.config
    U, V = state.model.mutable_copy()
    _step(U, V, user, item, cfg.lr, cfg.eps, 1.0 / cfg.sigma_u ** 2, 1.0 / cfg.sigma_v ** 2)
    if not (np.all(np.isfinite(U[user])) and np.all(np.isfinite(V[item]))):
        raise NumericDivergence("non-finite factor after ZeroMat update", pair=(user, item))
    return replace(state, model=FactorModel(U, V))


def zeromat_train(pattern: IncidencePattern, config: TrainConfig) -> ZeroMatState:
    if len(pattern) == 0:
        raise ValueError("ZeroMat needs a nonempty incidence pattern")
    started = time.perf_counter()
    model = init_factors(pattern.n_users, pattern.n_items, config.dim, config.seed)
    trace = TrainTrace()
    # separate stream so the visit order does not depend on the init draws
    rng = make_rng([config.seed, 1])
    U, V = model.mutable_copy()
    users = pattern.users.tolist()
    items = pattern.items.tolist()
    inv_su2 = 1.0 / config.sigma_u ** 2
    inv_sv2 = 1.0 / config.sigma_v ** 2
    for epoch in range(config.epochs):
        for p in rng.permutation(len(users)).tolist():
            _step(U, V, users[p], items[p], config.lr, config.eps, inv_su2, inv_sv2)
        if not (np.all(np.isfinite(U)) and np.all(np.isfinite(V))):
            raise NumericDivergence("non-finite factor in ZeroMat training", epoch=epoch)
        model = FactorModel(U.copy(), V.copy())
        trace.record(zeromat_loglik(model, pattern, config.sigma_u, config.sigma_v, config.eps), started)
    trace.model = model
    return ZeroMatState(model, config, trace)
