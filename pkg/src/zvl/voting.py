"""Zipf rating simulation, Borda and range tallies, and the value-free tally predictor.

Modeling assumption used by :func:`generate_synthetic`: an item whose true
class is ``s`` stars draws ``s`` times the audience of a 1-star item in
expectation.  Popularity and quality are coupled on purpose; it is the
mechanism under test, not an observed fact.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .baselines import zipf_prior
from .core import IncidencePattern, RatingMatrix, TrainConfig, make_rng
from .metrics import kendall_tau, ranking_from_scores
from .zeromat import zeromat_train


@dataclass(frozen=True)
class OrdinalBallot:
    voter: int
    ranking: tuple[int, ...]


@dataclass
class Election:
    n_candidates: int
    ballots: list[OrdinalBallot] = field(default_factory=list)
    ratings: RatingMatrix | None = None
    tally: np.ndarray | None = None


@dataclass(frozen=True)
class SynthSpec:
    n_users: int
    n_items: int
    scale: int = 5
    density: float = 0.2
    noise_sd: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_users < 1 or self.n_items < 1:
            raise ValueError("n_users and n_items must be >= 1")
        if self.scale < 1:
            raise ValueError("scale must be >= 1")
        if not 0.0 < self.density <= 1.0:
            raise ValueError("density must lie in (0, 1]")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")


def zipf_star_sample(scale: int, rng: np.random.Generator, size=None):
    """Star s with probability s / (S(S+1)/2)."""
    if scale < 1:
        raise ValueError("scale must be >= 1")
    draws = 1 + rng.choice(scale, size=size, p=zipf_prior(scale))
    return int(draws) if size is None else draws.astype(np.int64)


def audience_probabilities(spec: SynthSpec) -> np.ndarray:
    """Per-user rating probability for items of each true class 1..S.

    Proportional to the class value and scaled so the expected fraction of
    rated pairs equals ``spec.density``.  ``density == 1`` means everyone
    rates everything.
    """
    if spec.density == 1.0:
        return np.ones(spec.scale)
    s = np.arange(1, spec.scale + 1, dtype=np.float64)
    mean_class = float(s @ zipf_prior(spec.scale))
    p = spec.density * s / mean_class
    if p.max() > 1.0:
        limit = mean_class / spec.scale
        raise ValueError(f"density {spec.density} needs a rating probability above 1 "
                         f"for {spec.scale}-star items; use density <= {limit:.4f} or exactly 1")
    return p


def generate_synthetic(spec: SynthSpec, return_classes: bool = False):
    probs = audience_probabilities(spec)
    rng = make_rng(spec.seed)
    classes = zipf_star_sample(spec.scale, rng, size=spec.n_items)
    users, items, stars = [], [], []
    for item, cls in enumerate(classes.tolist()):
        n_raters = int(rng.binomial(spec.n_users, probs[cls - 1]))
        raters = np.sort(rng.choice(spec.n_users, size=n_raters, replace=False))
        noisy = cls + rng.normal(0.0, spec.noise_sd, size=n_raters) if spec.noise_sd > 0 else np.full(n_raters, float(cls))
        users.append(raters)
        items.append(np.full(n_raters, item, dtype=np.int64))
        stars.append(np.clip(np.floor(noisy + 0.5), 1, spec.scale).astype(np.int64))
    cat = lambda parts: np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
    u, i, s = cat(users), cat(items), cat(stars)
    order = np.lexsort((i, u))
    matrix = RatingMatrix(spec.n_users, spec.n_items, spec.scale, u[order], i[order], s[order])
    return (matrix, classes) if return_classes else matrix


def winner(tally) -> int:
    """Highest score, ties to the lowest candidate id."""
    return int(ranking_from_scores(tally)[0])


def borda_tally(election: Election) -> np.ndarray:
    """Rank r on a ballot of length n earns n - r + 1 points; unlisted candidates earn 0."""
    scores = np.zeros(election.n_candidates, dtype=np.float64)
    for b in election.ballots:
        ranking = list(b.ranking)
        if not ranking:
            raise ValueError(f"ballot of voter {b.voter} is empty")
        if len(set(ranking)) != len(ranking):
            raise ValueError(f"ballot of voter {b.voter} lists a candidate twice")
        if min(ranking) < 0 or max(ranking) >= election.n_candidates:
            raise ValueError(f"ballot of voter {b.voter} names an unknown candidate")
        n = len(ranking)
        scores[ranking] += np.arange(n, 0, -1, dtype=np.float64)
    election.tally = scores
    return scores


def range_tally(matrix: RatingMatrix) -> np.ndarray:
    """Per-candidate sum of stars (items are candidates, users are voters)."""
    return np.bincount(matrix.items, weights=matrix.stars.astype(np.float64), minlength=matrix.n_items)


def expected_zipf_star(scale: int) -> float:
    return float(np.arange(1, scale + 1) @ zipf_prior(scale))


@dataclass(frozen=True)
class AgnosticPrediction:
    count_scores: np.ndarray
    zeromat_scores: np.ndarray | None


def default_zeromat_config(seed: int) -> TrainConfig:
    return TrainConfig(lr=0.01, epochs=10, dim=8, seed=seed)


def predict_tally_agnostic(pattern: IncidencePattern, scale: int, config: TrainConfig | None = None,
                           with_zeromat: bool = True) -> AgnosticPrediction:
    """Two value-free tally predictions.

    count: rater_count(c) * E[star] under the Zipf prior.
    zeromat: sum over c's raters of dot products from ZeroMat trained on the
    pattern, each clamped to [eps, S].  The lower clamp is eps rather than 1
    because ZeroMat dot products settle near sigma_u * sigma_v / 2, so a floor
    of 1 would flatten every prediction into the count predictor.
    """
    if len(pattern) == 0:
        raise ValueError("empty incidence pattern")
    count_scores = pattern.item_counts() * expected_zipf_star(scale)
    zm = None
    if with_zeromat:
        config = config or default_zeromat_config(0)
        state = zeromat_train(pattern, config)
        dots = np.clip(state.model.scores(pattern.users, pattern.items), config.eps, scale)
        zm = np.bincount(pattern.items, weights=dots, minlength=pattern.n_items)
    return AgnosticPrediction(count_scores, zm)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("ZVL_THREADS", "1")))
    except ValueError:
        return 1


def permutation_null(pred_scores, truth_ranking: Sequence[int], n_perm: int, seed: int) -> np.ndarray:
    """Kendall tau of randomly relabeled predictions against the truth.

    Each permutation has its own seed spawned from ``seed``, so the result
    does not depend on ``ZVL_THREADS``.
    """
    pred_scores = np.asarray(pred_scores, dtype=np.float64)
    children = np.random.SeedSequence(seed).spawn(n_perm)

    def one(child):
        shuffled = np.random.Generator(np.random.PCG64(child)).permutation(pred_scores)
        return kendall_tau(ranking_from_scores(shuffled), truth_ranking)

    workers = _threads()
    if workers == 1:
        return np.array([one(c) for c in children])
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return np.array(list(pool.map(one, children)))


@dataclass
class ClaimReport:
    spec: dict
    n_ratings: int
    tau_count: float
    tau_zeromat: float | None
    null_q99: float
    passed: bool
    count_tied: bool
    winner_truth: int
    winner_count: int
    winner_zeromat: int | None
    assumption: str = "rater count proportional to true star class (Zipf audience coupling)"

    def as_dict(self) -> dict:
        return asdict(self)


def claim_experiment(spec: SynthSpec, n_perm: int = 1000, zeromat_config: TrainConfig | None = None,
                     with_zeromat: bool = True) -> ClaimReport:
    """Can the range-voting tally be ranked without reading a single star?

    Success means the count predictor's Kendall tau against the true tally
    exceeds the 99th percentile of its permutation null.
    """
    matrix = generate_synthetic(spec)
    truth = range_tally(matrix)
    truth_rank = ranking_from_scores(truth)
    pattern = IncidencePattern(matrix.n_users, matrix.n_items, matrix.users, matrix.items)
    pred = predict_tally_agnostic(pattern, spec.scale, zeromat_config or default_zeromat_config(spec.seed),
                                  with_zeromat=with_zeromat)
    tau_count = kendall_tau(ranking_from_scores(pred.count_scores), truth_rank)
    tau_zm = None
    if pred.zeromat_scores is not None:
        tau_zm = kendall_tau(ranking_from_scores(pred.zeromat_scores), truth_rank)
    null = permutation_null(pred.count_scores, truth_rank, n_perm, spec.seed)
    q99 = float(np.quantile(null, 0.99))
    return ClaimReport(
        spec=asdict(spec),
        n_ratings=len(matrix),
        tau_count=tau_count,
        tau_zeromat=tau_zm,
        null_q99=q99,
        passed=bool(tau_count > q99),
        count_tied=bool(np.ptp(pred.count_scores) == 0),
        winner_truth=winner(truth),
        winner_count=winner(pred.count_scores),
        winner_zeromat=None if pred.zeromat_scores is None else winner(pred.zeromat_scores),
    )
