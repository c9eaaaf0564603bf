"""
Stochastic ranking policies.

Each policy turns a static ranking (or the judgments, for the oracle) into a
distribution over permutations. Policies are immutable descriptions; every
sampler takes an explicit numpy Generator owned by the caller.
"""

import itertools
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp
from tqdm import tqdm

from config.settings import (
    DEFAULT_RERANK_DEPTH, ALLOW_IDENTITY_SWAPS, MC_CHUNK_SIZE, RT_SERIES_TOLERANCE, RT_SERIES_MAX_TERMS,
)
from src.exceptions import ConfigurationError, DegenerateScoresError, ExposureError
from src.exposure import (
    BrowsingModel, Ranking, RelevanceJudgments, expected_exposure_mc, query_seed, target_exposure,
)
from src.metrics import (
    CurvePoint, GroupAttribution, SweepCurve, ee_breakdown, group_fairness_loss, normalize_curve_point,
    static_metric_matrix,
)
from src.utils.logger import get_policy_logger

logger = get_policy_logger()

POLICY_KINDS = ("det", "pl", "rt", "oracle")
SHIFT_FRACTION = 1e-6


@dataclass(frozen=True)
class ScoredRun:
    """Retrieval scores of one query, sorted by descending score."""

    query_id: str
    entries: Tuple[Tuple[str, float], ...]
    tag: str = ""

    def __post_init__(self):
        entries = [(str(d), float(s)) for d, s in self.entries]
        documents = [d for d, _ in entries]
        if len(set(documents)) != len(documents):
            raise ConfigurationError(f"Run for query {self.query_id} repeats a document")
        if not all(math.isfinite(s) for _, s in entries):
            raise ConfigurationError(f"Run for query {self.query_id} has non-finite scores")
        # stable sort keeps the given order among ties
        entries.sort(key=lambda e: -e[1])
        object.__setattr__(self, "entries", tuple(entries))

    @classmethod
    def from_scores(
        cls,
        query_id: str,
        scores: Union[Mapping[str, float], Iterable[Tuple[str, float]]],
        tag: str = ""
    ) -> "ScoredRun":
        items = scores.items() if isinstance(scores, Mapping) else scores
        return cls(query_id, tuple(items), tag)

    def __len__(self) -> int:
        return len(self.entries)

    @cached_property
    def documents(self) -> Tuple[str, ...]:
        return tuple(d for d, _ in self.entries)

    @cached_property
    def scores(self) -> np.ndarray:
        scores = np.array([s for _, s in self.entries], dtype=np.float64)
        scores.setflags(write=False)
        return scores

    def ranking(self) -> Ranking:
        """The static ranking."""
        return Ranking(self.documents)


class Policy(ABC):
    """A distribution over rankings of a fixed document list."""

    kind = ""
    enumerable = False

    def __init__(self, documents: Sequence[str]):
        self.documents = tuple(documents)

    @property
    def param(self) -> float:
        return float("nan")

    @abstractmethod
    def sample_indices(self, rng: np.random.Generator, n_samples: int) -> np.ndarray:
        """
        Draw rankings as positions into self.documents.

        Returns:
            (n_samples, len(documents)) integer array, one ranking per row
        """

    def sample(self, rng: np.random.Generator) -> Ranking:
        order = self.sample_indices(rng, 1)[0]
        return Ranking(tuple(self.documents[i] for i in order))

    def support(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Every permutation with nonzero probability.

        Returns:
            (orders, probabilities): (k, len(documents)) positions and (k,) weights
        """
        raise NotImplementedError(f"{type(self).__name__} cannot enumerate its support")

    def __repr__(self) -> str:
        return f"{type(self).__name__}(n={len(self.documents)}, param={self.param:g})"


def _effective_depth(rerank_depth: int, length: int) -> int:
    if rerank_depth < 1:
        raise ConfigurationError(f"rerank_depth must be positive, got {rerank_depth}")
    return min(rerank_depth, length)


def _with_tail(prefix: np.ndarray, length: int) -> np.ndarray:
    """Append the untouched documents below the reranked prefix."""
    depth = prefix.shape[1]
    if depth == length:
        return prefix
    tail = np.broadcast_to(np.arange(depth, length), (prefix.shape[0], length - depth))
    return np.concatenate([prefix, tail], axis=1)


class DeterministicPolicy(Policy):
    """Point mass on the static ranking."""

    kind = "det"
    enumerable = True

    def sample_indices(self, rng: np.random.Generator, n_samples: int) -> np.ndarray:
        return np.tile(np.arange(len(self.documents)), (n_samples, 1))

    def support(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.arange(len(self.documents))[None, :], np.ones(1)


def preprocess_scores(scores: np.ndarray) -> np.ndarray:
    """
    Make retrieval scores strictly positive while preserving their order.

    When any score is nonpositive, scores are shifted by -min plus a small
    fraction of the score range.

    Raises:
        DegenerateScoresError: every score is zero after preprocessing
    """
    scores = np.asarray(scores, dtype=np.float64)
    if np.any(scores <= 0.0):
        spread = scores.max() - scores.min()
        scores = scores - scores.min() + SHIFT_FRACTION * spread
    if not np.any(scores > 0.0):
        raise DegenerateScoresError("All retrieval scores are zero after preprocessing")
    return scores


class PlackettLucePolicy(Policy):
    """
    Plackett-Luce sampling over the top of a ranking.

    Sampling weights are held as logits, log s_d^alpha, so large exponents
    stay finite. Rankings are drawn with the Gumbel-max construction, which
    matches sequential sampling without replacement.
    """

    kind = "pl"
    enumerable = True

    def __init__(
        self,
        documents: Sequence[str],
        logits: np.ndarray,
        rerank_depth: int = DEFAULT_RERANK_DEPTH,
        alpha: float = float("nan")
    ):
        super().__init__(documents)
        logits = np.asarray(logits, dtype=np.float64)
        if logits.shape != (len(self.documents),) or not np.all(np.isfinite(logits)):
            raise ConfigurationError("Plackett-Luce logits must be finite, one per document")
        self.depth = _effective_depth(rerank_depth, len(self.documents))
        self.logits = logits[:self.depth]
        self.alpha = alpha

    @classmethod
    def from_run(
        cls,
        run: ScoredRun,
        alpha: float,
        rerank_depth: int = DEFAULT_RERANK_DEPTH
    ) -> "PlackettLucePolicy":
        """p(d) proportional to s_d^alpha over the top rerank_depth documents."""
        if not (alpha >= 0.0 and math.isfinite(alpha)):
            raise ConfigurationError(f"alpha must be finite and nonnegative, got {alpha}")
        scores = preprocess_scores(run.scores)
        with np.errstate(divide="ignore"):
            logits = alpha * np.log(scores) if alpha > 0 else np.zeros(len(scores))
        return cls(run.documents, logits, rerank_depth, alpha)

    @classmethod
    def from_logits(
        cls,
        documents: Sequence[str],
        logits: np.ndarray,
        alpha: float = 1.0,
        rerank_depth: Optional[int] = None
    ) -> "PlackettLucePolicy":
        """p(d) proportional to exp(alpha * logit_d), e.g. over model scores."""
        if not (alpha >= 0.0 and math.isfinite(alpha)):
            raise ConfigurationError(f"alpha must be finite and nonnegative, got {alpha}")
        order = np.argsort(-np.asarray(logits, dtype=np.float64), kind="stable")
        documents = [documents[i] for i in order]
        logits = alpha * np.asarray(logits, dtype=np.float64)[order]
        return cls(documents, logits, rerank_depth or len(documents), alpha)

    @property
    def param(self) -> float:
        return self.alpha

    def sample_indices(self, rng: np.random.Generator, n_samples: int) -> np.ndarray:
        keys = self.logits[None, :] + rng.gumbel(size=(n_samples, self.depth))
        prefix = np.argsort(-keys, axis=1, kind="stable")
        return _with_tail(prefix, len(self.documents))

    def log_probability(self, orders: np.ndarray) -> np.ndarray:
        """Log-probability of prefix orders under sequential renormalization."""
        chosen = self.logits[orders]
        remaining = np.logaddexp.accumulate(chosen[:, ::-1], axis=1)[:, ::-1]
        return (chosen - remaining).sum(axis=1)

    def first_position_probabilities(self) -> np.ndarray:
        return np.exp(self.logits - logsumexp(self.logits))

    def support(self) -> Tuple[np.ndarray, np.ndarray]:
        prefixes = np.array(list(itertools.permutations(range(self.depth))), dtype=np.int64)
        probabilities = np.exp(self.log_probability(prefixes))
        return _with_tail(prefixes, len(self.documents)), probabilities


class RankTranspositionPolicy(Policy):
    """
    Random walk of position swaps with a restart probability.

    The number of swaps k follows P(k) = beta (1 - beta)^k on [0, inf);
    each swap exchanges two uniformly drawn positions of the top
    rerank_depth. Drawn positions may coincide unless allow_identity_swaps
    is off.
    """

    kind = "rt"
    enumerable = True

    def __init__(
        self,
        documents: Sequence[str],
        beta: float,
        rerank_depth: int = DEFAULT_RERANK_DEPTH,
        allow_identity_swaps: bool = ALLOW_IDENTITY_SWAPS
    ):
        super().__init__(documents)
        if not 0.0 < beta <= 1.0:
            raise ConfigurationError(f"beta must lie in (0, 1], got {beta}")
        self.beta = beta
        self.depth = _effective_depth(rerank_depth, len(self.documents))
        self.allow_identity_swaps = allow_identity_swaps

    @classmethod
    def from_run(
        cls,
        run: ScoredRun,
        beta: float,
        rerank_depth: int = DEFAULT_RERANK_DEPTH,
        allow_identity_swaps: bool = ALLOW_IDENTITY_SWAPS
    ) -> "RankTranspositionPolicy":
        return cls(run.documents, beta, rerank_depth, allow_identity_swaps)

    @property
    def param(self) -> float:
        return self.beta

    def _swap_pairs(self, rng: np.random.Generator, k: int) -> np.ndarray:
        if self.allow_identity_swaps:
            return rng.integers(0, self.depth, size=(k, 2))
        first = rng.integers(0, self.depth, size=k)
        second = rng.integers(0, self.depth - 1, size=k)
        second = second + (second >= first)
        return np.stack([first, second], axis=1)

    def sample_indices(self, rng: np.random.Generator, n_samples: int) -> np.ndarray:
        orders = np.tile(np.arange(len(self.documents)), (n_samples, 1))
        if self.depth < 2:
            return orders
        steps = rng.geometric(self.beta, size=n_samples) - 1
        for row, k in enumerate(steps):
            order = orders[row]
            for a, b in self._swap_pairs(rng, int(k)):
                order[a], order[b] = order[b], order[a]
        return orders

    def support(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Exact permutation distribution of the swap walk.

        Sums the geometric series over walk lengths; once the walk's
        distribution repeats with period two (it has mixed), the remaining
        tail is added in closed form.
        """
        states = list(itertools.permutations(range(self.depth)))
        position = {s: i for i, s in enumerate(states)}
        if self.depth < 2:
            pairs: List[Tuple[int, int]] = []
        elif self.allow_identity_swaps:
            pairs = [(a, b) for a in range(self.depth) for b in range(self.depth)]
        else:
            pairs = [(a, b) for a in range(self.depth) for b in range(self.depth) if a != b]

        distribution = np.zeros(len(states))
        distribution[0] = 1.0
        result = self.beta * distribution
        if not pairs or self.beta == 1.0:
            return _with_tail(np.array(states, dtype=np.int64), len(self.documents)), result

        transitions = np.empty((len(states), len(pairs)), dtype=np.int64)
        for i, state in enumerate(states):
            for j, (a, b) in enumerate(pairs):
                swapped = list(state)
                swapped[a], swapped[b] = swapped[b], swapped[a]
                transitions[i, j] = position[tuple(swapped)]

        stay = 1.0 - self.beta
        history = [distribution]
        previous_even = distribution
        for k in range(1, RT_SERIES_MAX_TERMS + 1):
            distribution = np.bincount(
                transitions.ravel(),
                weights=np.repeat(distribution / len(pairs), len(pairs)),
                minlength=len(states),
            )
            result += self.beta * stay ** k * distribution
            history = history[-1:] + [distribution]
            tail_weight = stay ** (k + 1)
            if tail_weight < RT_SERIES_TOLERANCE:
                break
            if k >= 2 and np.abs(distribution - previous_even).sum() < RT_SERIES_TOLERANCE:
                # distributions now alternate between history[-2] and history[-1]
                result += (
                    self.beta * tail_weight / (1.0 - stay ** 2)
                    * (history[0] + stay * history[1])
                )
                break
            previous_even = history[0]
        else:
            logger.warning(f"Transposition series stopped after {RT_SERIES_MAX_TERMS} terms")

        return _with_tail(np.array(states, dtype=np.int64), len(self.documents)), result


class OraclePolicy(Policy):
    """Uniform over all rankings sorted by descending grade."""

    kind = "oracle"
    enumerable = True

    def __init__(self, judgments: RelevanceJudgments):
        order = np.argsort(-judgments.grade_array, kind="stable")
        super().__init__([judgments.pool[i] for i in order])
        self.grades = judgments.grade_array[order]

    def sample_indices(self, rng: np.random.Generator, n_samples: int) -> np.ndarray:
        n = len(self.documents)
        tiebreak = rng.random((n_samples, n))
        grades = np.broadcast_to(-self.grades, (n_samples, n))
        return np.lexsort((tiebreak, grades), axis=-1)

    def support(self) -> Tuple[np.ndarray, np.ndarray]:
        blocks = []
        start = 0
        for grade in sorted(set(self.grades.tolist()), reverse=True):
            size = int((self.grades == grade).sum())
            blocks.append(list(itertools.permutations(range(start, start + size))))
            start += size
        orders = np.array(
            [list(itertools.chain.from_iterable(combo)) for combo in itertools.product(*blocks)],
            dtype=np.int64,
        )
        return orders, np.full(len(orders), 1.0 / len(orders))


def sample_plackett_luce(
    run: ScoredRun,
    alpha: float,
    rerank_depth: int,
    rng: np.random.Generator
) -> Ranking:
    """Sample one ranking from the Plackett-Luce randomization of a run."""
    return PlackettLucePolicy.from_run(run, alpha, rerank_depth).sample(rng)


def sample_rank_transposition(
    run: ScoredRun,
    beta: float,
    rerank_depth: int,
    rng: np.random.Generator,
    allow_identity_swaps: bool = ALLOW_IDENTITY_SWAPS
) -> Ranking:
    """Sample one ranking from the rank-transposition randomization of a run."""
    return RankTranspositionPolicy.from_run(run, beta, rerank_depth, allow_identity_swaps).sample(rng)


def sample_oracle(judgments: RelevanceJudgments, rng: np.random.Generator) -> Ranking:
    """Sample one grade-sorted ranking with ties shuffled uniformly."""
    return OraclePolicy(judgments).sample(rng)


def build_policy(
    kind: str,
    run: Optional[ScoredRun] = None,
    judgments: Optional[RelevanceJudgments] = None,
    param: Optional[float] = None,
    rerank_depth: int = DEFAULT_RERANK_DEPTH
) -> Policy:
    """
    Construct a policy from its command-line name.

    Args:
        kind: det, pl, rt or oracle
        run: Base run (all kinds except oracle)
        judgments: Judgments (oracle)
        param: alpha for pl, beta for rt
        rerank_depth: Reranked prefix length

    Returns:
        Policy
    """
    if kind == "oracle":
        if judgments is None:
            raise ConfigurationError("The oracle policy needs judgments")
        return OraclePolicy(judgments)
    if run is None:
        raise ConfigurationError(f"Policy '{kind}' needs a run")
    if kind == "det":
        return DeterministicPolicy(run.documents)
    if param is None:
        raise ConfigurationError(f"Policy '{kind}' needs a parameter")
    if kind == "pl":
        return PlackettLucePolicy.from_run(run, param, rerank_depth)
    if kind == "rt":
        return RankTranspositionPolicy.from_run(run, param, rerank_depth)
    raise ConfigurationError(f"Unknown policy '{kind}', expected one of {POLICY_KINDS}")


def sweep(
    run: ScoredRun,
    judgments: RelevanceJudgments,
    model: BrowsingModel,
    policy_family: str,
    grid: Sequence[float],
    n_samples: int,
    seed: int,
    rerank_depth: int = DEFAULT_RERANK_DEPTH,
    progress: bool = False,
    groups: Optional[GroupAttribution] = None,
    group_mode: str = "demographic_parity"
) -> SweepCurve:
    """
    Trace a disparity-relevance curve by sweeping a randomization parameter.

    The pool is the judged documents plus everything the run retrieved.
    Grid points that fail are skipped and counted.

    Args:
        run: Base run of one query
        judgments: Judgments of the same query
        model: Browsing model
        policy_family: pl or rt
        grid: alpha values (pl) or beta values (rt)
        n_samples: Rankings sampled per grid point
        seed: Global seed
        rerank_depth: Reranked prefix length
        progress: Show a progress bar over the grid
        groups: When given, every point also carries its group breakdown
        group_mode: Group fairness mode for that breakdown

    Returns:
        SweepCurve of normalized points, each carrying its breakdown
    """
    if not grid:
        raise ConfigurationError("Sweep grid is empty")
    if policy_family not in ("pl", "rt"):
        raise ConfigurationError(f"Sweeps support pl and rt, got '{policy_family}'")

    pool = judgments.extended(run.documents)
    target = target_exposure(model, pool)
    points = []
    skipped = 0

    for position, param in enumerate(tqdm(grid, desc=f"{run.query_id} {policy_family}", disable=not progress)):
        try:
            policy = build_policy(policy_family, run, pool, param, rerank_depth)
            exposure = expected_exposure_mc(
                policy, model, pool, n_samples, query_seed(seed, run.query_id, position)
            )
            breakdown = ee_breakdown(exposure, target)
            d_norm, r_norm = normalize_curve_point(breakdown, pool, model)
            group = None
            if groups is not None:
                group = group_fairness_loss(exposure, groups, pool, group_mode, model)
            points.append(CurvePoint(float(param), d_norm, r_norm, breakdown, group))
        except ExposureError as e:
            skipped += 1
            logger.warning(f"Skipping {policy_family}={param} for query {run.query_id}: {e}")

    if skipped:
        logger.warning(f"Query {run.query_id}: {skipped} of {len(grid)} grid points skipped")
    return SweepCurve.from_points(points, policy_family, run.query_id, skipped)


def expected_static_metrics(
    policy: Policy,
    judgments: RelevanceJudgments,
    model: BrowsingModel,
    n_samples: int,
    seed
) -> float:
    """
    Expected static RBP (rbp model) or ERR (err model) of a policy.

    Rankings are drawn exactly as expected_exposure_mc draws them, so the
    same seed yields the same rankings for both.
    """
    if n_samples < 1:
        raise ConfigurationError(f"n_samples must be positive, got {n_samples}")

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mapping = judgments.indices_of(policy.documents)
    total = 0.0
    remaining = n_samples
    while remaining > 0:
        chunk = min(remaining, MC_CHUNK_SIZE)
        orders = policy.sample_indices(rng, chunk)
        total += float(static_metric_matrix(mapping[orders], judgments, model).sum())
        remaining -= chunk
    return total / n_samples
