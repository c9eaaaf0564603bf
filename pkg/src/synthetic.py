"""
Seeded synthetic runs, qrels, learning-to-rank features and groups.

Stands in for the TREC and MSLR collections: grades are known by
construction, run scores are grade plus Gaussian noise, and LTR relevance is
linear in the features.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from config.settings import DEFAULT_SEED
from src.exceptions import ConfigurationError
from src.exposure import RelevanceJudgments, query_seed
from src.ltr.trainer import LtrDataset, LtrQuery
from src.policies import ScoredRun
from src.readers import discretize_pagerank
from src.utils.logger import get_io_logger

logger = get_io_logger()

# log10 range of the synthetic popularity feature
POPULARITY_LOG_RANGE = (2.0, 5.0)


@dataclass(frozen=True)
class SynthSpec:
    """
    Shape of a synthetic collection.

    grade_distribution[g] is the probability of grade g. When n_relevant is
    set, exactly that many documents per query get grade 1 and the rest 0.
    """

    n_queries: int = 50
    pool_size: int = 100
    grade_distribution: Tuple[float, ...] = (0.9, 0.1)
    noise: float = 0.0
    seed: int = DEFAULT_SEED
    n_relevant: Optional[int] = None
    n_features: int = 10
    feature_noise: float = 0.1

    def __post_init__(self):
        if self.n_queries < 1 or self.pool_size < 1:
            raise ConfigurationError("n_queries and pool_size must be positive")
        probs = np.asarray(self.grade_distribution, dtype=np.float64)
        if probs.size == 0 or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ConfigurationError("Grade distribution must be a probability vector")
        if self.noise < 0 or self.feature_noise < 0:
            raise ConfigurationError("Noise levels must be nonnegative")
        if self.n_relevant is not None and not 0 <= self.n_relevant <= self.pool_size:
            raise ConfigurationError("n_relevant must lie within the pool size")
        if self.n_features < 1:
            raise ConfigurationError("n_features must be positive")
        object.__setattr__(self, "grade_distribution", tuple(float(p) for p in probs))


def _query_id(index: int) -> str:
    return f"q{index + 1}"


def _doc_ids(query_id: str, pool_size: int) -> Tuple[str, ...]:
    return tuple(f"{query_id}-d{i}" for i in range(pool_size))


def _draw_grades(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.n_relevant is not None:
        grades = np.zeros(spec.pool_size, dtype=np.int64)
        grades[rng.choice(spec.pool_size, spec.n_relevant, replace=False)] = 1
        return grades
    return rng.choice(len(spec.grade_distribution), size=spec.pool_size, p=spec.grade_distribution)


def synth_collection(spec: SynthSpec) -> Tuple[Dict[str, RelevanceJudgments], Dict[str, ScoredRun]]:
    """
    Generate judgments and a run whose scores are grade + N(0, noise^2).

    Returns:
        (qrels, runs) keyed by query id
    """
    qrels, runs = {}, {}
    for index in range(spec.n_queries):
        query_id = _query_id(index)
        rng = np.random.default_rng(query_seed(spec.seed, query_id))
        grades = _draw_grades(spec, rng)
        docs = _doc_ids(query_id, spec.pool_size)
        scores = grades + spec.noise * rng.standard_normal(spec.pool_size)
        qrels[query_id] = RelevanceJudgments.from_grades(query_id, dict(zip(docs, grades.tolist())))
        runs[query_id] = ScoredRun.from_scores(query_id, list(zip(docs, scores.tolist())), "synth")
    logger.info(f"Generated {spec.n_queries} synthetic queries of {spec.pool_size} documents")
    return qrels, runs


def synth_ltr(spec: SynthSpec, thresholds: Optional[Sequence[float]] = None) -> LtrDataset:
    """
    Generate LTR data with linear ground-truth relevance and popularity groups.

    Features are uniform on [0, 1); relevance is x.w plus noise; grades cut
    the relevance at quantiles matching the grade distribution. The last
    feature is a rescaled log PageRank-like popularity, which is also
    discretized into the group labels.

    Returns:
        LtrDataset with group labels
    """
    rng = np.random.default_rng(spec.seed)
    weights = rng.standard_normal(spec.n_features)
    cumulative = np.cumsum(spec.grade_distribution)[:-1]
    cuts = np.asarray(thresholds if thresholds is not None else _global_cuts(spec, weights, cumulative))

    queries = []
    for index in range(spec.n_queries):
        query_id = _query_id(index)
        qrng = np.random.default_rng(query_seed(spec.seed, query_id, 1))
        features = qrng.random((spec.pool_size, spec.n_features))
        log_popularity = qrng.uniform(*POPULARITY_LOG_RANGE, size=spec.pool_size)
        low, high = POPULARITY_LOG_RANGE
        features[:, -1] = (log_popularity - low) / (high - low)
        relevance = features @ weights + spec.feature_noise * qrng.standard_normal(spec.pool_size)
        grades = np.searchsorted(cuts, relevance, side="right")
        popularity = 10.0 ** log_popularity
        queries.append(LtrQuery(
            query_id,
            features,
            grades,
            _doc_ids(query_id, spec.pool_size),
            tuple(discretize_pagerank(popularity)),
        ))
    return LtrDataset(queries, spec.n_features)


def _global_cuts(spec: SynthSpec, weights: np.ndarray, cumulative: np.ndarray) -> np.ndarray:
    """Relevance quantiles of a reference sample, so grade shares match the distribution."""
    reference = np.random.default_rng(query_seed(spec.seed, "reference")).random((4096, spec.n_features))
    return np.quantile(reference @ weights, cumulative)
