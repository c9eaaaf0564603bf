"""
Exposure computation for rankings and stochastic ranking policies.

Holds the core data model (judgments, browsing models, rankings, exposure
vectors) and the four ways of obtaining exposure: from a single ranking, by
Monte Carlo over a policy, in closed form for the oracle policy, and by exact
enumeration of a policy's support.
"""

import zlib
from dataclasses import dataclass, field
from functools import cached_property
from types import MappingProxyType
from typing import TYPE_CHECKING, Dict, Iterable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from config.settings import (
    DEFAULT_GAMMA, DEFAULT_DEPTH, ENUMERATION_CAP, PROBABILITY_TOLERANCE, MC_CHUNK_SIZE
)
from config.grade_tables import default_stop_probability
from src.exceptions import (
    ConfigurationError, DimensionError, EnumerationCapError, JudgmentMismatchError,
    PolicyIntegrityError,
)
from src.utils.logger import get_exposure_logger

if TYPE_CHECKING:
    from src.policies import Policy

logger = get_exposure_logger()

BROWSING_MODELS = ("rbp", "err")

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator]


@dataclass(frozen=True)
class RelevanceJudgments:
    """Graded judgments of one query over an ordered candidate pool."""

    query_id: str
    pool: Tuple[str, ...]
    grades: Mapping[str, int]

    def __post_init__(self):
        pool = tuple(self.pool)
        if len(set(pool)) != len(pool):
            raise JudgmentMismatchError(f"Duplicate documents in pool of query {self.query_id}")
        if set(pool) != set(self.grades):
            raise JudgmentMismatchError(
                f"Pool and grades of query {self.query_id} cover different documents"
            )
        for doc_id, grade in self.grades.items():
            if int(grade) != grade or grade < 0:
                raise JudgmentMismatchError(
                    f"Grade of {doc_id} in query {self.query_id} must be a nonnegative integer"
                )
        object.__setattr__(self, "pool", pool)
        object.__setattr__(
            self, "grades", MappingProxyType({d: int(g) for d, g in self.grades.items()})
        )

    @classmethod
    def from_grades(
        cls,
        query_id: str,
        grades: Mapping[str, int],
        pool: Optional[Sequence[str]] = None
    ) -> "RelevanceJudgments":
        """
        Build judgments from a grade mapping.

        Args:
            query_id: Query identifier
            grades: document id -> grade
            pool: Optional pool order; defaults to the mapping's order

        Returns:
            RelevanceJudgments
        """
        return cls(query_id=query_id, pool=tuple(pool if pool is not None else grades), grades=grades)

    def extended(self, documents: Iterable[str]) -> "RelevanceJudgments":
        """Add unjudged documents (e.g. retrieved by a run) at grade 0."""
        grades = dict(self.grades)
        pool = list(self.pool)
        for doc_id in documents:
            if doc_id not in grades:
                grades[doc_id] = 0
                pool.append(doc_id)
        return RelevanceJudgments(self.query_id, tuple(pool), grades)

    @property
    def size(self) -> int:
        return len(self.pool)

    def grade(self, doc_id: str) -> int:
        try:
            return self.grades[doc_id]
        except KeyError:
            raise JudgmentMismatchError(
                f"Document {doc_id} is not in the pool of query {self.query_id}"
            ) from None

    @cached_property
    def index(self) -> Dict[str, int]:
        return {doc_id: i for i, doc_id in enumerate(self.pool)}

    @cached_property
    def grade_array(self) -> np.ndarray:
        grades = np.array([self.grades[d] for d in self.pool], dtype=np.int64)
        grades.setflags(write=False)
        return grades

    @cached_property
    def grade_counts(self) -> Dict[int, int]:
        """m_g for every populated grade."""
        values, counts = np.unique(self.grade_array, return_counts=True)
        return {int(g): int(c) for g, c in zip(values, counts)}

    def count_above(self, grade: int) -> int:
        """m_{>g}: documents strictly above a grade."""
        return sum(c for g, c in self.grade_counts.items() if g > grade)

    @property
    def num_relevant(self) -> int:
        return self.count_above(0)

    @property
    def relevance_mask(self) -> np.ndarray:
        return self.grade_array > 0

    def indices_of(self, documents: Sequence[str]) -> np.ndarray:
        """Pool positions of documents; unknown ids are a mismatch."""
        try:
            return np.array([self.index[d] for d in documents], dtype=np.int64)
        except KeyError as e:
            raise JudgmentMismatchError(
                f"Document {e.args[0]} is not in the pool of query {self.query_id}"
            ) from None


@dataclass(frozen=True)
class BrowsingModel:
    """RBP or ERR user model with patience, depth and stop probabilities."""

    kind: str = "rbp"
    gamma: float = DEFAULT_GAMMA
    depth: Optional[int] = DEFAULT_DEPTH
    stop_table: Optional[Mapping[int, float]] = field(default=None, hash=False)

    def __post_init__(self):
        if self.kind not in BROWSING_MODELS:
            raise ConfigurationError(f"Unknown browsing model '{self.kind}'")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError(f"Patience must lie in (0, 1), got {self.gamma}")
        if self.depth is not None and self.depth < 1:
            raise ConfigurationError(f"Depth must be a positive integer, got {self.depth}")
        if self.stop_table is not None:
            table = {int(g): float(p) for g, p in self.stop_table.items()}
            table.setdefault(0, 0.0)
            if table[0] != 0.0:
                raise ConfigurationError("Stop probability of grade 0 must be 0")
            previous = 0.0
            for g in sorted(table):
                p = table[g]
                if not 0.0 <= p < 1.0:
                    raise ConfigurationError(f"Stop probability of grade {g} must lie in [0, 1)")
                if p < previous:
                    raise ConfigurationError("Stop probabilities must not decrease with grade")
                previous = p
            object.__setattr__(self, "stop_table", MappingProxyType(table))

    @classmethod
    def rbp(cls, gamma: float = DEFAULT_GAMMA, depth: Optional[int] = DEFAULT_DEPTH) -> "BrowsingModel":
        return cls("rbp", gamma, depth)

    @classmethod
    def err(
        cls,
        gamma: float = DEFAULT_GAMMA,
        depth: Optional[int] = DEFAULT_DEPTH,
        stop_table: Optional[Mapping[int, float]] = None
    ) -> "BrowsingModel":
        return cls("err", gamma, depth, stop_table)

    def stop_probability(self, grade: int) -> float:
        """phi(grade); always 0 under RBP."""
        if self.kind == "rbp" or grade <= 0:
            return 0.0
        if self.stop_table is None:
            return default_stop_probability(grade)
        listed = [g for g in self.stop_table if g <= grade]
        return self.stop_table[max(listed)]

    def stop_probabilities(self, grades: np.ndarray) -> np.ndarray:
        if self.kind == "rbp":
            return np.zeros(len(grades))
        lookup = {int(g): self.stop_probability(int(g)) for g in np.unique(grades)}
        return np.array([lookup[int(g)] for g in grades], dtype=np.float64)

    def cutoff(self, length: int) -> int:
        """Number of leading positions that can receive exposure."""
        return length if self.depth is None else min(length, self.depth)

    def position_weights(self, length: int) -> np.ndarray:
        """Deterministic position weights (phi=0), zero at ranks >= depth."""
        weights = np.zeros(length)
        cutoff = self.cutoff(length)
        weights[:cutoff] = self.gamma ** np.arange(cutoff)
        return weights


@dataclass(frozen=True)
class Ranking:
    """A (prefix) permutation of a pool."""

    documents: Tuple[str, ...]

    def __post_init__(self):
        documents = tuple(self.documents)
        if len(set(documents)) != len(documents):
            raise ConfigurationError("Ranking contains duplicate documents")
        object.__setattr__(self, "documents", documents)

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    @cached_property
    def rank_of(self) -> Dict[str, int]:
        """Base-0 rank of each ranked document."""
        return {doc_id: i for i, doc_id in enumerate(self.documents)}

    def rank(self, doc_id: str) -> Optional[int]:
        return self.rank_of.get(doc_id)


@dataclass(frozen=True, eq=False)
class ExposureVector:
    """Nonnegative attention mass per document (also used for group exposure)."""

    documents: Tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        documents = tuple(self.documents)
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (len(documents),):
            raise DimensionError(
                f"Exposure vector has {values.shape} values for {len(documents)} documents"
            )
        if len(set(documents)) != len(documents):
            raise DimensionError("Exposure vector has duplicate documents")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ConfigurationError("Exposure values must be finite and nonnegative")
        values.setflags(write=False)
        object.__setattr__(self, "documents", documents)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_dict(cls, values: Mapping[str, float]) -> "ExposureVector":
        return cls(tuple(values), np.array(list(values.values()), dtype=np.float64))

    def __len__(self) -> int:
        return len(self.documents)

    def __getitem__(self, doc_id: str) -> float:
        try:
            return float(self.values[self.documents.index(doc_id)])
        except ValueError:
            raise KeyError(doc_id) from None

    def to_dict(self) -> Dict[str, float]:
        return {d: float(v) for d, v in zip(self.documents, self.values)}

    def aligned(self, documents: Sequence[str]) -> np.ndarray:
        """Values in the given document order; the document sets must agree."""
        if len(documents) != len(self.documents) or set(documents) != set(self.documents):
            raise DimensionError("Exposure vectors are defined over different pools")
        if tuple(documents) == self.documents:
            return self.values
        position = {d: i for i, d in enumerate(self.documents)}
        return self.values[[position[d] for d in documents]]

    def total(self) -> float:
        return float(self.values.sum())


def query_seed(seed: int, query_id: str, *keys: int) -> np.random.SeedSequence:
    """
    Derive an independent, order-free RNG stream for one query.

    Args:
        seed: Global seed
        query_id: Query identifier
        keys: Extra integers (e.g. grid position) to split the stream further

    Returns:
        SeedSequence usable with numpy.random.default_rng
    """
    return np.random.SeedSequence([int(seed), zlib.crc32(query_id.encode("utf-8")), *map(int, keys)])


def exposure_matrix(
    rankings: np.ndarray,
    pool_grades: np.ndarray,
    model: BrowsingModel
) -> np.ndarray:
    """
    Exposure of every pool document under a batch of rankings.

    Args:
        rankings: (samples, length) pool indices, one ranking per row
        pool_grades: Grade of every pool document
        model: Browsing model

    Returns:
        (samples, pool size) array; unranked documents get 0
    """
    rankings = np.atleast_2d(rankings)
    n_samples, length = rankings.shape
    position_exposure = np.tile(model.position_weights(length), (n_samples, 1))

    if model.kind == "err" and length > 1:
        stops = model.stop_probabilities(pool_grades)[rankings]
        survival = np.cumprod(1.0 - stops, axis=1)
        position_exposure[:, 1:] *= survival[:, :-1]

    exposures = np.zeros((n_samples, len(pool_grades)))
    np.put_along_axis(exposures, rankings, position_exposure, axis=1)
    return exposures


def ranking_exposure(
    model: BrowsingModel,
    ranking: Ranking,
    judgments: RelevanceJudgments
) -> ExposureVector:
    """
    Exposure each pool document receives from one ranking.

    Args:
        model: Browsing model
        ranking: Ranking over a subset of the pool
        judgments: Judgments defining the pool

    Returns:
        ExposureVector over the judged pool
    """
    indices = judgments.indices_of(ranking.documents)
    if len(indices) == 0:
        return ExposureVector(judgments.pool, np.zeros(judgments.size))
    values = exposure_matrix(indices[None, :], judgments.grade_array, model)[0]
    return ExposureVector(judgments.pool, values)


def expected_exposure_mc(
    policy: "Policy",
    model: BrowsingModel,
    judgments: RelevanceJudgments,
    n_samples: int,
    seed: SeedLike
) -> ExposureVector:
    """
    Monte Carlo estimate of a policy's expected exposure.

    Rankings are drawn in chunks so memory stays bounded for large sample
    counts; the draw sequence only depends on the seed.

    Args:
        policy: Stochastic ranking policy
        model: Browsing model
        judgments: Judgments defining the pool
        n_samples: Number of sampled rankings
        seed: Integer seed, SeedSequence or Generator

    Returns:
        ExposureVector: mean exposure over the sampled rankings
    """
    if n_samples < 1:
        raise ConfigurationError(f"n_samples must be positive, got {n_samples}")

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mapping = judgments.indices_of(policy.documents)
    totals = np.zeros(judgments.size)

    remaining = n_samples
    while remaining > 0:
        chunk = min(remaining, MC_CHUNK_SIZE)
        orders = policy.sample_indices(rng, chunk)
        totals += exposure_matrix(mapping[orders], judgments.grade_array, model).sum(axis=0)
        remaining -= chunk

    return ExposureVector(judgments.pool, totals / n_samples)


def target_exposure(model: BrowsingModel, judgments: RelevanceJudgments) -> ExposureVector:
    """
    Closed-form expected exposure of the oracle policy.

    The oracle shuffles uniformly within grade blocks sorted by descending
    grade. A grade-g document sits at one of the m_g positions starting at
    m_{>g}, each reached with probability P_g * q^i where
    q = gamma * (1 - phi(g)) and P_g is the exposure of the block's first
    position. Positions at or beyond the depth contribute nothing.

    Args:
        model: Browsing model
        judgments: Judgments defining the pool

    Returns:
        ExposureVector: target exposure per document
    """
    if judgments.size == 0:
        raise ConfigurationError(f"Query {judgments.query_id} has an empty pool")

    gamma = model.gamma
    per_grade: Dict[int, float] = {}
    above = 0
    survival = 1.0

    for grade in sorted(judgments.grade_counts, reverse=True):
        count = judgments.grade_counts[grade]
        stop = model.stop_probability(grade)
        ratio = gamma * (1.0 - stop)
        reachable = count if model.depth is None else max(0, min(count, model.depth - above))

        if reachable == 0:
            per_grade[grade] = 0.0
        else:
            head = gamma ** above * survival
            per_grade[grade] = head * (1.0 - ratio ** reachable) / ((1.0 - ratio) * count)

        survival *= (1.0 - stop) ** count
        above += count

    values = np.array([per_grade[g] for g in judgments.grade_array])
    return ExposureVector(judgments.pool, values)


def exact_expected_exposure(
    policy: "Policy",
    model: BrowsingModel,
    judgments: RelevanceJudgments,
    cap: int = ENUMERATION_CAP
) -> ExposureVector:
    """
    Expected exposure by enumerating every permutation a policy can return.

    Args:
        policy: Policy exposing exact permutation probabilities
        model: Browsing model
        judgments: Judgments defining the pool
        cap: Largest pool size allowed

    Returns:
        ExposureVector: probability-weighted exposure
    """
    if judgments.size > cap:
        raise EnumerationCapError(
            f"Pool of query {judgments.query_id} has {judgments.size} documents, cap is {cap}"
        )
    if not policy.enumerable:
        raise ConfigurationError(f"{type(policy).__name__} does not expose exact probabilities")

    orders, probabilities = policy.support()
    mass = float(probabilities.sum())
    if abs(mass - 1.0) > PROBABILITY_TOLERANCE:
        raise PolicyIntegrityError(f"Permutation probabilities sum to {mass!r}")

    mapping = judgments.indices_of(policy.documents)
    exposures = exposure_matrix(mapping[orders], judgments.grade_array, model)
    logger.debug(f"Enumerated {len(orders)} permutations for query {judgments.query_id}")
    return ExposureVector(judgments.pool, probabilities @ exposures)
