"""
Expected-exposure metrics.

EE-L and its disparity/relevance decomposition, curve normalization and
EE-AUC, the classic static RBP/ERR metrics, generalized entropy over the
relevant set, group fairness losses and intent-aware RBP.
"""

from dataclasses import dataclass, field
from typing import Dict, Hashable, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import xlogy

from config.settings import DEFAULT_GAMMA, DEFAULT_DEPTH, GENERALIZED_ENTROPY_EXPONENT
from src.exceptions import (
    ConfigurationError, DegenerateNormalizationError, DimensionError, EmptyRelevanceError,
    InsufficientPointsError, UndefinedEntropyError,
)
from src.exposure import (
    BrowsingModel, ExposureVector, Ranking, RelevanceJudgments, exposure_matrix,
)
from src.utils.logger import get_metrics_logger

logger = get_metrics_logger()

GROUP_MODES = ("demographic_parity", "disparate_treatment", "disparate_impact")


@dataclass(frozen=True)
class EEBreakdown:
    """Squared-error loss with its disparity and relevance components."""

    ee_l: float
    ee_d: float
    ee_r: float
    target_norm_sq: float

    @property
    def relevance(self) -> float:
        """Inner product of system and target exposure (half of EE-R)."""
        return self.ee_r / 2.0


def _breakdown(exposure: np.ndarray, target: np.ndarray) -> EEBreakdown:
    residual = exposure - target
    return EEBreakdown(
        ee_l=float(residual @ residual),
        ee_d=float(exposure @ exposure),
        ee_r=float(2.0 * (exposure @ target)),
        target_norm_sq=float(target @ target),
    )


def ee_breakdown(exposure: ExposureVector, target: ExposureVector) -> EEBreakdown:
    """
    Compare system exposure with target exposure.

    Args:
        exposure: System expected exposure
        target: Target exposure over the same documents

    Returns:
        EEBreakdown: ee_l = ee_d - ee_r + target_norm_sq
    """
    return _breakdown(exposure.values, target.aligned(exposure.documents))


def disparity_bounds(judgments: RelevanceJudgments, model: BrowsingModel) -> Tuple[float, float]:
    """
    Disparity of the uniform-random policy and of a deterministic ranking.

    Both use the deterministic position weights (phi = 0) over the pool.

    Returns:
        (D_lo, D_hi)
    """
    n = judgments.size
    weights = model.position_weights(n)
    return float(weights.sum() ** 2 / n), float(weights @ weights)


def normalize_curve_point(
    ee: EEBreakdown,
    judgments: RelevanceJudgments,
    model: BrowsingModel
) -> Tuple[float, float]:
    """
    Map a breakdown onto the disparity-relevance plane.

    Disparity is rescaled so the uniform policy sits at 0 and a deterministic
    ranking at 1 (clipped to [0, 1]); relevance is taken relative to the
    oracle, so the oracle sits at 1.

    Args:
        ee: Breakdown of one policy
        judgments: Judgments defining the pool
        model: Browsing model used for the breakdown

    Returns:
        (d_norm, r_norm)
    """
    if judgments.size <= 1:
        raise DegenerateNormalizationError(
            f"Pool of query {judgments.query_id} is too small to normalize disparity"
        )
    low, high = disparity_bounds(judgments, model)
    if high - low <= 0.0:
        raise DegenerateNormalizationError("Disparity bounds coincide")
    if ee.target_norm_sq <= 0.0:
        raise DegenerateNormalizationError("Target exposure is zero")

    d_norm = float(np.clip((ee.ee_d - low) / (high - low), 0.0, 1.0))
    r_norm = ee.relevance / ee.target_norm_sq
    return d_norm, float(r_norm)


def normalize_group_curve_point(
    group_ee: EEBreakdown,
    individual_ee: EEBreakdown,
    n_groups: int,
    mass: float
) -> Tuple[float, float]:
    """
    Disparity-relevance point for demographic-parity curves.

    Group disparity ||xi||^2 runs from the equal split (s^2 / |G|) to all mass
    on one group (s^2); relevance is the individual oracle-relative relevance.
    """
    if n_groups <= 1 or mass <= 0.0:
        raise DegenerateNormalizationError("Group disparity needs at least two groups")
    if individual_ee.target_norm_sq <= 0.0:
        raise DegenerateNormalizationError("Target exposure is zero")
    low, high = mass ** 2 / n_groups, mass ** 2
    d_norm = float(np.clip((group_ee.ee_d - low) / (high - low), 0.0, 1.0))
    return d_norm, float(individual_ee.relevance / individual_ee.target_norm_sq)


@dataclass(frozen=True)
class CurvePoint:
    param: float
    d_norm: float
    r_norm: float
    breakdown: Optional[EEBreakdown] = None
    group: Optional[EEBreakdown] = None


@dataclass(frozen=True)
class SweepCurve:
    """Disparity-relevance points of one policy family, sorted by disparity."""

    points: Tuple[CurvePoint, ...]
    policy: str = ""
    query_id: str = ""
    skipped: int = 0

    @classmethod
    def from_points(
        cls,
        points: Iterable[Union[CurvePoint, Tuple[float, float]]],
        policy: str = "",
        query_id: str = "",
        skipped: int = 0
    ) -> "SweepCurve":
        converted = [
            p if isinstance(p, CurvePoint) else CurvePoint(float("nan"), float(p[0]), float(p[1]))
            for p in points
        ]
        converted.sort(key=lambda p: (p.d_norm, p.r_norm))
        return cls(tuple(converted), policy, query_id, skipped)

    def __len__(self) -> int:
        return len(self.points)

    def deduplicated(self) -> Tuple[np.ndarray, np.ndarray]:
        """Distinct disparities in ascending order, keeping the best relevance."""
        best: Dict[float, float] = {}
        for p in self.points:
            best[p.d_norm] = max(best.get(p.d_norm, -np.inf), p.r_norm)
        d_values = np.array(sorted(best))
        return d_values, np.array([best[d] for d in d_values])

    def envelope(self) -> "SweepCurve":
        """
        Upper concave envelope of the points, anchored at the origin.

        Dominated points (higher disparity and lower relevance than another)
        are dropped, then points under a chord of their neighbours. Mixing two
        policies reaches at least the chord between them, so the envelope is
        the tradeoff a family of policies can reach.
        """
        anchor = CurvePoint(float("nan"), 0.0, 0.0)
        front = []
        best = -np.inf
        for p in sorted((anchor, *self.points), key=lambda p: (p.d_norm, -p.r_norm)):
            if p.r_norm > best:
                front.append(p)
                best = p.r_norm

        hull: List[CurvePoint] = []
        for p in front:
            while len(hull) >= 2 and _cross(hull[-2], hull[-1], p) >= 0.0:
                hull.pop()
            hull.append(p)
        return SweepCurve(tuple(hull), self.policy, self.query_id, self.skipped)


def _cross(o: CurvePoint, a: CurvePoint, b: CurvePoint) -> float:
    return (a.d_norm - o.d_norm) * (b.r_norm - o.r_norm) - (a.r_norm - o.r_norm) * (b.d_norm - o.d_norm)


def ee_auc(curve: Union[SweepCurve, Sequence[Tuple[float, float]]]) -> float:
    """
    Area under a disparity-relevance curve.

    The curve is anchored at (0, 0) and extended flat from its largest
    disparity to 1; duplicate disparities keep the highest relevance.

    Args:
        curve: SweepCurve or (d_norm, r_norm) pairs

    Returns:
        float: trapezoidal area on [0, 1]
    """
    if not isinstance(curve, SweepCurve):
        curve = SweepCurve.from_points(curve)
    if len(curve) < 2:
        raise InsufficientPointsError(f"EE-AUC needs at least 2 points, got {len(curve)}")

    d_values, r_values = curve.deduplicated()
    if d_values[0] > 0.0:
        d_values = np.concatenate([[0.0], d_values])
        r_values = np.concatenate([[0.0], r_values])
    if d_values[-1] < 1.0:
        d_values = np.concatenate([d_values, [1.0]])
        r_values = np.concatenate([r_values, [r_values[-1]]])
    return float(trapezoid(r_values, d_values))


def macro_average(values: Iterable[float]) -> float:
    """Arithmetic mean across queries, ignoring missing values."""
    values = np.array([v for v in values if v is not None and np.isfinite(v)], dtype=np.float64)
    return float(values.mean()) if len(values) else float("nan")


def _ranked_indices(ranking: Ranking, judgments: RelevanceJudgments) -> np.ndarray:
    return judgments.indices_of(ranking.documents)[None, :]


def static_metric_matrix(
    rankings: np.ndarray,
    judgments: RelevanceJudgments,
    model: BrowsingModel
) -> np.ndarray:
    """
    Static RBP (rbp model) or ERR (err model) of each ranking in a batch.

    Args:
        rankings: (samples, length) pool indices
        judgments: Judgments defining the pool
        model: Browsing model selecting the metric

    Returns:
        Array of per-ranking metric values
    """
    exposures = exposure_matrix(rankings, judgments.grade_array, model)
    if model.kind == "rbp":
        return (1.0 - model.gamma) * (exposures @ judgments.relevance_mask.astype(np.float64))
    return exposures @ model.stop_probabilities(judgments.grade_array)


def static_rbp(
    ranking: Ranking,
    judgments: RelevanceJudgments,
    gamma: float = DEFAULT_GAMMA,
    depth: Optional[int] = DEFAULT_DEPTH
) -> float:
    """Rank-biased precision of one ranking with binarized grades."""
    model = BrowsingModel.rbp(gamma, depth)
    if len(ranking) == 0:
        return 0.0
    return float(static_metric_matrix(_ranked_indices(ranking, judgments), judgments, model)[0])


def static_err(
    ranking: Ranking,
    judgments: RelevanceJudgments,
    gamma: float = DEFAULT_GAMMA,
    depth: Optional[int] = DEFAULT_DEPTH,
    stop_table: Optional[Mapping[int, float]] = None
) -> float:
    """Generalized expected reciprocal rank of one ranking."""
    model = BrowsingModel.err(gamma, depth, stop_table)
    if len(ranking) == 0:
        return 0.0
    return float(static_metric_matrix(_ranked_indices(ranking, judgments), judgments, model)[0])


def generalized_entropy(
    exposure: ExposureVector,
    judgments: RelevanceJudgments,
    a: float = GENERALIZED_ENTROPY_EXPONENT
) -> float:
    """
    Generalized entropy of exposure over the relevant documents.

    GE(a) = 1 / (n a (a - 1)) * sum((x / mu)^a - 1), with the Theil index at
    a = 1 and the mean log deviation at a = 0.

    Args:
        exposure: Expected exposure over the pool
        judgments: Judgments selecting the relevant set
        a: Inequality-aversion exponent

    Returns:
        float: 0 iff all relevant documents share the same exposure
    """
    relevant = judgments.relevance_mask
    if not relevant.any():
        raise EmptyRelevanceError(f"Query {judgments.query_id} has no relevant documents")

    values = exposure.aligned(judgments.pool)[relevant]
    mean = values.mean()
    if mean <= 0.0:
        raise UndefinedEntropyError("No exposure on any relevant document")

    ratios = values / mean
    if a == 1.0:
        return float(np.mean(xlogy(ratios, ratios)))
    if a == 0.0:
        with np.errstate(divide="ignore"):
            return float(-np.mean(np.log(ratios)))
    return float(np.sum(ratios ** a - 1.0) / (len(values) * a * (a - 1.0)))


@dataclass(frozen=True, eq=False)
class GroupAttribution:
    """Binary document-by-group membership matrix."""

    documents: Tuple[str, ...]
    groups: Tuple[Hashable, ...]
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=bool)
        if matrix.shape != (len(self.documents), len(self.groups)):
            raise DimensionError("Group matrix shape does not match documents and groups")
        if len(self.groups) < 1:
            raise ConfigurationError("At least one group is required")
        if not matrix.any(axis=1).all():
            raise ConfigurationError("Every document needs at least one group")
        matrix.setflags(write=False)
        object.__setattr__(self, "documents", tuple(self.documents))
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "matrix", matrix)

    @classmethod
    def from_assignments(cls, assignments: Mapping[str, Iterable[Hashable]]) -> "GroupAttribution":
        """
        Build from document -> group ids.

        Args:
            assignments: Each document mapped to one or more groups

        Returns:
            GroupAttribution with groups in sorted order
        """
        memberships = {doc_id: set(groups) for doc_id, groups in assignments.items()}
        groups = sorted({g for gs in memberships.values() for g in gs}, key=str)
        column = {g: j for j, g in enumerate(groups)}
        matrix = np.zeros((len(memberships), len(groups)), dtype=bool)
        for i, gs in enumerate(memberships.values()):
            for g in gs:
                matrix[i, column[g]] = True
        return cls(tuple(memberships), tuple(groups), matrix)

    def aligned(self, documents: Sequence[str]) -> np.ndarray:
        """Membership rows in the given document order."""
        position = {d: i for i, d in enumerate(self.documents)}
        missing = [d for d in documents if d not in position]
        if missing:
            raise ConfigurationError(f"Groups do not cover documents: {missing[:5]}")
        return self.matrix[[position[d] for d in documents]].astype(np.float64)


def exposure_mass(judgments: RelevanceJudgments, model: BrowsingModel) -> float:
    """Total deterministic exposure s available over the pool."""
    return float(model.position_weights(judgments.size).sum())


def group_exposure_and_target(
    exposure: ExposureVector,
    groups: GroupAttribution,
    judgments: RelevanceJudgments,
    mode: str,
    model: BrowsingModel,
    proportions: Optional[Mapping[Hashable, float]] = None
) -> Tuple[ExposureVector, ExposureVector]:
    """
    Group exposure xi and group target xi* for a fairness mode.

    Args:
        exposure: Document expected exposure
        groups: Group attribution covering the pool
        judgments: Judgments defining the pool and relevance
        mode: demographic_parity, disparate_treatment or disparate_impact
        model: Browsing model fixing the exposure mass s
        proportions: Optional demographic-parity target shares per group

    Returns:
        (xi, xi_star) as vectors over group ids
    """
    if mode not in GROUP_MODES:
        raise ConfigurationError(f"Unknown group fairness mode '{mode}'")

    pool = judgments.pool
    values = exposure.aligned(pool)
    membership = groups.aligned(pool)
    relevance = judgments.relevance_mask.astype(np.float64)
    mass = exposure_mass(judgments, model)

    if mode == "demographic_parity":
        group_values = membership.T @ values
        if proportions is None:
            shares = np.full(len(groups.groups), 1.0 / len(groups.groups))
        else:
            shares = np.array([float(proportions.get(g, 0.0)) for g in groups.groups])
            if shares.sum() <= 0.0 or np.any(shares < 0.0):
                raise ConfigurationError("Target proportions must be nonnegative with positive sum")
            shares = shares / shares.sum()
    else:
        if relevance.sum() == 0.0:
            raise EmptyRelevanceError(
                f"Mode {mode} needs relevant documents; query {judgments.query_id} has none"
            )
        if mode == "disparate_impact":
            membership = relevance[:, None] * membership
        group_values = membership.T @ values
        merit = membership.T @ relevance
        shares = merit / merit.sum()

    return (
        ExposureVector(groups.groups, group_values),
        ExposureVector(groups.groups, mass * shares),
    )


def group_fairness_loss(
    exposure: ExposureVector,
    groups: GroupAttribution,
    judgments: RelevanceJudgments,
    mode: str,
    model: BrowsingModel,
    proportions: Optional[Mapping[Hashable, float]] = None
) -> EEBreakdown:
    """
    Expected-exposure loss between group exposure and a group target.

    Returns:
        EEBreakdown computed on (xi, xi*)
    """
    group_values, group_target = group_exposure_and_target(
        exposure, groups, judgments, mode, model, proportions
    )
    return ee_breakdown(group_values, group_target)


def relevance_frequency_prior(
    judgments: RelevanceJudgments,
    intents: Mapping[str, Iterable[Hashable]]
) -> Dict[Hashable, float]:
    """Intent prior proportional to each intent's frequency among relevant documents."""
    counts: Dict[Hashable, float] = {}
    for doc_id in judgments.pool:
        if judgments.grades[doc_id] > 0:
            for intent in intents.get(doc_id, ()):
                counts[intent] = counts.get(intent, 0.0) + 1.0
    total = sum(counts.values())
    if total == 0.0:
        raise EmptyRelevanceError(f"No relevant document of query {judgments.query_id} has an intent")
    return {intent: c / total for intent, c in counts.items()}


def uniform_intent_prior(intents: Mapping[str, Iterable[Hashable]]) -> Dict[Hashable, float]:
    labels = sorted({i for values in intents.values() for i in values}, key=str)
    if not labels:
        raise ConfigurationError("Intent set is empty")
    return {label: 1.0 / len(labels) for label in labels}


def intent_aware_rbp(
    rankings: Sequence[Ranking],
    judgments: RelevanceJudgments,
    intents: Mapping[str, Iterable[Hashable]],
    intent_prior: Mapping[Hashable, float],
    gamma: float = DEFAULT_GAMMA,
    depth: Optional[int] = DEFAULT_DEPTH
) -> float:
    """
    Intent-aware RBP averaged over sampled rankings.

    For every intent, relevance is restricted to relevant documents carrying
    that intent; the per-intent expected RBP values are mixed by the prior.

    Args:
        rankings: Rankings sampled from a policy (equally weighted)
        judgments: Judgments defining the pool
        intents: document id -> intents it covers
        intent_prior: intent -> p(intent | query), summing to 1
        gamma: RBP patience
        depth: RBP depth

    Returns:
        float: expected intent-aware RBP
    """
    labels = sorted({i for values in intents.values() for i in values}, key=str)
    if not labels or not intent_prior:
        raise ConfigurationError("Intent set is empty")
    if any(p < 0.0 for p in intent_prior.values()) or abs(sum(intent_prior.values()) - 1.0) > 1e-9:
        raise ConfigurationError("Intent prior must be a probability distribution")
    if not rankings:
        raise ConfigurationError("At least one ranking is required")

    model = BrowsingModel.rbp(gamma, depth)
    exposures = np.zeros(judgments.size)
    for ranking in rankings:
        if len(ranking):
            exposures += exposure_matrix(
                _ranked_indices(ranking, judgments), judgments.grade_array, model
            )[0]
    exposures /= len(rankings)

    relevant = judgments.relevance_mask
    value = 0.0
    for intent, prior in intent_prior.items():
        if prior == 0.0:
            continue
        covered = np.array([intent in set(intents.get(d, ())) for d in judgments.pool])
        value += prior * (1.0 - gamma) * float(exposures[relevant & covered].sum())
    return value


def breakdown_rows(curve: SweepCurve) -> List[Dict[str, float]]:
    """Flatten a curve's points into result rows."""
    nan = float("nan")
    rows = []
    for p in curve.points:
        bd = p.breakdown
        row = {
            "query": curve.query_id,
            "policy": curve.policy,
            "param": p.param,
            "ee_l": bd.ee_l if bd else nan,
            "ee_d": bd.ee_d if bd else nan,
            "ee_r": bd.ee_r if bd else nan,
            "d_norm": p.d_norm,
            "r_norm": p.r_norm,
        }
        if p.group is not None:
            row.update(group_ee_l=p.group.ee_l, group_ee_d=p.group.ee_d, group_ee_r=p.group.ee_r)
        rows.append(row)
    return rows
