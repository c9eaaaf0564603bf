"""
Disparity-relevance evaluation of trained scorers.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from config.settings import TEST_SAMPLES, DEFAULT_SEED
from config.grade_tables import DEFAULT_INVERSE_TEMPERATURE_GRID
from src.exceptions import ConfigurationError, ExposureError
from src.exposure import BrowsingModel, expected_exposure_mc, query_seed, target_exposure
from src.ltr.scorer import Scorer
from src.ltr.trainer import LtrDataset, LtrQuery
from src.metrics import (
    CurvePoint, GroupAttribution, SweepCurve, ee_auc, ee_breakdown, exposure_mass,
    group_fairness_loss, macro_average, normalize_curve_point, normalize_group_curve_point,
)
from src.policies import PlackettLucePolicy
from src.utils.logger import get_training_logger

logger = get_training_logger()

FAIRNESS_KINDS = ("individual", "demographic_parity")


@dataclass
class EvaluationResult:
    """Per-query curves and EE-AUC of one model."""

    name: str
    fairness: str
    curves: List[SweepCurve] = field(default_factory=list)
    auc: Dict[str, float] = field(default_factory=dict)

    @property
    def mean_auc(self) -> float:
        return macro_average(self.auc.values())


def _curve_point(
    query: LtrQuery,
    scores: np.ndarray,
    alpha: float,
    param: float,
    model: BrowsingModel,
    n_samples: int,
    seed,
    fairness: str
) -> CurvePoint:
    judgments = query.judgments()
    policy = PlackettLucePolicy.from_logits(query.doc_ids, scores, alpha)
    exposure = expected_exposure_mc(policy, model, judgments, n_samples, seed)
    individual = ee_breakdown(exposure, target_exposure(model, judgments))

    if fairness == "individual":
        d_norm, r_norm = normalize_curve_point(individual, judgments, model)
        return CurvePoint(param, d_norm, r_norm, individual)

    groups = GroupAttribution.from_assignments(
        {doc_id: [label] for doc_id, label in zip(query.doc_ids, query.groups or ())}
    )
    group_ee = group_fairness_loss(exposure, groups, judgments, "demographic_parity", model)
    d_norm, r_norm = normalize_group_curve_point(
        group_ee, individual, len(groups.groups), exposure_mass(judgments, model)
    )
    return CurvePoint(param, d_norm, r_norm, group_ee)


def evaluate_trained(
    scorer: Union[Scorer, Mapping[float, Scorer]],
    dataset: LtrDataset,
    model: BrowsingModel,
    grid: Optional[Sequence[float]] = None,
    n_samples: int = TEST_SAMPLES,
    seed: int = DEFAULT_SEED,
    fairness: str = "individual",
    name: str = ""
) -> EvaluationResult:
    """
    Sweep a trained model into per-query disparity-relevance curves.

    Every scorer is randomized by Plackett-Luce over its scores at each
    inverse temperature alpha in the grid. A mapping lambda -> scorer (models
    trained per tradeoff) pools the sweeps of all its scorers into one curve
    whose points carry lambda as their parameter. EE-AUC is taken on the
    upper envelope of the curve, so a family is credited with the best
    tradeoff any of its members reaches.

    Args:
        scorer: Scorer, or lambda -> Scorer
        dataset: Held-out queries
        model: Browsing model
        grid: Inverse temperatures
        n_samples: Rankings sampled per point
        seed: Global seed
        fairness: individual or demographic_parity
        name: Model name carried into the result

    Returns:
        EvaluationResult with raw curves and macro-averaged EE-AUC
    """
    if fairness not in FAIRNESS_KINDS:
        raise ConfigurationError(f"Unknown fairness kind '{fairness}'")

    alphas = list(grid if grid is not None else DEFAULT_INVERSE_TEMPERATURE_GRID)
    if not alphas:
        raise ConfigurationError("Inverse temperature grid is empty")
    if isinstance(scorer, Scorer):
        points = [(alpha, alpha, scorer) for alpha in alphas]
    else:
        # lambda-major order keeps positions, and so seeds, aligned across families
        points = [(lam, alpha, scorer[lam]) for lam in sorted(scorer) for alpha in alphas]

    result = EvaluationResult(name, fairness)
    for query in dataset.queries:
        if len(query) < 2:
            continue
        scores = {id(s): s.score(query.features) for _, _, s in points}
        curve_points = []
        skipped = 0
        for position, (param, alpha, model_scorer) in enumerate(points):
            try:
                curve_points.append(_curve_point(
                    query, scores[id(model_scorer)], alpha, float(param), model, n_samples,
                    query_seed(seed, query.query_id, position), fairness,
                ))
            except ExposureError as e:
                skipped += 1
                logger.debug(f"Query {query.query_id}, param {param:g}: {e}")

        curve = SweepCurve.from_points(curve_points, name, query.query_id, skipped)
        result.curves.append(curve)
        try:
            result.auc[query.query_id] = ee_auc(curve.envelope())
        except ExposureError as e:
            logger.debug(f"No EE-AUC for query {query.query_id}: {e}")

    logger.info(
        f"{name or 'model'} ({fairness}): EE-AUC {result.mean_auc:.4f} over {len(result.auc)} queries"
    )
    return result
