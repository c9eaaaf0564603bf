"""
Studies relating expected exposure to static metrics.

The correlation study sweeps one run under Plackett-Luce and correlates
expected static RBP/ERR with the relevance term of expected exposure. The
treatment study checks whether static RBP or EE-AUC separates runs that
were randomized differently.
"""

from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from config.settings import DEFAULT_GAMMA, DEFAULT_DEPTH, DEFAULT_RERANK_DEPTH, DEFAULT_SAMPLES
from config.grade_tables import DEFAULT_PL_GRID, DEFAULT_RT_GRID
from src.exceptions import ConfigurationError, ExposureError
from src.exposure import (
    BrowsingModel, RelevanceJudgments, expected_exposure_mc, query_seed, target_exposure,
)
from src.metrics import (
    ee_auc, ee_breakdown, generalized_entropy, macro_average, static_rbp,
)
from src.policies import PlackettLucePolicy, ScoredRun, expected_static_metrics, sweep
from src.utils.logger import get_metrics_logger

logger = get_metrics_logger()


@dataclass
class CorrelationStudy:
    points: pd.DataFrame
    rbp_r: float
    err_r: float
    entropy_r: float


def correlation_study(
    run: ScoredRun,
    judgments: RelevanceJudgments,
    grid: Sequence[float] = DEFAULT_PL_GRID,
    n_samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    gamma: float = DEFAULT_GAMMA,
    depth: Optional[int] = DEFAULT_DEPTH,
    stop_table: Optional[Mapping[int, float]] = None,
    rerank_depth: int = DEFAULT_RERANK_DEPTH
) -> CorrelationStudy:
    """
    Correlate expected static metrics with expected-exposure terms over a PL sweep.

    At every alpha, static metrics and exposure come from the same sampled
    rankings.

    Returns:
        CorrelationStudy with the per-alpha table and Pearson coefficients for
        (static RBP, ee_r RBP), (static ERR, ee_r ERR) and (GE, ee_d RBP)
    """
    if len(grid) < 3:
        raise ConfigurationError("A correlation needs at least 3 grid points")

    rbp = BrowsingModel.rbp(gamma, depth)
    err = BrowsingModel.err(gamma, depth, stop_table)
    pool = judgments.extended(run.documents)
    targets = {m.kind: target_exposure(m, pool) for m in (rbp, err)}

    rows = []
    for position, alpha in enumerate(grid):
        policy = PlackettLucePolicy.from_run(run, alpha, rerank_depth)
        seed_seq = query_seed(seed, run.query_id, position)
        row = {"param": float(alpha)}
        for model in (rbp, err):
            exposure = expected_exposure_mc(policy, model, pool, n_samples, seed_seq)
            breakdown = ee_breakdown(exposure, targets[model.kind])
            row[f"static_{model.kind}"] = expected_static_metrics(policy, pool, model, n_samples, seed_seq)
            row[f"ee_r_{model.kind}"] = breakdown.ee_r
            row[f"ee_d_{model.kind}"] = breakdown.ee_d
            if model.kind == "rbp":
                row["generalized_entropy"] = generalized_entropy(exposure, pool)
        rows.append(row)

    points = pd.DataFrame(rows)
    return CorrelationStudy(
        points=points,
        rbp_r=float(stats.pearsonr(points["static_rbp"], points["ee_r_rbp"])[0]),
        err_r=float(stats.pearsonr(points["static_err"], points["ee_r_err"])[0]),
        entropy_r=float(stats.pearsonr(points["generalized_entropy"], points["ee_d_rbp"])[0]),
    )


@dataclass
class TreatmentStudy:
    systems: pd.DataFrame
    kendall_tau: float
    kendall_p: float
    auc_gap: float
    auc_gap_se: float
    welch_t: float
    welch_p: float
    static_gap: float
    static_gap_se: float
    n_pairs: int


def _gap(values: pd.Series, treatment: pd.Series):
    pl, rt = values[treatment == "pl"], values[treatment == "rt"]
    if len(pl) < 2 or len(rt) < 2:
        raise ConfigurationError("Each treatment needs at least 2 runs")
    gap = float(pl.mean() - rt.mean())
    se = float(np.sqrt(pl.var(ddof=1) / len(pl) + rt.var(ddof=1) / len(rt)))
    return gap, se, pl, rt


def _matched_assignment(
    static: Mapping[str, float],
    rng: np.random.Generator
) -> Tuple[Dict[str, str], List[Tuple[str, str]]]:
    """
    Pair systems with their neighbour in static RBP order; a coin flip per pair
    decides which member gets PL.

    Returns:
        (system -> treatment, [(pl system, rt system)])
    """
    order = sorted(static, key=lambda name: (-static[name], name))
    treatments: Dict[str, str] = {}
    pairs = []
    for first, second in zip(order[0::2], order[1::2]):
        if rng.random() < 0.5:
            first, second = second, first
        treatments[first], treatments[second] = "pl", "rt"
        pairs.append((first, second))
    if len(order) % 2:
        treatments[order[-1]] = "pl" if rng.random() < 0.5 else "rt"
    return treatments, pairs


def treatment_study(
    systems: Mapping[str, Mapping[str, ScoredRun]],
    qrels: Mapping[str, RelevanceJudgments],
    model: BrowsingModel,
    n_samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    pl_grid: Sequence[float] = DEFAULT_PL_GRID,
    rt_grid: Sequence[float] = DEFAULT_RT_GRID,
    rerank_depth: int = DEFAULT_RERANK_DEPTH
) -> TreatmentStudy:
    """
    Randomize half the systems with PL and half with RT and compare orderings.

    Each system gets its static RBP (mean over queries) and its EE-AUC under
    the assigned treatment. Assignment is matched on static RBP: neighbours
    in static order form a pair and one of each pair gets PL, so both
    treatments see runs of the same static quality. The EE-AUC gap is the
    mean within-pair PL minus RT difference with its standard error; Welch's
    t-test on the two treatment groups and the unpaired static RBP gap are
    reported alongside. With an odd number of systems the last one in static
    order is assigned by coin flip and stays out of the pairs.

    Args:
        systems: system name -> query id -> run
        qrels: query id -> judgments
        model: Browsing model for EE-AUC
        n_samples: Rankings per grid point
        seed: Seed for the assignment and the sweeps

    Returns:
        TreatmentStudy
    """
    if len(systems) < 4:
        raise ConfigurationError("The treatment study needs at least 4 systems, 2 per treatment")

    pools = {
        name: {
            query_id: qrels[query_id].extended(run.documents)
            for query_id, run in runs.items() if query_id in qrels
        }
        for name, runs in systems.items()
    }
    static = {
        name: macro_average(
            static_rbp(systems[name][query_id].ranking(), pool, model.gamma, model.depth)
            for query_id, pool in pools[name].items()
        )
        for name in systems
    }
    treatments, pairs = _matched_assignment(static, np.random.default_rng(seed))

    rows = []
    for name in sorted(systems):
        treatment = treatments[name]
        grid = pl_grid if treatment == "pl" else rt_grid
        aucs = []
        for query_id, pool in pools[name].items():
            try:
                curve = sweep(systems[name][query_id], pool, model, treatment, grid, n_samples, seed,
                              rerank_depth)
                aucs.append(ee_auc(curve))
            except ExposureError as e:
                logger.debug(f"{name}/{query_id}: {e}")
        rows.append({
            "system": name,
            "treatment": treatment,
            "static_rbp": static[name],
            "ee_auc": macro_average(aucs),
        })

    table = pd.DataFrame(rows)
    auc = table.set_index("system")["ee_auc"]
    differences = np.array([auc[pl] - auc[rt] for pl, rt in pairs])
    auc_gap = float(differences.mean())
    auc_se = float(differences.std(ddof=1) / np.sqrt(len(differences)))

    tau, tau_p = stats.kendalltau(table["static_rbp"], table["ee_auc"])
    _, _, pl, rt = _gap(table["ee_auc"], table["treatment"])
    static_gap, static_se, _, _ = _gap(table["static_rbp"], table["treatment"])
    welch = stats.ttest_ind(pl, rt, equal_var=False)

    logger.info(
        f"Treatment study over {len(pairs)} pairs: EE-AUC gap {auc_gap:.4f} (SE {auc_se:.4f}), "
        f"static RBP gap {static_gap:.4f} (SE {static_se:.4f}), tau {tau:.3f}"
    )
    return TreatmentStudy(
        systems=table,
        kendall_tau=float(tau),
        kendall_p=float(tau_p),
        auc_gap=auc_gap,
        auc_gap_se=auc_se,
        welch_t=float(welch.statistic),
        welch_p=float(welch.pvalue),
        static_gap=static_gap,
        static_gap_se=static_se,
        n_pairs=len(pairs),
    )


def paired_significance(a: Mapping[str, float], b: Mapping[str, float]) -> Dict[str, float]:
    """
    Paired t-test on per-query values shared by two models.

    Returns:
        dict with t_stat, p_value and n_queries
    """
    shared = sorted(set(a) & set(b))
    if len(shared) < 2:
        raise ConfigurationError("A paired test needs at least 2 shared queries")
    x = np.array([a[q] for q in shared])
    y = np.array([b[q] for q in shared])
    if np.allclose(x, y):
        return {"t_stat": 0.0, "p_value": 1.0, "n_queries": len(shared)}
    result = stats.ttest_rel(x, y)
    return {"t_stat": float(result.statistic), "p_value": float(result.pvalue), "n_queries": len(shared)}
