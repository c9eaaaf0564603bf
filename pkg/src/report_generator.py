"""
Report Generator for the expected-exposure toolkit.
Writes per-point breakdown, EE-AUC, static-metric and training-table CSVs
and prints console summaries.
"""

from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.metrics import SweepCurve, breakdown_rows, macro_average
from src.utils.logger import get_main_logger
from src.utils.storage import save_csv

logger = get_main_logger()

AGGREGATE_QUERY = "ALL"
POINT_COLUMNS = ["query", "policy", "param", "ee_l", "ee_d", "ee_r", "d_norm", "r_norm"]
GROUP_POINT_COLUMNS = POINT_COLUMNS + ["group_ee_l", "group_ee_d", "group_ee_r"]
AUC_COLUMNS = ["query", "policy", "ee_auc"]
STATIC_COLUMNS = ["query", "policy", "param", "static_rbp", "static_err", "generalized_entropy"]
TABLE_COLUMNS = ["model", "objective", "ee_auc", "dp_auc", "n_queries", "t_stat", "p_value"]


def points_frame(rows: Iterable[Dict[str, Any]], aggregate: bool = True) -> pd.DataFrame:
    """
    Breakdown rows in the point schema.

    Rows carrying a group breakdown switch the schema to GROUP_POINT_COLUMNS.

    Args:
        rows: Dicts keyed by POINT_COLUMNS, optionally with the group columns
        aggregate: Append macro-averaged rows (query ALL) per policy and param
            when more than one query is present

    Returns:
        DataFrame with exactly POINT_COLUMNS or GROUP_POINT_COLUMNS
    """
    rows = list(rows)
    columns = GROUP_POINT_COLUMNS if any("group_ee_l" in row for row in rows) else POINT_COLUMNS
    df = pd.DataFrame(rows, columns=columns)
    if aggregate and df["query"].nunique() > 1:
        means = (
            df.groupby(["policy", "param"], sort=False, dropna=False)[columns[3:]]
            .mean()
            .reset_index()
        )
        means.insert(0, "query", AGGREGATE_QUERY)
        df = pd.concat([df, means[columns]], ignore_index=True)
    return df


def curve_rows(curves: Iterable[SweepCurve]) -> List[Dict[str, Any]]:
    rows = []
    for curve in curves:
        rows.extend(breakdown_rows(curve))
    return rows


def auc_frame(aucs: Iterable[Tuple[str, str, float]], aggregate: bool = True) -> pd.DataFrame:
    """
    EE-AUC rows (query, policy, ee_auc).

    With more than one query, each policy gets an aggregate row holding the
    macro-average over its queries.
    """
    df = pd.DataFrame(list(aucs), columns=AUC_COLUMNS)
    if aggregate and df["query"].nunique() > 1:
        policies = list(dict.fromkeys(df["policy"]))
        means = [
            (AGGREGATE_QUERY, policy, macro_average(df.loc[df["policy"] == policy, "ee_auc"]))
            for policy in policies
        ]
        df = pd.concat([df, pd.DataFrame(means, columns=AUC_COLUMNS)], ignore_index=True)
    return df


def write_results(
    point_rows: Iterable[Dict[str, Any]],
    aucs: Optional[Iterable[Tuple[str, str, float]]],
    points_path: str,
    auc_path: Optional[str] = None
) -> Dict[str, str]:
    """
    Write the breakdown CSV and, when given, the EE-AUC CSV.

    Floats are written with 6 significant digits; empty inputs give
    header-only files.

    Returns:
        dict: Kind -> written path
    """
    written = {}
    points = points_frame(point_rows)
    save_csv(points, points_path)
    written["points"] = points_path
    logger.info(f"Wrote {len(points)} breakdown rows to {points_path}")

    if auc_path is not None:
        auc = auc_frame(aucs or [])
        save_csv(auc, auc_path)
        written["ee_auc"] = auc_path
        logger.info(f"Wrote {len(auc)} EE-AUC rows to {auc_path}")
    return written


def write_static_metrics(rows: Iterable[Dict[str, Any]], path: str) -> str:
    df = pd.DataFrame(list(rows), columns=STATIC_COLUMNS)
    save_csv(df, path)
    logger.info(f"Wrote {len(df)} static-metric rows to {path}")
    return path


def write_training_table(rows: Iterable[Dict[str, Any]], path: str) -> str:
    df = pd.DataFrame(list(rows), columns=TABLE_COLUMNS)
    save_csv(df, path)
    logger.info(f"Wrote training comparison to {path}")
    return path


def get_sweep_summary(
    aucs: Sequence[Tuple[str, str, float]],
    skipped_queries: Sequence[str],
    paths: Mapping[str, str]
) -> Dict[str, Any]:
    """
    Summarize a sweep or evaluation run.

    Returns:
        Summary dictionary
    """
    per_policy: Dict[str, List[float]] = {}
    for _, policy, value in aucs:
        per_policy.setdefault(policy, []).append(value)

    return {
        "n_queries": len({q for q, _, _ in aucs}),
        "mean_auc": {p: macro_average(v) for p, v in per_policy.items()},
        "skipped_queries": list(skipped_queries),
        "paths": dict(paths),
    }


def print_sweep_summary(summary: Dict[str, Any]) -> None:
    """
    Print a formatted summary of a sweep.

    Args:
        summary: Summary dictionary from get_sweep_summary
    """
    print("\n" + "=" * 60)
    print("EXPECTED EXPOSURE SUMMARY")
    print("=" * 60)
    print(f"Queries evaluated: {summary.get('n_queries')}")
    print("-" * 60)

    for policy, value in summary.get("mean_auc", {}).items():
        print(f"  {policy:8} mean EE-AUC: {value:.4f}")

    skipped = summary.get("skipped_queries", [])
    if skipped:
        print("-" * 60)
        print(f"Skipped {len(skipped)} queries: {', '.join(skipped[:10])}"
              + (" ..." if len(skipped) > 10 else ""))

    print("-" * 60)
    for kind, path in summary.get("paths", {}).items():
        print(f"{kind} saved to: {path}")
    print("=" * 60 + "\n")


def print_training_table(rows: Sequence[Dict[str, Any]]) -> None:
    """Print the model comparison table."""
    print("\n" + "=" * 60)
    print("TRAINED MODEL COMPARISON")
    print("=" * 60)
    print(f"  {'model':24} {'EE-AUC':>8} {'DP-AUC':>8}")
    for row in rows:
        dp = row.get("dp_auc", np.nan)
        print(f"  {row['model']:24} {row['ee_auc']:8.4f} {dp:8.4f}")
    print("=" * 60 + "\n")
