"""
Grade-dependent tables and default parameter grids.

The stop-probability table drives the ERR browsing model; the grids drive
the randomization sweeps and the learning-to-rank evaluation.
"""

from typing import Dict, List, Tuple


# ERR stop probability per grade, phi(g) = 1 - 2^-g
DEFAULT_STOP_TABLE: Dict[int, float] = {
    0: 0.0,
    1: 0.5,
    2: 0.75,
    3: 0.875,
    4: 0.9375,
}

# Plackett-Luce alpha values, from uniform to near-deterministic
DEFAULT_PL_GRID: List[float] = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0]

# Rank-transposition restart probabilities, from deterministic to well mixed
DEFAULT_RT_GRID: List[float] = [1.0, 0.5, 0.2, 0.1, 0.05, 0.01]

# Exposure objective tradeoffs trained for the disparity-relevance curve
DEFAULT_LAMBDA_GRID: List[float] = [0.0, 0.25, 0.5, 0.75, 0.9]

# Inverse softmax temperatures used to randomize pointwise/pairwise scorers
DEFAULT_INVERSE_TEMPERATURE_GRID: List[float] = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 16.0]

# PageRank discretization used as a demographic attribute
PAGERANK_THRESHOLDS: Tuple[float, float] = (1000.0, 10000.0)
PAGERANK_GROUPS: Tuple[str, str, str] = ("low", "mid", "high")


def default_stop_probability(grade: int) -> float:
    """Stop probability for a grade under the default table."""
    if grade <= 0:
        return 0.0
    return DEFAULT_STOP_TABLE.get(grade, 1.0 - 2.0 ** (-grade))


def parse_phi_table(text: str) -> Dict[int, float]:
    """
    Parse a stop-probability table written as grade:prob pairs.

    Args:
        text: e.g. "1:0.5,2:0.75"

    Returns:
        dict: grade -> stop probability, always including grade 0
    """
    table: Dict[int, float] = {0: 0.0}
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        grade_str, _, prob_str = item.partition(":")
        if not prob_str:
            raise ValueError(f"Invalid phi entry '{item}', expected grade:prob")
        table[int(grade_str)] = float(prob_str)
    return table


def parse_grid(text: str) -> List[float]:
    """Parse a comma-separated parameter grid."""
    values = [float(v) for v in text.split(",") if v.strip()]
    if not values:
        raise ValueError("Parameter grid is empty")
    return values
