
import os
from typing import Dict, Optional

from dotenv import load_dotenv, dotenv_values

load_dotenv()


# Evaluation protocol
DEFAULT_BROWSING_MODEL = "rbp"
DEFAULT_GAMMA = 0.5
DEFAULT_DEPTH = 20  # ranks >= depth receive no exposure
DEFAULT_SAMPLES = 50  # rankings sampled per stochastic policy
DEFAULT_RERANK_DEPTH = 100
DEFAULT_POLICY = "pl"
DEFAULT_SEED = 0

ENUMERATION_CAP = 8  # largest pool the exact oracle will enumerate
PROBABILITY_TOLERANCE = 1e-9
MC_CHUNK_SIZE = 10000  # sampled rankings held in memory at once
RT_SERIES_TOLERANCE = 1e-13
RT_SERIES_MAX_TERMS = 20000
ALLOW_IDENTITY_SWAPS = True

GENERALIZED_ENTROPY_EXPONENT = 2.0


# Learning to rank
TAU = 0.1  # smooth-rank temperature
TRAIN_SAMPLES = 20
TEST_SAMPLES = 50
LEARNING_RATE = 0.001
DROPOUT = 0.1
HIDDEN_SIZES = (256, 256)
EPOCHS = 30
PATIENCE = 5
BATCH_SIZE = 16  # queries per gradient step
OPTIMIZER = "sgd"
MOMENTUM = 0.0
DEFAULT_LAMBDA = 0.5
SPLIT_FRACTIONS = (0.6, 0.2, 0.2)
CHECKPOINT_FORMAT_VERSION = 1

# The values above form the reference profile; desk overrides them for
# CPU-sized synthetic collections
TRAINING_PROFILES = ("desk", "reference")
DEFAULT_TRAINING_PROFILE = "desk"
DESK_PROFILE = {
    "learning_rate": 0.01,
    "optimizer": "adam",
    "hidden_sizes": (32,),
    "dropout": 0.0,
    "epochs": 40,
    "patience": 6,
}


# Paths
LOGS_DIR = os.getenv("EE_LOGS_DIR", "logs")
BASE_OUTPUT_DIR = os.getenv("EE_OUTPUT_DIR", "output")

POINTS_CSV = "points.csv"
AUC_CSV = "ee_auc.csv"
STATIC_CSV = "static_metrics.csv"
TABLE_CSV = "ltr_results.csv"
MANIFEST_JSON = "run_manifest.json"
DIAGNOSTICS_JSON = "diagnostics.json"


def get_output_dir(out_dir: Optional[str] = None) -> str:
    return out_dir or BASE_OUTPUT_DIR


def get_points_csv_path(out_dir: Optional[str] = None) -> str:
    return os.path.join(get_output_dir(out_dir), POINTS_CSV)


def get_auc_csv_path(out_dir: Optional[str] = None) -> str:
    return os.path.join(get_output_dir(out_dir), AUC_CSV)


def get_static_csv_path(out_dir: Optional[str] = None) -> str:
    return os.path.join(get_output_dir(out_dir), STATIC_CSV)


def get_table_csv_path(out_dir: Optional[str] = None) -> str:
    return os.path.join(get_output_dir(out_dir), TABLE_CSV)


def get_manifest_path(out_dir: Optional[str] = None) -> str:
    return os.path.join(get_output_dir(out_dir), MANIFEST_JSON)


def get_diagnostics_path(out_dir: Optional[str] = None) -> str:
    return os.path.join(get_output_dir(out_dir), DIAGNOSTICS_JSON)


def get_checkpoint_path(out_dir: Optional[str], objective: str, lam: Optional[float] = None) -> str:
    suffix = f"_lambda{lam:g}" if lam is not None else ""
    return os.path.join(get_output_dir(out_dir), f"scorer_{objective}{suffix}.pt")


def load_config_file(path: str) -> Dict[str, str]:
    """
    Read a plain key=value config file.

    Keys follow the long flag names; dashes and underscores are interchangeable.

    Args:
        path: Path to the config file

    Returns:
        dict: Normalized keys mapped to raw string values
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Config file not found: {path}")

    values = dotenv_values(path)
    return {
        key.strip().lstrip("-").replace("-", "_").lower(): value
        for key, value in values.items()
        if value is not None
    }
