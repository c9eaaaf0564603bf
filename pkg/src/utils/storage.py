"""
Storage utility functions for the expected-exposure toolkit.
Handles file I/O for CSVs, JSONs, text inputs, model checkpoints and
directory management.
"""

import os
import json
from typing import Optional, Dict, Any, List

import pandas as pd
import torch

from config.settings import CHECKPOINT_FORMAT_VERSION, LOGS_DIR, get_output_dir
from src.exceptions import ConfigurationError, ParseError
from src.ltr.scorer import Scorer

FLOAT_FORMAT = "%.6g"


def ensure_dir_exists(path: str) -> None:
    """
    Ensure a directory exists, creating it if necessary.

    Args:
        path: Directory path to ensure exists
    """
    if path and not os.path.exists(path):
        os.makedirs(path, exist_ok=True)


def initialize_output_directories(out_dir: Optional[str] = None) -> str:
    """
    Create the output and logs directories for a command.

    Args:
        out_dir: Output directory (defaults to the configured one)

    Returns:
        str: The output directory
    """
    out_dir = get_output_dir(out_dir)
    ensure_dir_exists(out_dir)
    ensure_dir_exists(LOGS_DIR)
    return out_dir


def read_lines(path: str) -> List[str]:
    """
    Read a UTF-8 text file into lines.

    Raises:
        ConfigurationError: file is missing
        ParseError: file is not valid UTF-8
    """
    if not os.path.exists(path):
        raise ConfigurationError(f"Input file not found: {path}")

    with open(path, 'rb') as f:
        raw = f.read()
    try:
        return raw.decode('utf-8').splitlines()
    except UnicodeDecodeError as e:
        raise ParseError(f"{path} is not valid UTF-8 (byte {e.start})") from None


def write_lines(lines: List[str], path: str) -> None:
    ensure_dir_exists(os.path.dirname(path))
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for line in lines:
            f.write(line + '\n')


def load_json(path: str) -> Optional[Dict[str, Any]]:
    """
    Load a JSON file.

    Args:
        path: Path to JSON file

    Returns:
        dict or None: Parsed JSON data or None if file doesn't exist
    """
    if not os.path.exists(path):
        return None

    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def save_json(data: Dict[str, Any], path: str) -> None:
    """
    Save data to a JSON file.

    Args:
        data: Data to save
        path: Path to save to
    """
    ensure_dir_exists(os.path.dirname(path))

    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, ensure_ascii=False, default=str)


def load_csv(path: str) -> Optional[pd.DataFrame]:
    """
    Load a CSV file into a DataFrame.

    Args:
        path: Path to CSV file

    Returns:
        DataFrame or None: Loaded data or None if file doesn't exist
    """
    if not os.path.exists(path):
        return None

    return pd.read_csv(path)


def save_csv(df: pd.DataFrame, path: str) -> None:
    """
    Save a DataFrame to CSV with six significant digits.

    Args:
        df: DataFrame to save
        path: Path to save to
    """
    ensure_dir_exists(os.path.dirname(path))
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')


def save_checkpoint(scorer: Scorer, config: Dict[str, Any], path: str) -> None:
    """
    Save a scorer checkpoint.

    The file is a torch-serialized dict: format_version, n_features,
    hidden_sizes, dropout, state_dict (layer weights and biases) and the
    training config.

    Args:
        scorer: Trained Scorer
        config: Plain-value training config
        path: Path to save to
    """
    ensure_dir_exists(os.path.dirname(path))
    torch.save({
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "n_features": scorer.n_features,
        "hidden_sizes": list(scorer.hidden_sizes),
        "dropout": scorer.dropout,
        "state_dict": scorer.state_dict(),
        "config": config,
    }, path)


def load_checkpoint(path: str):
    """
    Load a scorer saved by save_checkpoint.

    Returns:
        (Scorer, config dict)
    """
    if not os.path.exists(path):
        raise ConfigurationError(f"Checkpoint not found: {path}")

    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ConfigurationError(f"Unsupported checkpoint format version {version}")

    scorer = Scorer(payload["n_features"], payload["hidden_sizes"], payload["dropout"])
    scorer.load_state_dict(payload["state_dict"])
    scorer.eval()
    return scorer, payload.get("config", {})
