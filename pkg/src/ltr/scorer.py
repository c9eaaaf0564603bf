"""
Feed-forward document scorer.
"""

from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from config.settings import DROPOUT, HIDDEN_SIZES
from src.exceptions import ConfigurationError


class Scorer(nn.Module):
    """
    Fully-connected network mapping a feature vector to one real score.

    An empty hidden_sizes gives a linear model.
    """

    def __init__(
        self,
        n_features: int,
        hidden_sizes: Sequence[int] = HIDDEN_SIZES,
        dropout: float = DROPOUT
    ):
        super().__init__()
        if n_features < 1:
            raise ConfigurationError(f"n_features must be positive, got {n_features}")
        if not 0.0 <= dropout < 1.0:
            raise ConfigurationError(f"dropout must lie in [0, 1), got {dropout}")

        self.n_features = n_features
        self.hidden_sizes = tuple(int(h) for h in hidden_sizes)
        self.dropout = dropout

        layers = []
        width = n_features
        for size in self.hidden_sizes:
            layers += [nn.Linear(width, size), nn.ReLU(), nn.Dropout(dropout)]
            width = size
        layers.append(nn.Linear(width, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.net(features).squeeze(-1)

    def score(self, features: np.ndarray) -> np.ndarray:
        """Deterministic scores (dropout off) as float64."""
        was_training = self.training
        self.eval()
        try:
            dtype = next(self.parameters()).dtype
            with torch.no_grad():
                scores = self(torch.as_tensor(np.asarray(features), dtype=dtype))
        finally:
            self.train(was_training)
        return scores.double().numpy()
