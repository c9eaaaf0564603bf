"""
Training loop for scorers under exposure and baseline objectives.
"""

import copy
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np
import torch
from tqdm import tqdm

from config.settings import (
    DEFAULT_LAMBDA, TAU, TRAIN_SAMPLES, TEST_SAMPLES, LEARNING_RATE, DROPOUT, HIDDEN_SIZES,
    EPOCHS, PATIENCE, BATCH_SIZE, OPTIMIZER, MOMENTUM, DEFAULT_SEED, SPLIT_FRACTIONS,
    TRAINING_PROFILES, DEFAULT_TRAINING_PROFILE, DESK_PROFILE,
)
from src.exceptions import ConfigurationError, DimensionError, DivergenceError
from src.exposure import BrowsingModel, RelevanceJudgments, target_exposure
from src.ltr.objectives import (
    ee_objective, group_exposure, group_objective, pairwise_loss, pointwise_loss, sampled_exposure,
)
from src.ltr.scorer import Scorer
from src.utils.logger import get_training_logger

logger = get_training_logger()

OBJECTIVES = ("ee", "group", "pointwise", "pairwise")
OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True, eq=False)
class LtrQuery:
    """Feature matrix, grades and optional group labels of one query."""

    query_id: str
    features: np.ndarray
    grades: np.ndarray
    doc_ids: Tuple[str, ...] = ()
    groups: Optional[Tuple[Hashable, ...]] = None

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        grades = np.asarray(self.grades, dtype=np.int64)
        if features.ndim != 2 or features.shape[0] != len(grades):
            raise DimensionError(f"Query {self.query_id}: features and grades disagree in length")
        doc_ids = tuple(self.doc_ids) or tuple(f"{self.query_id}-{i}" for i in range(len(grades)))
        if len(doc_ids) != len(grades):
            raise DimensionError(f"Query {self.query_id}: one document id per row is required")
        if self.groups is not None and len(self.groups) != len(grades):
            raise DimensionError(f"Query {self.query_id}: one group label per row is required")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "grades", grades)
        object.__setattr__(self, "doc_ids", doc_ids)
        if self.groups is not None:
            object.__setattr__(self, "groups", tuple(self.groups))

    def __len__(self) -> int:
        return len(self.grades)

    def judgments(self) -> RelevanceJudgments:
        return RelevanceJudgments.from_grades(
            self.query_id, dict(zip(self.doc_ids, self.grades.tolist()))
        )

    def with_features(self, features: np.ndarray) -> "LtrQuery":
        return LtrQuery(self.query_id, features, self.grades, self.doc_ids, self.groups)

    def with_groups(self, groups: Sequence[Hashable]) -> "LtrQuery":
        return LtrQuery(self.query_id, self.features, self.grades, self.doc_ids, tuple(groups))


@dataclass
class LtrDataset:
    """Queries sharing one feature dimensionality."""

    queries: List[LtrQuery]
    n_features: int

    def __post_init__(self):
        for query in self.queries:
            if query.features.shape[1] != self.n_features:
                raise DimensionError(
                    f"Query {query.query_id} has {query.features.shape[1]} features, "
                    f"expected {self.n_features}"
                )

    def __len__(self) -> int:
        return len(self.queries)

    @property
    def group_labels(self) -> Tuple[Hashable, ...]:
        labels = {g for q in self.queries if q.groups is not None for g in q.groups}
        return tuple(sorted(labels, key=str))

    def split(
        self,
        fractions: Sequence[float] = SPLIT_FRACTIONS,
        seed: int = DEFAULT_SEED
    ) -> Tuple["LtrDataset", ...]:
        """Shuffle queries and cut them into consecutive splits by fraction."""
        fractions = np.asarray(fractions, dtype=np.float64)
        if np.any(fractions < 0) or fractions.sum() <= 0:
            raise ConfigurationError(f"Invalid split fractions {tuple(fractions)}")
        order = np.random.default_rng(seed).permutation(len(self.queries))
        bounds = np.round(np.cumsum(fractions / fractions.sum()) * len(order)).astype(int)
        splits, start = [], 0
        for stop in bounds:
            splits.append(LtrDataset([self.queries[i] for i in order[start:stop]], self.n_features))
            start = stop
        return tuple(splits)


@dataclass
class TrainConfig:
    lam: float = DEFAULT_LAMBDA
    tau: float = TAU
    train_samples: int = TRAIN_SAMPLES
    test_samples: int = TEST_SAMPLES
    learning_rate: float = LEARNING_RATE
    dropout: float = DROPOUT
    hidden_sizes: Tuple[int, ...] = HIDDEN_SIZES
    epochs: int = EPOCHS
    patience: int = PATIENCE
    batch_size: int = BATCH_SIZE
    optimizer: str = OPTIMIZER
    momentum: float = MOMENTUM
    seed: int = DEFAULT_SEED
    browsing_model: BrowsingModel = field(default_factory=BrowsingModel.rbp)

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigurationError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.tau <= 0.0:
            raise ConfigurationError(f"tau must be positive, got {self.tau}")
        if min(self.train_samples, self.test_samples, self.epochs, self.batch_size) < 1:
            raise ConfigurationError("Sample counts, epochs and batch size must be positive")
        if self.learning_rate <= 0.0:
            raise ConfigurationError(f"learning rate must be positive, got {self.learning_rate}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"Unknown optimizer '{self.optimizer}', expected one of {OPTIMIZERS}")
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)

    @classmethod
    def for_profile(cls, profile: str = DEFAULT_TRAINING_PROFILE, **overrides: Any) -> "TrainConfig":
        """
        Config from a named profile; overrides that are None keep the profile value.

        The reference profile is the dataclass defaults (SGD, lr 0.001, two
        layers of 256); desk swaps in Adam and a small network so training
        converges on synthetic collections within minutes.
        """
        if profile not in TRAINING_PROFILES:
            raise ConfigurationError(f"Unknown training profile '{profile}', expected one of {TRAINING_PROFILES}")
        values = dict(DESK_PROFILE) if profile == "desk" else {}
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        """Plain values for manifests and checkpoints."""
        model = self.browsing_model
        return {
            "lambda": self.lam,
            "tau": self.tau,
            "train_samples": self.train_samples,
            "test_samples": self.test_samples,
            "learning_rate": self.learning_rate,
            "dropout": self.dropout,
            "hidden_sizes": list(self.hidden_sizes),
            "epochs": self.epochs,
            "patience": self.patience,
            "batch_size": self.batch_size,
            "optimizer": self.optimizer,
            "momentum": self.momentum,
            "seed": self.seed,
            "browsing_model": model.kind,
            "gamma": model.gamma,
            "depth": model.depth,
            "stop_table": dict(model.stop_table) if model.stop_table is not None else None,
        }


@dataclass
class _QueryTensors:
    query_id: str
    features: torch.Tensor
    grades: torch.Tensor
    target: torch.Tensor
    stop_probs: torch.Tensor
    membership: Optional[torch.Tensor]


def _prepare(
    dataset: LtrDataset,
    config: TrainConfig,
    objective: str,
    group_labels: Tuple[Hashable, ...]
) -> List[_QueryTensors]:
    prepared = []
    column = {g: j for j, g in enumerate(group_labels)}
    model = config.browsing_model
    for query in dataset.queries:
        if len(query) == 0:
            logger.warning(f"Skipping empty query {query.query_id}")
            continue
        judgments = query.judgments()
        membership = None
        if objective == "group":
            if query.groups is None:
                raise ConfigurationError(f"Query {query.query_id} has no group attribution")
            matrix = np.zeros((len(query), len(group_labels)), dtype=np.float32)
            matrix[np.arange(len(query)), [column[g] for g in query.groups]] = 1.0
            membership = torch.from_numpy(matrix)
        prepared.append(_QueryTensors(
            query_id=query.query_id,
            features=torch.as_tensor(query.features, dtype=torch.float32),
            grades=torch.as_tensor(query.grades),
            target=torch.as_tensor(target_exposure(model, judgments).values, dtype=torch.float32),
            stop_probs=torch.as_tensor(model.stop_probabilities(query.grades), dtype=torch.float32),
            membership=membership,
        ))
    return prepared


def _query_loss(
    scorer: Scorer,
    query: _QueryTensors,
    objective: str,
    config: TrainConfig,
    generator: torch.Generator
) -> Optional[torch.Tensor]:
    scores = scorer(query.features)
    if objective == "pointwise":
        return pointwise_loss(scores, query.grades)
    if objective == "pairwise":
        return pairwise_loss(scores, query.grades)

    exposure = sampled_exposure(
        scores, config.browsing_model, config.tau, config.train_samples, generator,
        stop_probs=query.stop_probs,
    )
    if objective == "ee":
        return ee_objective(exposure, query.target, config.lam)
    return group_objective(exposure, group_exposure(exposure, query.membership), query.target, config.lam)


def _batch_loss(
    scorer: Scorer,
    batch: Sequence[_QueryTensors],
    objective: str,
    config: TrainConfig,
    generator: torch.Generator
) -> Optional[torch.Tensor]:
    losses = [
        loss for loss in (_query_loss(scorer, q, objective, config, generator) for q in batch)
        if loss is not None
    ]
    if not losses:
        return None
    return torch.stack(losses).mean()


def _make_optimizer(scorer: Scorer, config: TrainConfig) -> torch.optim.Optimizer:
    if config.optimizer == "adam":
        return torch.optim.Adam(scorer.parameters(), lr=config.learning_rate)
    return torch.optim.SGD(scorer.parameters(), lr=config.learning_rate, momentum=config.momentum)


def _validation_loss(
    scorer: Scorer,
    queries: Sequence[_QueryTensors],
    objective: str,
    config: TrainConfig
) -> float:
    scorer.eval()
    # a fixed noise stream keeps epochs comparable
    generator = torch.Generator().manual_seed(config.seed + 1)
    with torch.no_grad():
        loss = _batch_loss(scorer, queries, objective, config, generator)
    scorer.train()
    return float("nan") if loss is None else loss.item()


def train(
    dataset: LtrDataset,
    objective: str,
    config: TrainConfig,
    validation: Optional[LtrDataset] = None,
    progress: bool = False
) -> Scorer:
    """
    Fit a scorer by minibatch gradient descent.

    For ee and group objectives every query draws train_samples Gumbel
    rankings per step; grades only reach these objectives through the
    target exposure. Per-query losses are macro-averaged within a batch.

    Args:
        dataset: Training queries
        objective: ee, group, pointwise or pairwise
        config: Hyperparameters
        validation: Queries for early stopping; the training objective is used if absent
        progress: Show a progress bar over epochs

    Returns:
        Scorer with the best validation weights; its training_history lists per-epoch losses
    """
    if objective not in OBJECTIVES:
        raise ConfigurationError(f"Unknown objective '{objective}', expected one of {OBJECTIVES}")

    torch.manual_seed(config.seed)
    generator = torch.Generator().manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)

    labels = dataset.group_labels
    if validation is not None:
        labels = tuple(sorted(set(labels) | set(validation.group_labels), key=str))
    train_queries = _prepare(dataset, config, objective, labels)
    valid_queries = _prepare(validation, config, objective, labels) if validation is not None else []
    if not train_queries:
        raise ConfigurationError("No non-empty training queries")

    scorer = Scorer(dataset.n_features, config.hidden_sizes, config.dropout)
    scorer.train()
    optimizer = _make_optimizer(scorer, config)

    logger.info(
        f"Training {objective} scorer on {len(train_queries)} queries "
        f"({len(valid_queries)} validation), lambda={config.lam:g}"
    )

    history: List[Dict[str, float]] = []
    best_loss = math.inf
    best_state = copy.deepcopy(scorer.state_dict())
    best_epoch = 0
    stale = 0

    for epoch in tqdm(range(1, config.epochs + 1), desc=f"train {objective}", disable=not progress):
        order = rng.permutation(len(train_queries))
        batch_losses = []
        for step, start in enumerate(range(0, len(order), config.batch_size)):
            batch = [train_queries[i] for i in order[start:start + config.batch_size]]
            loss = _batch_loss(scorer, batch, objective, config, generator)
            if loss is None:
                continue
            if not torch.isfinite(loss):
                raise DivergenceError(
                    f"Non-finite {objective} loss at epoch {epoch}, step {step}",
                    diagnostics={
                        "objective": objective,
                        "epoch": epoch,
                        "step": step,
                        "loss": loss.item(),
                        "queries": [q.query_id for q in batch],
                        "config": config.to_dict(),
                        "history": history,
                    },
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            batch_losses.append(loss.item())

        train_loss = float(np.mean(batch_losses)) if batch_losses else float("nan")
        valid_loss = (
            _validation_loss(scorer, valid_queries, objective, config) if valid_queries else train_loss
        )
        history.append({"epoch": epoch, "train_loss": train_loss, "valid_loss": valid_loss})
        logger.debug(f"epoch {epoch}: train={train_loss:.6g} valid={valid_loss:.6g}")

        if valid_loss < best_loss:
            best_loss = valid_loss
            best_state = copy.deepcopy(scorer.state_dict())
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                logger.info(f"Early stopping at epoch {epoch}, best epoch {best_epoch}")
                break

    scorer.load_state_dict(best_state)
    scorer.eval()
    scorer.training_history = history
    scorer.best_epoch = best_epoch
    return scorer
