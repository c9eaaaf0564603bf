# Learning to rank against expected-exposure objectives
from src.ltr.scorer import Scorer
from src.ltr.trainer import LtrDataset, LtrQuery, TrainConfig, train
from src.ltr.evaluation import EvaluationResult, evaluate_trained

__all__ = [
    "Scorer", "LtrDataset", "LtrQuery", "TrainConfig", "train",
    "EvaluationResult", "evaluate_trained",
]
