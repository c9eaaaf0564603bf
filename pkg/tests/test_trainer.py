"""
Tests for scorer training, dataset handling, checkpoints and the evaluation
of trained models.
"""

import numpy as np
import pytest
import torch

from config.grade_tables import DEFAULT_LAMBDA_GRID
from config.settings import DESK_PROFILE
from src.exceptions import ConfigurationError, DimensionError, DivergenceError
from src.exposure import BrowsingModel
from src.ltr import EvaluationResult, LtrDataset, LtrQuery, Scorer, TrainConfig, evaluate_trained, train
from src.metrics import ee_auc
from src.synthetic import SynthSpec, synth_ltr
from src.utils.storage import load_checkpoint, save_checkpoint


@pytest.fixture
def ltr_data():
    spec = SynthSpec(n_queries=30, pool_size=10, grade_distribution=(0.5, 0.3, 0.2), n_features=3, seed=3)
    return synth_ltr(spec)


def _quick(**overrides):
    values = dict(hidden_sizes=(8,), dropout=0.0, epochs=2, train_samples=4, test_samples=10, batch_size=8)
    values.update(overrides)
    return TrainConfig(**values)


# -------------------------------------------------------------------------------------------------
# Datasets
# -------------------------------------------------------------------------------------------------

class TestDataset:

    def test_query_lengths_must_agree(self):
        with pytest.raises(DimensionError):
            LtrQuery("q", np.zeros((3, 2)), np.array([0, 1]))
        with pytest.raises(DimensionError):
            LtrQuery("q", np.zeros((2, 2)), np.array([0, 1]), groups=("a",))

    def test_default_document_ids(self):
        query = LtrQuery("q", np.zeros((2, 1)), np.array([1, 0]))
        assert query.doc_ids == ("q-0", "q-1")
        assert query.judgments().grade("q-0") == 1

    def test_feature_count_must_agree(self):
        with pytest.raises(DimensionError):
            LtrDataset([LtrQuery("q", np.zeros((2, 3)), np.array([0, 1]))], 2)

    def test_split_sizes(self, ltr_data):
        train_set, valid_set, test_set = ltr_data.split((0.6, 0.2, 0.2), seed=0)
        assert (len(train_set), len(valid_set), len(test_set)) == (18, 6, 6)
        ids = [q.query_id for s in (train_set, valid_set, test_set) for q in s.queries]
        assert sorted(ids) == sorted(q.query_id for q in ltr_data.queries)

    def test_split_is_seeded(self, ltr_data):
        first = [q.query_id for q in ltr_data.split(seed=4)[0].queries]
        second = [q.query_id for q in ltr_data.split(seed=4)[0].queries]
        assert first == second

    def test_invalid_split(self, ltr_data):
        with pytest.raises(ConfigurationError):
            ltr_data.split((0.5, -0.1))


class TestConfig:

    def test_rejects_invalid_values(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(lam=1.5)
        with pytest.raises(ConfigurationError):
            TrainConfig(tau=0.0)
        with pytest.raises(ConfigurationError):
            TrainConfig(optimizer="lbfgs")
        with pytest.raises(ConfigurationError):
            TrainConfig(batch_size=0)

    def test_to_dict(self):
        config = TrainConfig(browsing_model=BrowsingModel.err(0.8, 10))
        values = config.to_dict()
        assert values["browsing_model"] == "err"
        assert values["gamma"] == 0.8
        assert values["hidden_sizes"] == [256, 256]

    def test_desk_profile(self):
        config = TrainConfig.for_profile("desk")
        assert config.optimizer == "adam"
        assert config.learning_rate == DESK_PROFILE["learning_rate"]
        assert config.hidden_sizes == (32,)
        assert config.dropout == 0.0

    def test_reference_profile_is_the_default_config(self):
        assert TrainConfig.for_profile("reference").to_dict() == TrainConfig().to_dict()

    def test_profile_overrides_skip_none(self):
        config = TrainConfig.for_profile("desk", learning_rate=None, epochs=3, lam=0.5)
        assert config.learning_rate == DESK_PROFILE["learning_rate"]
        assert (config.epochs, config.lam) == (3, 0.5)

    def test_unknown_profile(self):
        with pytest.raises(ConfigurationError):
            TrainConfig.for_profile("cluster")


# -------------------------------------------------------------------------------------------------
# Training
# -------------------------------------------------------------------------------------------------

class TestTrain:

    def test_full_batch_descent_decreases_loss(self, ltr_data):
        config = TrainConfig(
            hidden_sizes=(), dropout=0.0, optimizer="sgd", learning_rate=0.05,
            epochs=10, batch_size=len(ltr_data), patience=10,
        )
        scorer = train(ltr_data, "pointwise", config)
        losses = [h["train_loss"] for h in scorer.training_history]
        assert len(losses) == 10
        assert all(later < earlier for earlier, later in zip(losses, losses[1:]))

    def test_pointwise_beats_the_mean_predictor(self, ltr_data):
        train_set, valid_set, test_set = ltr_data.split((0.6, 0.2, 0.2), seed=0)
        config = TrainConfig(
            hidden_sizes=(), dropout=0.0, optimizer="adam", learning_rate=0.05,
            epochs=200, batch_size=4, patience=20,
        )
        scorer = train(train_set, "pointwise", config, validation=valid_set)

        features = np.vstack([q.features for q in test_set.queries])
        grades = np.concatenate([q.grades for q in test_set.queries])
        mean_grade = np.concatenate([q.grades for q in train_set.queries]).mean()
        model_mse = np.mean((scorer.score(features) - grades) ** 2)
        assert model_mse < np.mean((mean_grade - grades) ** 2)

    @pytest.mark.parametrize("objective", ["ee", "group", "pairwise"])
    def test_objectives_train(self, ltr_data, objective):
        scorer = train(ltr_data, objective, _quick())
        assert isinstance(scorer, Scorer)
        assert len(scorer.training_history) == 2
        assert all(np.isfinite(h["train_loss"]) for h in scorer.training_history)
        assert all(type(h["train_loss"]) is float for h in scorer.training_history)
        assert not scorer.training

    def test_same_seed_same_weights(self, ltr_data):
        first = train(ltr_data, "ee", _quick(seed=5))
        second = train(ltr_data, "ee", _quick(seed=5))
        for a, b in zip(first.parameters(), second.parameters()):
            torch.testing.assert_close(a, b)

    def test_early_stopping_keeps_best_epoch(self, ltr_data):
        train_set, valid_set, _ = ltr_data.split(seed=1)
        scorer = train(
            train_set, "pointwise", _quick(epochs=30, patience=2, optimizer="adam", learning_rate=0.01), valid_set
        )
        history = scorer.training_history
        assert len(history) <= 30
        best = min(h["valid_loss"] for h in history)
        assert history[scorer.best_epoch - 1]["valid_loss"] == best

    def test_unknown_objective(self, ltr_data):
        with pytest.raises(ConfigurationError):
            train(ltr_data, "listwise", _quick())

    def test_group_objective_needs_groups(self):
        dataset = LtrDataset([LtrQuery("q", np.eye(3), np.array([1, 0, 0]))], 3)
        with pytest.raises(ConfigurationError):
            train(dataset, "group", _quick())

    def test_divergence_carries_diagnostics(self):
        features = np.array([[np.inf, 1.0], [0.0, 1.0]])
        dataset = LtrDataset([LtrQuery("bad", features, np.array([1, 0]))], 2)
        with pytest.raises(DivergenceError) as info:
            train(dataset, "pointwise", _quick(hidden_sizes=()))
        diagnostics = info.value.diagnostics
        assert diagnostics["objective"] == "pointwise"
        assert diagnostics["epoch"] == 1
        assert diagnostics["queries"] == ["bad"]

    @pytest.mark.slow
    def test_disparity_weight_lowers_disparity(self):
        """Trained with all weight on disparity, a scorer randomizes more than one trained for relevance."""
        spec = SynthSpec(n_queries=40, pool_size=20, grade_distribution=(0.7, 0.2, 0.1), n_features=5, seed=11)
        train_set, _, test_set = synth_ltr(spec).split((0.6, 0.2, 0.2), seed=0)
        model = BrowsingModel.rbp(0.5, 20)

        def disparity(objective, lam):
            config = TrainConfig(
                lam=lam, hidden_sizes=(16,), dropout=0.0, optimizer="adam", learning_rate=0.01,
                epochs=20, batch_size=4, train_samples=10, browsing_model=model,
            )
            scorer = train(train_set, objective, config)
            fairness = "individual" if objective == "ee" else "demographic_parity"
            result = evaluate_trained(scorer, test_set, model, grid=[1.0], n_samples=50, fairness=fairness)
            return np.mean([curve.points[0].d_norm for curve in result.curves if len(curve)])

        assert disparity("ee", 1.0) < disparity("ee", 0.0)
        assert disparity("group", 1.0) < disparity("group", 0.0)

    @pytest.mark.slow
    def test_exposure_objectives_win_on_their_own_fairness(self):
        """
        The ee family reaches a better individual tradeoff than pointwise
        regression, and the group family a better demographic-parity tradeoff
        than ee, on most seeds.
        """
        model = BrowsingModel.rbp(0.5, 20)
        wins = {"individual": 0, "demographic_parity": 0}

        for seed in range(5):
            spec = SynthSpec(
                n_queries=250, pool_size=20, grade_distribution=(0.7, 0.2, 0.1), n_features=10, seed=seed
            )
            train_set, test_set = synth_ltr(spec).split((0.8, 0.2), seed=seed)
            assert (len(train_set), len(test_set)) == (200, 50)

            def fit(objective, lam):
                return train(train_set, objective, TrainConfig.for_profile(
                    "desk", lam=lam, seed=seed, browsing_model=model,
                ))

            def mean_auc(trained, fairness):
                return evaluate_trained(
                    trained, test_set, model, n_samples=50, seed=seed, fairness=fairness
                ).mean_auc

            pointwise = fit("pointwise", 0.0)
            ee = {lam: fit("ee", lam) for lam in DEFAULT_LAMBDA_GRID}
            group = {lam: fit("group", lam) for lam in DEFAULT_LAMBDA_GRID}

            if mean_auc(ee, "individual") >= mean_auc(pointwise, "individual"):
                wins["individual"] += 1
            if mean_auc(group, "demographic_parity") >= mean_auc(ee, "demographic_parity"):
                wins["demographic_parity"] += 1

        assert wins["individual"] >= 4
        assert wins["demographic_parity"] >= 4


# -------------------------------------------------------------------------------------------------
# Checkpoints and evaluation
# -------------------------------------------------------------------------------------------------

class TestCheckpoint:

    def test_round_trip(self, ltr_data, tmp_path):
        config = _quick()
        scorer = train(ltr_data, "pointwise", config)
        path = str(tmp_path / "model.pt")
        save_checkpoint(scorer, config.to_dict(), path)

        loaded, saved_config = load_checkpoint(path)
        features = ltr_data.queries[0].features
        np.testing.assert_array_equal(loaded.score(features), scorer.score(features))
        assert saved_config["hidden_sizes"] == [8]

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_checkpoint(str(tmp_path / "absent.pt"))

    def test_unknown_format_version(self, tmp_path):
        path = str(tmp_path / "old.pt")
        torch.save({"format_version": -1}, path)
        with pytest.raises(ConfigurationError):
            load_checkpoint(path)


class TestEvaluateTrained:

    def test_inverse_temperature_sweep(self, ltr_data):
        scorer = train(ltr_data, "pointwise", _quick())
        model = BrowsingModel.rbp(0.5, 20)
        result = evaluate_trained(scorer, ltr_data, model, grid=[0.0, 1.0, 16.0], n_samples=10, name="pw")
        assert isinstance(result, EvaluationResult)
        assert result.name == "pw"
        assert len(result.curves) == len(ltr_data)
        assert all(len(curve) + curve.skipped == 3 for curve in result.curves)
        assert all(0.0 <= v <= 1.0 for v in result.auc.values())
        assert 0.0 <= result.mean_auc <= 1.0

    def test_models_per_tradeoff(self, ltr_data):
        scorers = {lam: train(ltr_data, "ee", _quick(lam=lam)) for lam in (0.0, 1.0)}
        result = evaluate_trained(scorers, ltr_data, BrowsingModel.rbp(0.5, 20), grid=[0.0, 4.0], n_samples=10)
        complete = next(curve for curve in result.curves if curve.skipped == 0)
        params = sorted(p.param for p in complete.points)
        assert params == [0.0, 0.0, 1.0, 1.0]
        assert result.auc[complete.query_id] == pytest.approx(ee_auc(complete.envelope()))

    def test_empty_grid(self, ltr_data):
        with pytest.raises(ConfigurationError):
            evaluate_trained(Scorer(3, (), 0.0), ltr_data, BrowsingModel.rbp(), grid=[])

    def test_demographic_parity(self, ltr_data):
        scorer = train(ltr_data, "pointwise", _quick())
        result = evaluate_trained(
            scorer, ltr_data, BrowsingModel.rbp(0.5, 20), grid=[0.0, 4.0], n_samples=10,
            fairness="demographic_parity",
        )
        assert result.fairness == "demographic_parity"
        assert all(0.0 <= p.d_norm <= 1.0 for curve in result.curves for p in curve.points)

    def test_unknown_fairness(self, ltr_data):
        scorer = Scorer(3, (), 0.0)
        with pytest.raises(ConfigurationError):
            evaluate_trained(scorer, ltr_data, BrowsingModel.rbp(), fairness="equal_odds")
