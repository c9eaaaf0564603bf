"""
Tests for exposure computation: browsing models, single-ranking exposure,
Monte Carlo and exact expected exposure, and the closed-form target.
"""

import numpy as np
import pytest

from src.exceptions import (
    ConfigurationError, DimensionError, EnumerationCapError, JudgmentMismatchError,
    PolicyIntegrityError,
)
from src.exposure import (
    BrowsingModel, ExposureVector, Ranking, RelevanceJudgments, exact_expected_exposure,
    expected_exposure_mc, query_seed, ranking_exposure, target_exposure,
)
from src.policies import DeterministicPolicy, OraclePolicy, PlackettLucePolicy, Policy


def _binary(n_relevant, n_other=0, query_id="q"):
    grades = {f"r{i}": 1 for i in range(n_relevant)}
    grades.update({f"n{i}": 0 for i in range(n_other)})
    return RelevanceJudgments.from_grades(query_id, grades)


def _grade_profiles():
    rng = np.random.default_rng(2024)
    profiles = [[1], [0, 0], [3, 2, 1, 0], [1] * 8, [2, 1, 1, 0, 0, 0, 0, 0]]
    for size in range(2, 9):
        for _ in range(3):
            profiles.append(rng.integers(0, 4, size=size).tolist())
    return profiles


# -------------------------------------------------------------------------------------------------
# Data model
# -------------------------------------------------------------------------------------------------

class TestDataModel:

    def test_pool_and_grades_must_agree(self):
        with pytest.raises(JudgmentMismatchError):
            RelevanceJudgments("q", ("a", "b"), {"a": 1})

    def test_negative_grade_rejected(self):
        with pytest.raises(JudgmentMismatchError):
            RelevanceJudgments.from_grades("q", {"a": -1})

    def test_extended_adds_unjudged_documents_at_grade_zero(self, graded_judgments):
        pool = graded_judgments.extended(["a", "x", "y"])
        assert pool.pool == ("a", "b", "c", "d", "x", "y")
        assert pool.grade("x") == 0
        assert pool.grade_counts == {0: 3, 1: 2, 2: 1}

    def test_unknown_document_is_a_mismatch(self, graded_judgments):
        with pytest.raises(JudgmentMismatchError):
            graded_judgments.grade("zzz")

    def test_model_rejects_invalid_patience_and_depth(self):
        with pytest.raises(ConfigurationError):
            BrowsingModel.rbp(1.0)
        with pytest.raises(ConfigurationError):
            BrowsingModel.rbp(0.5, 0)

    def test_stop_table_must_not_decrease(self):
        with pytest.raises(ConfigurationError):
            BrowsingModel.err(0.5, 20, {1: 0.75, 2: 0.5})

    def test_missing_grade_inherits_largest_listed_grade_below(self):
        model = BrowsingModel.err(0.5, 20, {1: 0.4})
        assert model.stop_probability(3) == 0.4
        assert model.stop_probability(0) == 0.0

    def test_default_stop_table(self, err):
        assert err.stop_probability(1) == 0.5
        assert err.stop_probability(2) == 0.75

    def test_exposure_vector_validation(self):
        with pytest.raises(DimensionError):
            ExposureVector(("a", "b"), np.array([1.0]))
        with pytest.raises(ConfigurationError):
            ExposureVector(("a",), np.array([-0.1]))

    def test_ranking_rejects_duplicates(self):
        with pytest.raises(ConfigurationError):
            Ranking(("a", "a"))


# -------------------------------------------------------------------------------------------------
# Exposure of one ranking
# -------------------------------------------------------------------------------------------------

class TestRankingExposure:

    def test_rbp_positions(self, rbp):
        judgments = RelevanceJudgments.from_grades("q", {"a": 1, "b": 0, "c": 0})
        exposure = ranking_exposure(rbp, Ranking(("a", "b", "c")), judgments)
        assert exposure["a"] == 1.0
        assert exposure["c"] == 0.25

    def test_err_discounts_below_relevant_documents(self, err):
        judgments = RelevanceJudgments.from_grades("q", {"a": 1, "b": 1})
        exposure = ranking_exposure(err, Ranking(("a", "b")), judgments)
        assert exposure["a"] == 1.0
        assert exposure["b"] == pytest.approx(0.25)

    def test_depth_truncates(self):
        model = BrowsingModel.rbp(0.5, 2)
        judgments = _binary(0, 3)
        exposure = ranking_exposure(model, Ranking(("n0", "n1", "n2")), judgments)
        np.testing.assert_allclose(exposure.values, [1.0, 0.5, 0.0])

    def test_unranked_documents_get_zero(self, rbp, graded_judgments):
        exposure = ranking_exposure(rbp, Ranking(("c",)), graded_judgments)
        assert exposure.to_dict() == {"a": 0.0, "b": 0.0, "c": 1.0, "d": 0.0}

    def test_ranking_outside_pool_is_a_mismatch(self, rbp, graded_judgments):
        with pytest.raises(JudgmentMismatchError):
            ranking_exposure(rbp, Ranking(("a", "zzz")), graded_judgments)

    @pytest.mark.parametrize("gamma", [0.3, 0.5, 0.9])
    def test_err_never_exceeds_rbp(self, gamma):
        rng = np.random.default_rng(11)
        for profile in _grade_profiles():
            judgments = RelevanceJudgments.from_grades(
                "q", {f"d{i}": g for i, g in enumerate(profile)}
            )
            for _ in range(5):
                length = int(rng.integers(1, judgments.size + 1))
                ranking = Ranking(tuple(str(d) for d in rng.permutation(judgments.pool)[:length]))
                err = ranking_exposure(BrowsingModel.err(gamma), ranking, judgments)
                rbp = ranking_exposure(BrowsingModel.rbp(gamma), ranking, judgments)
                assert np.all(err.values <= rbp.values + 1e-15)

    @pytest.mark.parametrize("kind", ["rbp", "err"])
    def test_independent_of_pool_storage_order(self, kind):
        model = BrowsingModel(kind, 0.5, None)
        grades = {"a": 2, "b": 0, "c": 1, "d": 1, "e": 0, "f": 3}
        ranking = Ranking(("c", "f", "b", "a"))
        reference = ranking_exposure(model, ranking, RelevanceJudgments.from_grades("q", grades)).to_dict()
        rng = np.random.default_rng(5)
        for _ in range(6):
            pool = tuple(str(d) for d in rng.permutation(list(grades)))
            judgments = RelevanceJudgments.from_grades("q", grades, pool=pool)
            exposure = ranking_exposure(model, ranking, judgments)
            assert exposure.to_dict() == pytest.approx(reference, abs=1e-15)


# -------------------------------------------------------------------------------------------------
# Target exposure
# -------------------------------------------------------------------------------------------------

class TestTargetExposure:

    def test_single_relevant_document(self, rbp):
        assert target_exposure(rbp, _binary(1, 3))["r0"] == 1.0

    def test_two_relevant_documents(self, rbp):
        target = target_exposure(rbp, _binary(2, 3))
        assert target["r0"] == pytest.approx(0.75, abs=1e-15)
        assert target["r1"] == pytest.approx(0.75, abs=1e-15)

    def test_graded_blocks(self, rbp):
        judgments = RelevanceJudgments.from_grades("q", {"a": 2, "b": 1, "c": 1})
        target = target_exposure(rbp, judgments)
        assert target["a"] == pytest.approx(1.0, abs=1e-15)
        assert target["b"] == pytest.approx(0.375, abs=1e-15)
        assert target["c"] == pytest.approx(0.375, abs=1e-15)

    def test_err_two_relevant(self, err):
        target = target_exposure(err, _binary(2))
        np.testing.assert_allclose(target.values, [0.625, 0.625], atol=1e-15)

    @pytest.mark.parametrize("kind", ["rbp", "err"])
    @pytest.mark.parametrize("gamma", [0.3, 0.5, 0.9])
    def test_strictly_decreasing_in_grade(self, kind, gamma):
        model = BrowsingModel(kind, gamma, None)
        judgments = RelevanceJudgments.from_grades(
            "q", {"a": 3, "b": 2, "c": 2, "d": 1, "e": 1, "f": 1, "g": 0, "h": 0}
        )
        target = target_exposure(model, judgments)
        per_grade = {judgments.grade(doc): target[doc] for doc in judgments.pool}
        ordered = [per_grade[g] for g in sorted(per_grade, reverse=True)]
        assert all(high > low for high, low in zip(ordered, ordered[1:]))
        for doc in judgments.pool:
            assert target[doc] == per_grade[judgments.grade(doc)]

    def test_patience_override(self):
        target = target_exposure(BrowsingModel.rbp(0.8), _binary(2, 5))
        assert target["r0"] == pytest.approx(0.9, abs=1e-12)

    def test_blocks_beyond_depth_get_nothing(self):
        model = BrowsingModel.rbp(0.5, 2)
        target = target_exposure(model, _binary(2, 3))
        np.testing.assert_allclose(target.values, [0.75, 0.75, 0.0, 0.0, 0.0])

    @pytest.mark.parametrize("kind", ["rbp", "err"])
    @pytest.mark.parametrize("gamma", [0.3, 0.5, 0.8])
    @pytest.mark.parametrize("depth", [None, 3])
    def test_matches_enumeration_of_grade_sorted_rankings(self, kind, gamma, depth):
        model = BrowsingModel(kind, gamma, depth)
        for profile in _grade_profiles():
            judgments = RelevanceJudgments.from_grades(
                "q", {f"d{i}": g for i, g in enumerate(profile)}
            )
            exact = exact_expected_exposure(OraclePolicy(judgments), model, judgments)
            np.testing.assert_allclose(
                target_exposure(model, judgments).values, exact.values, rtol=0, atol=1e-12
            )


# -------------------------------------------------------------------------------------------------
# Expected exposure of policies
# -------------------------------------------------------------------------------------------------

class TestExpectedExposure:

    def test_deterministic_policy_matches_its_ranking(self, rbp, graded_judgments):
        policy = DeterministicPolicy(("b", "a", "d", "c"))
        expected = ranking_exposure(rbp, Ranking(("b", "a", "d", "c")), graded_judgments)
        for n in (1, 7):
            estimate = expected_exposure_mc(policy, rbp, graded_judgments, n, seed=3)
            np.testing.assert_allclose(estimate.values, expected.values, rtol=0, atol=1e-12)

    def test_single_sample_is_the_sampled_ranking(self, rbp, graded_judgments):
        policy = PlackettLucePolicy(graded_judgments.pool, np.array([0.3, 0.1, 0.0, -0.4]))
        ranking = policy.sample(np.random.default_rng(11))
        estimate = expected_exposure_mc(policy, rbp, graded_judgments, 1, seed=11)
        np.testing.assert_array_equal(
            estimate.values, ranking_exposure(rbp, ranking, graded_judgments).values
        )

    def test_uniform_policy_exact(self, rbp):
        judgments = _binary(1, 3)
        policy = PlackettLucePolicy(judgments.pool, np.zeros(4))
        exact = exact_expected_exposure(policy, rbp, judgments)
        np.testing.assert_allclose(exact.values, np.full(4, 0.46875), atol=1e-12)

    def test_uniform_policy_monte_carlo(self, rbp):
        judgments = _binary(1, 3)
        policy = PlackettLucePolicy(judgments.pool, np.zeros(4))
        estimate = expected_exposure_mc(policy, rbp, judgments, 100000, seed=0)
        np.testing.assert_allclose(estimate.values, np.full(4, 0.46875), atol=0.01)

    def test_uniform_over_three_documents(self, rbp):
        judgments = _binary(3)
        policy = PlackettLucePolicy(judgments.pool, np.zeros(3))
        exact = exact_expected_exposure(policy, rbp, judgments)
        np.testing.assert_allclose(exact.values, np.full(3, 1.75 / 3), atol=1e-12)

    def test_oracle_policy_recovers_target(self, graded_judgments):
        model = BrowsingModel.err(0.5, 20)
        policy = OraclePolicy(graded_judgments)
        target = target_exposure(model, graded_judgments)
        exact = exact_expected_exposure(policy, model, graded_judgments)
        np.testing.assert_allclose(exact.values, target.values, atol=1e-12)
        estimate = expected_exposure_mc(policy, model, graded_judgments, 20000, seed=5)
        np.testing.assert_allclose(estimate.values, target.values, atol=0.01)

    def test_same_seed_same_estimate(self, rbp, graded_judgments):
        policy = PlackettLucePolicy(graded_judgments.pool, np.array([1.0, 0.5, 0.2, 0.0]))
        first = expected_exposure_mc(policy, rbp, graded_judgments, 200, query_seed(9, "q1"))
        second = expected_exposure_mc(policy, rbp, graded_judgments, 200, query_seed(9, "q1"))
        np.testing.assert_array_equal(first.values, second.values)

    def test_query_streams_differ_by_query_and_key(self):
        draw = lambda seq: np.random.default_rng(seq).random()
        assert draw(query_seed(0, "q1")) == draw(query_seed(0, "q1"))
        assert draw(query_seed(0, "q1")) != draw(query_seed(0, "q2"))
        assert draw(query_seed(0, "q1", 0)) != draw(query_seed(0, "q1", 1))

    def test_nonpositive_sample_count_rejected(self, rbp, graded_judgments):
        with pytest.raises(ConfigurationError):
            expected_exposure_mc(OraclePolicy(graded_judgments), rbp, graded_judgments, 0, seed=0)

    def test_enumeration_cap(self, rbp):
        judgments = _binary(9)
        with pytest.raises(EnumerationCapError):
            exact_expected_exposure(OraclePolicy(judgments), rbp, judgments)

    def test_support_must_sum_to_one(self, rbp, graded_judgments):

        class Leaky(Policy):
            enumerable = True

            def sample_indices(self, rng, n_samples):
                return np.tile(np.arange(len(self.documents)), (n_samples, 1))

            def support(self):
                return np.arange(len(self.documents))[None, :], np.array([0.9])

        with pytest.raises(PolicyIntegrityError):
            exact_expected_exposure(Leaky(graded_judgments.pool), rbp, graded_judgments)

    @pytest.mark.slow
    def test_monte_carlo_converges_to_exact(self, rbp):
        judgments = RelevanceJudgments.from_grades("q", {"a": 2, "b": 1, "c": 1, "d": 0, "e": 0})
        policy = PlackettLucePolicy(judgments.pool, np.log([5.0, 4.0, 3.0, 2.0, 1.0]))
        exact = exact_expected_exposure(policy, rbp, judgments).values
        within = 0
        for seed in range(100):
            estimate = expected_exposure_mc(policy, rbp, judgments, 100000, seed)
            within += bool(np.all(np.abs(estimate.values - exact) <= 0.01))
        assert within >= 99
