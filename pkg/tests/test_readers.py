"""
Tests for the run, qrels, feature and group readers and writers.
"""

import numpy as np
import pytest

from src.exceptions import ConfigurationError, ExposureError, ParseError
from src.ltr import LtrDataset, LtrQuery
from src.readers import (
    ParseStats, attach_groups, discretize_pagerank, format_qrels, format_run, load_inputs,
    normalize_splits, parse_features, parse_groups, parse_qrels, parse_qrels_file, parse_run,
    parse_run_file,
)


# -------------------------------------------------------------------------------------------------
# Runs
# -------------------------------------------------------------------------------------------------

class TestParseRun:

    def test_orders_by_score_then_document_id(self):
        runs = parse_run([
            "q1 Q0 b 1 2.0 sys",
            "q1 Q0 a 2 2.0 sys",
            "# comment",
            "",
            "q1 Q0 c 3 3.5 sys",
            "q2 Q0 x 1 1 sys",
        ])
        assert list(runs) == ["q1", "q2"]
        assert runs["q1"].documents == ("c", "a", "b")
        assert runs["q1"].tag == "sys"

    def test_counts_skipped_lines(self):
        stats = ParseStats()
        parse_run(["q1 Q0 a 1 1.0 s", "", "# note"], stats)
        assert (stats.lines, stats.skipped) == (3, 2)

    @pytest.mark.parametrize("line, fragment", [
        ("q1 Q0 a 1 1.0", "expected 6 columns"),
        ("q1 Q0 a 1 high s", "invalid score"),
        ("q1 Q0 a 1 nan s", "non-finite score"),
        ("q1 Q0 a 1 1e400 s", "non-finite score"),
    ])
    def test_errors_carry_the_line_number(self, line, fragment):
        with pytest.raises(ParseError) as info:
            parse_run(["q1 Q0 z 1 1.0 s", line])
        assert info.value.line_number == 2
        assert str(info.value).startswith("line 2:")
        assert fragment in str(info.value)

    def test_duplicate_document(self):
        with pytest.raises(ParseError, match="duplicate document"):
            parse_run(["q1 Q0 a 1 1.0 s", "q1 Q0 a 2 0.5 s"])


# -------------------------------------------------------------------------------------------------
# Qrels
# -------------------------------------------------------------------------------------------------

class TestParseQrels:

    def test_pool_in_file_order(self):
        qrels = parse_qrels(["q1 0 b 1", "q1 0 a 2", "q2 0 c 0"])
        assert qrels["q1"].pool == ("b", "a")
        assert qrels["q1"].grade("a") == 2
        assert qrels["q2"].grade_counts == {0: 1}

    def test_negative_grades_are_clamped(self):
        stats = ParseStats()
        qrels = parse_qrels(["q1 0 a -1", "q1 0 b 1"], stats)
        assert qrels["q1"].grade("a") == 0
        assert stats.warnings["clamped_grade"] == 1

    @pytest.mark.parametrize("line", ["q1 0 a", "q1 0 a 1.5", "q1 0 a x", "q1 0 a 1 extra"])
    def test_malformed_lines(self, line):
        with pytest.raises(ParseError) as info:
            parse_qrels([line])
        assert info.value.line_number == 1

    def test_duplicate_judgment(self):
        with pytest.raises(ParseError, match="line 2"):
            parse_qrels(["q1 0 a 1", "q1 0 a 0"])


# -------------------------------------------------------------------------------------------------
# Features and groups
# -------------------------------------------------------------------------------------------------

class TestParseFeatures:

    lines = [
        "2 qid:1 1:0.5 3:1.0 # docid = D1",
        "0 qid:1 2:0.25 # docid = D2",
        "1 qid:2 1:1",
    ]

    def test_sparse_rows(self):
        dataset = parse_features(self.lines)
        assert dataset.n_features == 3
        first = dataset.queries[0]
        assert first.doc_ids == ("D1", "D2")
        np.testing.assert_array_equal(first.features, [[0.5, 0.0, 1.0], [0.0, 0.25, 0.0]])
        assert first.grades.tolist() == [2, 0]
        assert dataset.queries[1].doc_ids == ("2-0",)

    def test_small_queries_are_dropped(self):
        stats = ParseStats()
        dataset = parse_features(self.lines, stats, min_docs=2)
        assert [q.query_id for q in dataset.queries] == ["1"]
        assert stats.warnings["dropped_query"] == 1

    def test_queries_without_relevant_documents_can_be_dropped(self):
        dataset = parse_features(["0 qid:a 1:1", "0 qid:a 1:2", "1 qid:b 1:1"], require_relevant=True)
        assert [q.query_id for q in dataset.queries] == ["b"]

    @pytest.mark.parametrize("line, fragment", [
        ("1 qid:1 2:1 1:1", "ascending"),
        ("1 qid:1 0:1", "ascending"),
        ("1 1:0.5", "qid"),
        ("1 qid: 1:0.5", "qid"),
        ("-1 qid:1 1:0.5", "negative grade"),
        ("1 qid:1 abc", "index:value"),
        ("1 qid:1 1:inf", "non-finite"),
        ("1 qid:1 200000:1", "exceeds"),
        ("1", "grade and a qid"),
    ])
    def test_malformed_lines(self, line, fragment):
        with pytest.raises(ParseError) as info:
            parse_features(["0 qid:1 1:1", line])
        assert info.value.line_number == 2
        assert fragment in str(info.value)

    def test_duplicate_docid(self):
        with pytest.raises(ParseError, match="duplicate document"):
            parse_features(["0 qid:1 1:1 # docid = A", "1 qid:1 1:2 # docid = A"])


class TestGroups:

    def test_documents_may_have_several_groups(self):
        groups = parse_groups(["q1 a g1", "q1 a g2", "q1 b g1"])
        assert groups == {"q1": {"a": {"g1", "g2"}, "b": {"g1"}}}

    def test_malformed_line(self):
        with pytest.raises(ParseError, match="line 1"):
            parse_groups(["q1 a"])

    def test_attach_groups(self):
        dataset = parse_features(["1 qid:q1 1:1 # docid = a", "0 qid:q1 1:0 # docid = b"])
        labeled = attach_groups(dataset, parse_groups(["q1 a g1", "q1 b g2"]))
        assert labeled.queries[0].groups == ("g1", "g2")
        assert labeled.group_labels == ("g1", "g2")

    def test_attach_groups_needs_one_group_per_document(self):
        dataset = parse_features(["1 qid:q1 1:1 # docid = a", "0 qid:q1 1:0 # docid = b"])
        with pytest.raises(ConfigurationError, match="No group"):
            attach_groups(dataset, parse_groups(["q1 a g1"]))
        with pytest.raises(ConfigurationError, match="one group per document"):
            attach_groups(dataset, parse_groups(["q1 a g1", "q1 a g2", "q1 b g1"]))


# -------------------------------------------------------------------------------------------------
# Normalization and discretization
# -------------------------------------------------------------------------------------------------

class TestNormalization:

    def test_min_max_fit_on_training_split(self):
        train = LtrDataset([LtrQuery("t", np.array([[0.0, 5.0], [10.0, 5.0]]), np.array([1, 0]))], 2)
        test = LtrDataset([LtrQuery("s", np.array([[20.0, 5.0]]), np.array([0]))], 2)
        train_norm, test_norm = normalize_splits(train, test)
        np.testing.assert_allclose(train_norm.queries[0].features, [[0.0, 0.0], [1.0, 0.0]])
        np.testing.assert_allclose(test_norm.queries[0].features, [[2.0, 0.0]])

    def test_empty_training_split(self):
        with pytest.raises(ConfigurationError):
            normalize_splits(LtrDataset([], 2))

    def test_discretize_pagerank(self):
        assert discretize_pagerank([999, 1000, 9999, 20000]) == ["low", "mid", "mid", "high"]

    def test_discretize_needs_matching_labels(self):
        with pytest.raises(ConfigurationError):
            discretize_pagerank([1.0], thresholds=(1.0,), labels=("a",))


# -------------------------------------------------------------------------------------------------
# Files and writers
# -------------------------------------------------------------------------------------------------

class TestFiles:

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="not found"):
            parse_run_file(str(tmp_path / "absent.txt"))

    def test_invalid_utf8(self, tmp_path):
        path = tmp_path / "run.txt"
        path.write_bytes(b"q1 Q0 \xff 1 1.0 s\n")
        with pytest.raises(ParseError, match="UTF-8"):
            parse_run_file(str(path))

    def test_file_errors_name_the_file_and_line(self, write_text):
        path = write_text("qrels.txt", ["q1 0 a 1", "q1 0 b"])
        with pytest.raises(ParseError) as info:
            parse_qrels_file(path)
        assert path in str(info.value)
        assert info.value.line_number == 2

    def test_load_inputs(self, write_text):
        runs, qrels, stats = load_inputs(
            write_text("run.txt", ["q1 Q0 a 1 2 s", "q1 Q0 b 2 1 s"]),
            write_text("qrels.txt", ["q1 0 a 1", "q1 0 b -1"]),
        )
        assert runs["q1"].documents == ("a", "b")
        assert qrels["q1"].grade("b") == 0
        assert stats.warnings["clamped_grade"] == 1

    def test_writers_produce_parseable_lines(self):
        runs = parse_run(["q1 Q0 a 1 2.5 s", "q1 Q0 b 2 1 s"])
        lines = format_run(runs.values())
        assert lines == ["q1 Q0 a 0 2.5 s", "q1 Q0 b 1 1 s"]
        assert parse_run(lines)["q1"].documents == ("a", "b")

        qrels = parse_qrels(["q1 0 a 2", "q1 0 b 0"])
        assert format_qrels(qrels.values()) == ["q1 0 a 2", "q1 0 b 0"]


class TestFuzz:

    TOKENS = ["q1", "q2", "Q0", "0", "1", "-1", "2.5", "nan", "a", "b", "qid:1", "qid:", "1:0.5",
              "2:1", "3:x", "#", "docid", "=", "d", "1e9", ":", "abc"]

    @pytest.mark.parametrize("parser", [parse_run, parse_qrels, parse_features, parse_groups])
    def test_random_lines_parse_or_raise_toolkit_errors(self, parser):
        rng = np.random.default_rng(17)
        for _ in range(300):
            lines = [
                " ".join(rng.choice(self.TOKENS, size=rng.integers(0, 8)))
                for _ in range(rng.integers(1, 6))
            ]
            try:
                parser(lines)
            except ExposureError:
                pass
