"""
Readers and writers for TREC runs, TREC qrels, SVMlight features and group
files.

Parsers take an iterable of lines and raise ParseError carrying the line
number on malformed input. Each has a *_file variant reading UTF-8 from disk.
"""

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
from sklearn.preprocessing import MinMaxScaler

from config.grade_tables import PAGERANK_GROUPS, PAGERANK_THRESHOLDS
from src.exceptions import ConfigurationError, ParseError
from src.exposure import RelevanceJudgments
from src.ltr.trainer import LtrDataset, LtrQuery
from src.policies import ScoredRun
from src.utils.logger import get_io_logger
from src.utils.storage import read_lines

logger = get_io_logger()

DOCID_PATTERN = re.compile(r"docid\s*[=:]?\s*(\S+)")
MAX_FEATURE_INDEX = 100000


@dataclass
class ParseStats:
    """Line counts and warning counters collected while parsing."""

    lines: int = 0
    skipped: int = 0
    warnings: Counter = field(default_factory=Counter)

    def warn(self, kind: str) -> None:
        self.warnings[kind] += 1


def _content_lines(lines: Iterable[str], stats: ParseStats):
    """Yield (line number, stripped text), skipping blanks and # comments."""
    for number, line in enumerate(lines, 1):
        stats.lines += 1
        text = line.strip()
        if not text or text.startswith("#"):
            stats.skipped += 1
            continue
        yield number, text


def _parse_float(token: str, what: str, number: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"invalid {what} '{token}'", number) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite {what} '{token}'", number)
    return value


def _parse_int(token: str, what: str, number: int) -> int:
    try:
        return int(token)
    except ValueError:
        raise ParseError(f"invalid {what} '{token}'", number) from None


def parse_run(lines: Iterable[str], stats: Optional[ParseStats] = None) -> Dict[str, ScoredRun]:
    """
    Parse a TREC run: query Q0 doc rank score tag.

    Documents are ordered by descending score with ties broken by ascending
    document id; the rank column is ignored.

    Args:
        lines: Text lines
        stats: Optional counters to fill

    Returns:
        query id -> ScoredRun, in order of first appearance
    """
    stats = stats if stats is not None else ParseStats()
    entries: Dict[str, Dict[str, float]] = {}
    tags: Dict[str, str] = {}

    for number, text in _content_lines(lines, stats):
        columns = text.split()
        if len(columns) != 6:
            raise ParseError(f"expected 6 columns, got {len(columns)}", number)
        query_id, _, doc_id, _, score, tag = columns
        value = _parse_float(score, "score", number)
        scores = entries.setdefault(query_id, {})
        if doc_id in scores:
            raise ParseError(f"duplicate document {doc_id} for query {query_id}", number)
        scores[doc_id] = value
        tags.setdefault(query_id, tag)

    return {
        query_id: ScoredRun.from_scores(query_id, sorted(scores.items()), tags[query_id])
        for query_id, scores in entries.items()
    }


def parse_qrels(
    lines: Iterable[str],
    stats: Optional[ParseStats] = None
) -> Dict[str, RelevanceJudgments]:
    """
    Parse TREC qrels: query iteration doc grade.

    Negative grades (the -1 "unjudged" convention) are clamped to 0 and
    counted under the 'clamped_grade' warning.

    Returns:
        query id -> RelevanceJudgments, pool in file order
    """
    stats = stats if stats is not None else ParseStats()
    grades: Dict[str, Dict[str, int]] = {}

    for number, text in _content_lines(lines, stats):
        columns = text.split()
        if len(columns) != 4:
            raise ParseError(f"expected 4 columns, got {len(columns)}", number)
        query_id, _, doc_id, token = columns
        grade = _parse_int(token, "grade", number)
        if grade < 0:
            logger.debug(f"line {number}: clamping grade {grade} of {query_id}/{doc_id} to 0")
            stats.warn("clamped_grade")
            grade = 0
        judged = grades.setdefault(query_id, {})
        if doc_id in judged:
            raise ParseError(f"duplicate judgment for query {query_id}, document {doc_id}", number)
        judged[doc_id] = grade

    if stats.warnings["clamped_grade"]:
        logger.warning(f"Clamped {stats.warnings['clamped_grade']} negative grades to 0")
    return {q: RelevanceJudgments.from_grades(q, g) for q, g in grades.items()}


def parse_features(
    lines: Iterable[str],
    stats: Optional[ParseStats] = None,
    min_docs: int = 1,
    require_relevant: bool = False
) -> LtrDataset:
    """
    Parse SVMlight ranking data: grade qid:Q idx:value ... [# docid = D].

    Feature indices start at 1 and must be strictly ascending within a line;
    absent features are 0. The dimensionality is the largest index seen.
    Queries with fewer than min_docs documents (or without a relevant
    document when require_relevant is set) are dropped with a warning.

    Returns:
        LtrDataset with raw (unnormalized) features
    """
    stats = stats if stats is not None else ParseStats()
    rows: Dict[str, List[Tuple[int, Dict[int, float], str]]] = {}
    n_features = 0

    for number, text in _content_lines(lines, stats):
        body, _, comment = text.partition("#")
        columns = body.split()
        if len(columns) < 2:
            raise ParseError("expected a grade and a qid", number)

        grade = _parse_int(columns[0], "grade", number)
        if grade < 0:
            raise ParseError(f"negative grade {grade}", number)
        if not columns[1].startswith("qid:") or len(columns[1]) == 4:
            raise ParseError(f"expected qid:<id>, got '{columns[1]}'", number)
        query_id = columns[1][4:]

        values: Dict[int, float] = {}
        previous = 0
        for pair in columns[2:]:
            index_token, sep, value_token = pair.partition(":")
            if not sep:
                raise ParseError(f"expected index:value, got '{pair}'", number)
            index = _parse_int(index_token, "feature index", number)
            if index <= previous:
                raise ParseError(f"feature indices must be ascending and positive at '{pair}'", number)
            if index > MAX_FEATURE_INDEX:
                raise ParseError(f"feature index {index} exceeds {MAX_FEATURE_INDEX}", number)
            values[index] = _parse_float(value_token, "feature value", number)
            previous = index
        n_features = max(n_features, previous)

        docs = rows.setdefault(query_id, [])
        match = DOCID_PATTERN.search(comment)
        doc_id = match.group(1) if match else f"{query_id}-{len(docs)}"
        if any(doc_id == d for _, _, d in docs):
            raise ParseError(f"duplicate document {doc_id} for query {query_id}", number)
        docs.append((grade, values, doc_id))

    queries = []
    for query_id, docs in rows.items():
        if len(docs) < min_docs or (require_relevant and not any(g > 0 for g, _, _ in docs)):
            logger.warning(f"Dropping query {query_id} with {len(docs)} usable documents")
            stats.warn("dropped_query")
            continue
        features = np.zeros((len(docs), n_features))
        for row, (_, values, _) in enumerate(docs):
            for index, value in values.items():
                features[row, index - 1] = value
        queries.append(LtrQuery(
            query_id,
            features,
            np.array([g for g, _, _ in docs], dtype=np.int64),
            tuple(d for _, _, d in docs),
        ))
    return LtrDataset(queries, n_features)


def parse_groups(
    lines: Iterable[str],
    stats: Optional[ParseStats] = None
) -> Dict[str, Dict[str, Set[str]]]:
    """
    Parse group attributes: query doc group.

    A document may appear on several lines with different groups.

    Returns:
        query id -> document id -> groups
    """
    stats = stats if stats is not None else ParseStats()
    groups: Dict[str, Dict[str, Set[str]]] = {}
    for number, text in _content_lines(lines, stats):
        columns = text.split()
        if len(columns) != 3:
            raise ParseError(f"expected 3 columns, got {len(columns)}", number)
        query_id, doc_id, group = columns
        groups.setdefault(query_id, {}).setdefault(doc_id, set()).add(group)
    return groups


def _parse_file(parser, path: str, **kwargs):
    try:
        return parser(read_lines(path), **kwargs)
    except ParseError as e:
        error = ParseError(f"{path}: {e}")
        error.line_number = e.line_number
        raise error from None


def parse_run_file(path: str, stats: Optional[ParseStats] = None) -> Dict[str, ScoredRun]:
    return _parse_file(parse_run, path, stats=stats)


def parse_qrels_file(path: str, stats: Optional[ParseStats] = None) -> Dict[str, RelevanceJudgments]:
    return _parse_file(parse_qrels, path, stats=stats)


def parse_features_file(path: str, stats: Optional[ParseStats] = None, **kwargs) -> LtrDataset:
    return _parse_file(parse_features, path, stats=stats, **kwargs)


def parse_groups_file(path: str, stats: Optional[ParseStats] = None) -> Dict[str, Dict[str, Set[str]]]:
    return _parse_file(parse_groups, path, stats=stats)


def attach_groups(dataset: LtrDataset, groups: Dict[str, Dict[str, Set[str]]]) -> LtrDataset:
    """
    Label every document of a dataset with its group.

    Raises:
        ConfigurationError: a document has no group, or more than one
    """
    queries = []
    for query in dataset.queries:
        assigned = groups.get(query.query_id, {})
        labels = []
        for doc_id in query.doc_ids:
            labels_of_doc = assigned.get(doc_id)
            if not labels_of_doc:
                raise ConfigurationError(f"No group for query {query.query_id}, document {doc_id}")
            if len(labels_of_doc) > 1:
                raise ConfigurationError(
                    f"Training needs one group per document; {doc_id} has {sorted(labels_of_doc)}"
                )
            labels.append(next(iter(labels_of_doc)))
        queries.append(query.with_groups(labels))
    return LtrDataset(queries, dataset.n_features)


def normalize_splits(train: LtrDataset, *others: LtrDataset) -> Tuple[LtrDataset, ...]:
    """
    Min-max normalize every feature with bounds fit on the training split.

    Constant features map to 0.

    Returns:
        The normalized training split followed by the other splits
    """
    if not train.queries:
        raise ConfigurationError("Cannot fit feature normalization on an empty training split")
    scaler = MinMaxScaler()
    scaler.fit(np.vstack([q.features for q in train.queries]))

    def apply(dataset: LtrDataset) -> LtrDataset:
        return LtrDataset(
            [q.with_features(scaler.transform(q.features)) for q in dataset.queries],
            dataset.n_features,
        )

    return tuple(apply(d) for d in (train, *others))


def discretize_pagerank(
    values: Sequence[float],
    thresholds: Sequence[float] = PAGERANK_THRESHOLDS,
    labels: Sequence[str] = PAGERANK_GROUPS
) -> List[str]:
    """Bucket PageRank-like values: below 1000, 1000 to 10000, at least 10000."""
    if len(labels) != len(thresholds) + 1:
        raise ConfigurationError("Need one label more than thresholds")
    buckets = np.digitize(np.asarray(values, dtype=np.float64), thresholds)
    return [labels[b] for b in buckets]


def format_run(runs: Iterable[ScoredRun], tag: str = "") -> List[str]:
    lines = []
    for run in runs:
        for rank, (doc_id, score) in enumerate(run.entries):
            lines.append(f"{run.query_id} Q0 {doc_id} {rank} {score:.6g} {tag or run.tag or 'run'}")
    return lines


def format_qrels(judgments: Iterable[RelevanceJudgments]) -> List[str]:
    return [
        f"{j.query_id} 0 {doc_id} {j.grades[doc_id]}"
        for j in judgments for doc_id in j.pool
    ]


def format_features(dataset: LtrDataset) -> List[str]:
    lines = []
    for query in dataset.queries:
        for row, doc_id in enumerate(query.doc_ids):
            pairs = " ".join(
                f"{i + 1}:{v:.6g}" for i, v in enumerate(query.features[row]) if v != 0.0
            )
            lines.append(f"{query.grades[row]} qid:{query.query_id} {pairs} # docid = {doc_id}")
    return lines


def format_groups(dataset: LtrDataset) -> List[str]:
    return [
        f"{query.query_id} {doc_id} {label}"
        for query in dataset.queries if query.groups is not None
        for doc_id, label in zip(query.doc_ids, query.groups)
    ]


def load_inputs(
    run_path: str,
    qrels_path: str
) -> Tuple[Dict[str, ScoredRun], Dict[str, RelevanceJudgments], ParseStats]:
    """Parse a run and its qrels, logging what was read."""
    stats = ParseStats()
    runs = parse_run_file(run_path, stats)
    qrels = parse_qrels_file(qrels_path, stats)
    logger.info(f"Read {len(runs)} run queries and {len(qrels)} judged queries")
    return runs, qrels, stats
