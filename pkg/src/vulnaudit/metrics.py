"""Detection, localisation and cost metrics."""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Iterable, Sequence

from .core import CaseResult

CSV_COLUMNS = (
    "preset", "config_digest", "precision", "recall", "f1", "auroc", "top1", "top3", "mrr",
    "avg_tokens", "avg_time", "early_exit_rate", "verification_rate",
)


class InvalidInputError(ValueError):
    """A metric was asked for on an empty input."""


class UndefinedMetricError(ValueError):
    """The metric is undefined for this input (e.g. AUROC with one class)."""


@dataclass(frozen=True)
class PRF1:
    precision: float
    recall: float
    f1: float
    degenerate: bool = False  # precision undefined, reported as 0


def prf1(results: Sequence[tuple[float, bool]], threshold: float) -> PRF1:
    """Predict vulnerable iff score >= threshold; labels are truthy for vulnerable."""
    if not results:
        raise InvalidInputError("prf1 needs at least one result")
    tp = fp = fn = 0
    for score, label in results:
        predicted = score >= threshold
        if predicted and label:
            tp += 1
        elif predicted:
            fp += 1
        elif label:
            fn += 1
    degenerate = tp + fp == 0
    precision = 0.0 if degenerate else tp / (tp + fp)
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return PRF1(precision, recall, f1, degenerate)


def average_ranks(values: Sequence[float]) -> list[float]:
    """1-based ranks, ties sharing the mean of the ranks they span."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        mean = (i + j) / 2 + 1
        for t in range(i, j + 1):
            ranks[order[t]] = mean
        i = j + 1
    return ranks


def auroc(scores: Sequence[float], labels: Sequence[bool]) -> float:
    """Mann-Whitney U over average ranks, normalised by the pair count."""
    if len(scores) != len(labels):
        raise InvalidInputError("scores and labels differ in length")
    n_pos = sum(1 for y in labels if y)
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both classes")
    ranks = average_ranks(scores)
    rank_sum = sum(r for r, y in zip(ranks, labels) if y)
    u = rank_sum - n_pos * (n_pos + 1) / 2
    return u / (n_pos * n_neg)


def ranked_lines(case: CaseResult) -> list[tuple[str, int]]:
    """Candidate (file, line) pairs by descending finding score, ties by path then line."""
    best: dict[tuple[str, int], float] = {}
    for f in case.findings:
        score = f.score if f.score is not None else f.confidence
        for line in range(f.location.line_start, f.location.line_end + 1):
            key = (f.location.file, line)
            best[key] = max(best.get(key, 0.0), score)
    return sorted(best, key=lambda k: (-best[k], k[0], k[1]))


def localisation(case: CaseResult, truth: Iterable[tuple[str, int]]) -> tuple[int, int, float]:
    """(hit@1, hit@3, reciprocal rank of the first truth line)."""
    truth = {(str(f), int(line)) for f, line in truth}
    if not truth:
        raise InvalidInputError("localisation needs at least one truth line")
    ranked = ranked_lines(case)
    for rank, key in enumerate(ranked, start=1):
        if key in truth:
            return int(rank == 1), int(rank <= 3), 1.0 / rank
    return 0, 0, 0.0


def mean_reciprocal_rank(ranks: Sequence[int | None]) -> float:
    """MRR from 1-based ranks of the first correct answer (None when absent)."""
    if not ranks:
        raise InvalidInputError("MRR needs at least one case")
    return sum(1.0 / r for r in ranks if r) / len(ranks)


@dataclass(frozen=True)
class MetricsReport:
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    auroc: float | None = None
    top1: float | None = None
    top3: float | None = None
    mrr: float | None = None
    avg_tokens: float = 0.0
    avg_time: float = 0.0
    early_exit_rate: float = 0.0
    verification_rate: float = 0.0
    n_cases: int = 0
    n_errors: int = 0
    n_localised: int = 0
    precision_degenerate: bool = False

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _path_matches(finding_file: str, truth_file: str) -> bool:
    return finding_file == truth_file or finding_file.endswith("/" + truth_file) or truth_file.endswith("/" + finding_file)


def compute_metrics(
    results: Sequence[CaseResult],
    labels: Sequence[bool],
    truths: Sequence[Sequence[tuple[str, int]] | None] | None = None,
) -> MetricsReport:
    """Aggregate per-case results; ``truths`` enables localisation for vulnerable cases.

    Detection uses the case verdict and AUROC ranks case scores. Errored cases count
    as benign with score 0.
    """
    if not results:
        raise InvalidInputError("no results to aggregate")
    if len(results) != len(labels):
        raise InvalidInputError("results and labels differ in length")
    pairs = [(1.0 if r.verdict == "vulnerable" else 0.0, bool(y)) for r, y in zip(results, labels)]
    p = prf1(pairs, 0.5)
    try:
        auc = auroc([r.case_score for r in results], labels)
    except UndefinedMetricError:
        auc = None
    top1 = top3 = mrr = None
    n_loc = 0
    if truths is not None:
        hits1 = hits3 = rr = 0.0
        for r, y, truth in zip(results, labels, truths):
            if not y or not truth:
                continue
            n_loc += 1
            # truth paths may be repo-relative while findings carry longer paths
            ranked = ranked_lines(r)
            rank = next(
                (i for i, (f, line) in enumerate(ranked, 1) if any(_path_matches(f, tf) and line == tl for tf, tl in truth)),
                None,
            )
            if rank:
                hits1 += rank == 1
                hits3 += rank <= 3
                rr += 1.0 / rank
        if n_loc:
            top1, top3, mrr = hits1 / n_loc, hits3 / n_loc, rr / n_loc
    n = len(results)
    return MetricsReport(
        precision=p.precision,
        recall=p.recall,
        f1=p.f1,
        auroc=auc,
        top1=top1,
        top3=top3,
        mrr=mrr,
        avg_tokens=sum(r.tokens_used for r in results) / n,
        avg_time=sum(r.wall_time for r in results) / n,
        early_exit_rate=sum(1 for r in results if r.early_exit and r.error is None) / n,
        verification_rate=sum(1 for r in results if r.verified) / n,
        n_cases=n,
        n_errors=sum(1 for r in results if r.error is not None),
        n_localised=n_loc,
        precision_degenerate=p.degenerate,
    )
