"""Evaluation metrics: micro P/R/F1 for extraction tasks, accuracy and
macro-F1 for aspect sentiment classification, and multi-run aggregation.

Extraction scores pool true/false positives and negatives at corpus level
(micro-averaging) over exact string matches of canonicalized terms or
(term, polarity) pairs. Zero denominators yield 0.0 by convention, which
keeps scores defined when predictions or gold sets are empty.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from statistics import fmean
from typing import Iterable, Optional, Sequence

from .corpus import AtscSample, ReviewSentence, SentimentPolarity
from .decoding import (
    AtePrediction,
    AtscPrediction,
    JointPrediction,
    POLARITY_WORDS,
    canonicalize_term,
)
from .prompting import SubtaskKind


class MetricsError(Exception):
    pass


class IdMismatch(MetricsError):
    """Gold and predictions do not cover the same sentence ids."""


class LengthMismatch(MetricsError):
    """Positionally aligned inputs have different lengths."""


class MixedSubtasks(MetricsError):
    """Aggregation across reports from different subtasks."""


class EmptyInput(MetricsError):
    pass


@dataclass(frozen=True)
class Support:
    tp: float
    fp: float
    fn: float
    n_samples: float


@dataclass(frozen=True)
class ScoreReport:
    """Scores for one evaluation run; accuracy is present only for ATSC."""

    subtask: SubtaskKind
    precision: float
    recall: float
    f1: float
    accuracy: Optional[float] = None
    support: Support = field(default_factory=lambda: Support(0, 0, 0, 0))


@dataclass(frozen=True)
class RunAggregate:
    per_run: tuple[ScoreReport, ...]
    mean: ScoreReport
    n_runs: int


def _prf(tp: float, fp: float, fn: float) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def _indexed(pairs: Sequence[tuple[str, object]], what: str) -> dict[str, object]:
    index: dict[str, object] = {}
    for sid, value in pairs:
        if sid in index:
            raise IdMismatch(f"duplicate {what} entry for sentence id {sid!r}")
        index[sid] = value
    return index


def _check_id_coverage(gold_ids: set[str], pred_ids: set[str]) -> None:
    if gold_ids != pred_ids:
        missing = sorted(gold_ids - pred_ids)[:5]
        extra = sorted(pred_ids - gold_ids)[:5]
        raise IdMismatch(
            f"gold and predictions cover different sentence ids "
            f"(missing from pred: {missing}, unknown to gold: {extra})"
        )


def score_ate(
    gold: Sequence[tuple[str, Iterable[str]]],
    pred: Sequence[tuple[str, AtePrediction]],
) -> ScoreReport:
    """Micro-averaged P/R/F1 over exact (sentence, term) matches."""
    gold_index = _indexed(gold, "gold")
    pred_index = _indexed(pred, "prediction")
    _check_id_coverage(set(gold_index), set(pred_index))
    tp = fp = fn = 0
    for sid, gold_terms in gold_index.items():
        gold_set = set(gold_terms)  # type: ignore[arg-type]
        pred_set = set(pred_index[sid].terms)  # type: ignore[union-attr]
        tp += len(gold_set & pred_set)
        fp += len(pred_set - gold_set)
        fn += len(gold_set - pred_set)
    precision, recall, f1 = _prf(tp, fp, fn)
    return ScoreReport(
        subtask=SubtaskKind.ATE,
        precision=precision,
        recall=recall,
        f1=f1,
        support=Support(tp, fp, fn, len(gold_index)),
    )


def score_joint(
    gold: Sequence[tuple[str, Iterable[tuple[str, str]]]],
    pred: Sequence[tuple[str, JointPrediction]],
) -> ScoreReport:
    """Micro-averaged P/R/F1 over exact (term, polarity) pair matches.

    A correct term with the wrong polarity is both a false positive and a
    false negative; malformed fragments contribute nothing.
    """
    gold_index = _indexed(gold, "gold")
    pred_index = _indexed(pred, "prediction")
    _check_id_coverage(set(gold_index), set(pred_index))
    tp = fp = fn = 0
    for sid, gold_pairs in gold_index.items():
        gold_set = {tuple(p) for p in gold_pairs}  # type: ignore[union-attr]
        pred_set = set(pred_index[sid].pairs)  # type: ignore[union-attr]
        tp += len(gold_set & pred_set)
        fp += len(pred_set - gold_set)
        fn += len(gold_set - pred_set)
    precision, recall, f1 = _prf(tp, fp, fn)
    return ScoreReport(
        subtask=SubtaskKind.JOINT,
        precision=precision,
        recall=recall,
        f1=f1,
        support=Support(tp, fp, fn, len(gold_index)),
    )


def score_atsc(
    gold: Sequence[AtscSample], pred: Sequence[AtscPrediction]
) -> ScoreReport:
    """Accuracy over positionally aligned samples, plus macro P/R/F1.

    Invalid predictions count as mismatches for accuracy and never as a
    class hit. Macro averages run over the three fixed polarity classes,
    so an absent class contributes 0 rather than being skipped.
    """
    if len(gold) != len(pred):
        raise LengthMismatch(f"{len(gold)} gold samples vs {len(pred)} predictions")
    n = len(gold)
    correct = sum(
        1 for g, p in zip(gold, pred) if p.label == g.gold_polarity.value
    )
    class_f1: list[float] = []
    class_p: list[float] = []
    class_r: list[float] = []
    for cls in POLARITY_WORDS:
        tp = sum(1 for g, p in zip(gold, pred) if g.gold_polarity.value == cls and p.label == cls)
        fp = sum(1 for g, p in zip(gold, pred) if g.gold_polarity.value != cls and p.label == cls)
        fn = sum(1 for g, p in zip(gold, pred) if g.gold_polarity.value == cls and p.label != cls)
        p_c, r_c, f1_c = _prf(tp, fp, fn)
        class_p.append(p_c)
        class_r.append(r_c)
        class_f1.append(f1_c)
    accuracy = correct / n if n else 0.0
    return ScoreReport(
        subtask=SubtaskKind.ATSC,
        precision=sum(class_p) / len(class_p),
        recall=sum(class_r) / len(class_r),
        f1=sum(class_f1) / len(class_f1),
        accuracy=accuracy,
        support=Support(correct, n - correct, n - correct, n),
    )


def aggregate_runs(reports: Sequence[ScoreReport]) -> RunAggregate:
    """Arithmetic mean of each metric across runs; per-run values retained."""
    if not reports:
        raise EmptyInput("no reports to aggregate")
    subtasks = {r.subtask for r in reports}
    if len(subtasks) != 1:
        raise MixedSubtasks(f"cannot aggregate across subtasks {sorted(s.value for s in subtasks)}")
    subtask = reports[0].subtask
    accuracies = [r.accuracy for r in reports]
    mean_accuracy = fmean(accuracies) if all(a is not None for a in accuracies) else None
    mean = ScoreReport(
        subtask=subtask,
        precision=fmean(r.precision for r in reports),
        recall=fmean(r.recall for r in reports),
        f1=fmean(r.f1 for r in reports),
        accuracy=mean_accuracy,
        support=Support(
            tp=fmean(r.support.tp for r in reports),
            fp=fmean(r.support.fp for r in reports),
            fn=fmean(r.support.fn for r in reports),
            n_samples=fmean(r.support.n_samples for r in reports),
        ),
    )
    return RunAggregate(per_run=tuple(reports), mean=mean, n_runs=len(reports))


def primary_metric(report: ScoreReport) -> float:
    """The headline number per subtask: accuracy for ATSC, F1 otherwise."""
    if report.subtask is SubtaskKind.ATSC:
        assert report.accuracy is not None
        return report.accuracy
    return report.f1


def round_half_up(value: float, digits: int = 2) -> float:
    """Round as the published tables do (0.005 -> 0.01, not banker's)."""
    quantum = Decimal(1).scaleb(-digits)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def as_percent(value: float) -> float:
    return round_half_up(100.0 * value, 2)


# --- gold-side extraction ----------------------------------------------------


def gold_term_set(sentence: ReviewSentence, *, keep_conflict: bool = False) -> set[str]:
    """Canonicalized gold term set for extraction scoring (conflict dropped)."""
    return {
        canonicalize_term(a.term)
        for a in sentence.aspects
        if keep_conflict or a.polarity is not SentimentPolarity.CONFLICT
    }


def gold_pair_set(sentence: ReviewSentence) -> set[tuple[str, str]]:
    """Canonicalized gold (term, polarity) pair set; conflict never included."""
    return {
        (canonicalize_term(a.term), a.polarity.value)
        for a in sentence.aspects
        if a.polarity is not SentimentPolarity.CONFLICT
    }


# --- serialization -----------------------------------------------------------


def report_to_dict(report: ScoreReport) -> dict:
    return {
        "subtask": report.subtask.value,
        "precision": report.precision,
        "recall": report.recall,
        "f1": report.f1,
        "accuracy": report.accuracy,
        "support": {
            "tp": report.support.tp,
            "fp": report.support.fp,
            "fn": report.support.fn,
            "n_samples": report.support.n_samples,
        },
    }


def report_from_dict(data: dict) -> ScoreReport:
    support = data.get("support", {})
    return ScoreReport(
        subtask=SubtaskKind(data["subtask"]),
        precision=data["precision"],
        recall=data["recall"],
        f1=data["f1"],
        accuracy=data.get("accuracy"),
        support=Support(
            tp=support.get("tp", 0),
            fp=support.get("fp", 0),
            fn=support.get("fn", 0),
            n_samples=support.get("n_samples", 0),
        ),
    )


def write_report_json(report: ScoreReport, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report_to_dict(report), indent=2), encoding="utf-8")


def read_report_json(path: str | Path) -> ScoreReport:
    return report_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def format_report(report: ScoreReport) -> str:
    parts = [
        f"precision={round_half_up(report.precision):.2f}",
        f"recall={round_half_up(report.recall):.2f}",
        f"f1={round_half_up(report.f1):.2f}",
    ]
    if report.accuracy is not None:
        parts.append(f"accuracy={round_half_up(report.accuracy):.2f}")
    return f"{report.subtask.value}: " + " ".join(parts)
