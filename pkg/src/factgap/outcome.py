"""Classify (truth, extracted answer) pairs into the ternary outcome.

Codes: 2 = success (absolute % error strictly below the threshold),
1 = factual hallucination (% error at or above it), 0 = no numerical answer.
The boundary case sits in the hallucination branch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

from .errors import AnalysisError
from .extract import ExtractedAnswer
from .ingest import FactRecord

SUCCESS = 2
HALLUCINATION = 1
NO_ANSWER = 0

DEFAULT_THRESHOLD = 0.10


@dataclass(frozen=True)
class Outcome:
    """Ternary outcome for one prompt at a given error threshold."""

    prompt_id: str
    entity_id: str
    year: int
    truth: float
    answer: float | None
    pct_error: float | None
    y: int
    threshold: float
    degenerate_truth: bool = False  # truth == 0 with a nonzero answer

    def __post_init__(self):
        if (self.y == NO_ANSWER) != (self.answer is None):
            raise ValueError("y=0 iff answer absent")
        if self.y in (SUCCESS, HALLUCINATION) and self.pct_error is None:
            raise ValueError("classified answers must carry pct_error")


class ClassifyResult(NamedTuple):
    outcomes: list[Outcome]
    unresolved: list[str]  # prompt_ids with no matching fact


def classify(truth: float, answer: float | None, threshold: float = DEFAULT_THRESHOLD,
             prompt_id: str = "", entity_id: str = "", year: int = 0) -> Outcome:
    """Assign the ternary outcome for one answer.

    pct_error = 100 * |answer - truth| / |truth|. Success uses strict <,
    hallucination uses >= (threshold expressed as a fraction, e.g. 0.10).
    A zero ground truth never crashes: an exactly-zero answer is a success
    with zero error, anything else is a hallucination flagged with an
    infinite error sentinel.
    """
    if not (0.0 < threshold < 1.0):
        raise AnalysisError(f"threshold must be in (0, 1), got {threshold!r}")
    if not math.isfinite(truth):
        raise AnalysisError(f"truth must be finite, got {truth!r}")
    if answer is None:
        return Outcome(prompt_id=prompt_id, entity_id=entity_id, year=year, truth=truth,
                       answer=None, pct_error=None, y=NO_ANSWER, threshold=threshold)
    if truth == 0.0:
        if answer == 0.0:
            return Outcome(prompt_id=prompt_id, entity_id=entity_id, year=year, truth=truth,
                           answer=answer, pct_error=0.0, y=SUCCESS, threshold=threshold)
        return Outcome(prompt_id=prompt_id, entity_id=entity_id, year=year, truth=truth,
                       answer=answer, pct_error=math.inf, y=HALLUCINATION,
                       threshold=threshold, degenerate_truth=True)
    pct_error = 100.0 * abs(answer - truth) / abs(truth)
    y = SUCCESS if pct_error < threshold * 100.0 else HALLUCINATION
    return Outcome(prompt_id=prompt_id, entity_id=entity_id, year=year, truth=truth,
                   answer=answer, pct_error=pct_error, y=y, threshold=threshold)


def classify_batch(truths: Mapping[str, FactRecord], answers: Sequence[ExtractedAnswer],
                   threshold: float = DEFAULT_THRESHOLD) -> ClassifyResult:
    """Classify every answer against its fact, keyed by prompt_id.

    Unresolved prompt_ids are returned, never silently dropped.
    """
    outcomes: list[Outcome] = []
    unresolved: list[str] = []
    for ans in answers:
        fact = truths.get(ans.prompt_id)
        if fact is None:
            unresolved.append(ans.prompt_id)
            continue
        outcomes.append(classify(fact.value, ans.value, threshold,
                                 prompt_id=ans.prompt_id, entity_id=fact.entity_id,
                                 year=fact.year))
    return ClassifyResult(outcomes=outcomes, unresolved=unresolved)


OUTCOMES_HEADER = ["prompt_id", "entity_id", "year", "truth", "answer", "pct_error",
                   "y", "threshold"]


def outcome_to_row(out: Outcome) -> list:
    return [out.prompt_id, out.entity_id, out.year, out.truth, out.answer,
            out.pct_error, out.y, out.threshold]


def outcomes_from_csv(path) -> list[Outcome]:
    import csv

    def opt_float(cell: str) -> float | None:
        return None if cell == "" else float(cell)

    outcomes = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            pct = opt_float(row["pct_error"])
            outcomes.append(Outcome(
                prompt_id=row["prompt_id"], entity_id=row["entity_id"],
                year=int(row["year"]), truth=float(row["truth"]),
                answer=opt_float(row["answer"]), pct_error=pct,
                y=int(row["y"]), threshold=float(row["threshold"]),
                degenerate_truth=pct is not None and math.isinf(pct)))
    return outcomes
