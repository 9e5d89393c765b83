"""Temporal rate curves, per-entity tallies, threshold sweeps, and reports.

Definitions: per year, success_rate = #(y=2) / n, while hallucination_rate
divides by the failures only, #(y=1) / #(y in {0,1}); a year with no failures
reports rate 0 with a flag. The emitted standard error is the binomial
sqrt(r(1-r)/n) for the success rate, which is what the shaded uncertainty
band in the report figures shows. All aggregation is permutation-invariant
and outputs are emitted in sorted order so reruns are byte-identical.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .extract import ExtractedAnswer
from .glmfit import FitResult, fit_to_dict, format_fit_table
from .ingest import FactRecord
from .outcome import HALLUCINATION, NO_ANSWER, SUCCESS, Outcome, classify_batch
from .storage import write_csv, write_text

RATES_HEADER = ["year", "n", "success_rate", "hallucination_rate", "stderr_success", "threshold"]
TALLIES_HEADER = ["entity_id", "years_correct", "years_hallucinated", "mean_covariate"]


@dataclass(frozen=True)
class YearlyRates:
    year: int
    n: int
    success_rate: float
    hallucination_rate: float
    stderr_success: float
    threshold: float
    no_failures: bool = False  # hallucination denominator was empty


@dataclass(frozen=True)
class EntityTally:
    entity_id: str
    years_correct: int
    years_hallucinated: int
    mean_covariate: float  # NaN when the entity has no covariate values


@dataclass(frozen=True)
class YearErrorSummary:
    year: int
    n: int
    answer_rate: float
    q1: float
    median: float
    q3: float
    whisker_low: float
    whisker_high: float
    outlier_count: int
    empty: bool = False  # no answered records this year


def rates_by_year(outcomes: Sequence[Outcome]) -> list[YearlyRates]:
    """Success and hallucination rates per year, sorted by year."""
    if not outcomes:
        raise ValueError("rates_by_year requires at least one outcome")
    threshold = outcomes[0].threshold
    by_year: dict[int, list[int]] = {}
    for out in outcomes:
        by_year.setdefault(out.year, []).append(out.y)
    rates = []
    for year in sorted(by_year):
        ys = by_year[year]
        n = len(ys)
        successes = sum(1 for y in ys if y == SUCCESS)
        hallucinations = sum(1 for y in ys if y == HALLUCINATION)
        failures = n - successes
        rate = successes / n
        if failures > 0:
            hal_rate, no_failures = hallucinations / failures, False
        else:
            hal_rate, no_failures = 0.0, True
        rates.append(YearlyRates(year=year, n=n, success_rate=rate,
                                 hallucination_rate=hal_rate,
                                 stderr_success=math.sqrt(rate * (1.0 - rate) / n),
                                 threshold=threshold, no_failures=no_failures))
    return rates


def hallucination_rate_of_all(outcomes: Sequence[Outcome], year: int) -> float:
    """Alternative denominator: hallucinations over all records of the year."""
    ys = [o.y for o in outcomes if o.year == year]
    if not ys:
        return 0.0
    return sum(1 for y in ys if y == HALLUCINATION) / len(ys)


def tally_entities(outcomes: Sequence[Outcome],
                   covariate: Mapping[tuple[str, int], float] | None = None) -> list[EntityTally]:
    """Per entity: counts of correct and hallucinated years, mean covariate."""
    covariate = covariate or {}
    grouped: dict[str, list[Outcome]] = {}
    for out in outcomes:
        grouped.setdefault(out.entity_id, []).append(out)
    tallies = []
    for entity_id in sorted(grouped):
        outs = grouped[entity_id]
        values = [covariate[(entity_id, o.year)] for o in outs
                  if (entity_id, o.year) in covariate]
        mean_cov = sum(values) / len(values) if values else math.nan
        tallies.append(EntityTally(
            entity_id=entity_id,
            years_correct=sum(1 for o in outs if o.y == SUCCESS),
            years_hallucinated=sum(1 for o in outs if o.y == HALLUCINATION),
            mean_covariate=mean_cov))
    return tallies


def threshold_sweep(truths: Mapping[str, FactRecord], answers: Sequence[ExtractedAnswer],
                    thresholds: Sequence[float]) -> dict[float, list[YearlyRates]]:
    """Re-classify and re-aggregate at each threshold, without re-querying."""
    if list(thresholds) != sorted(set(thresholds)):
        raise ValueError(f"thresholds must be strictly increasing, got {thresholds!r}")
    curves = {}
    for threshold in thresholds:
        result = classify_batch(truths, answers, threshold)
        curves[threshold] = rates_by_year(result.outcomes)
    return curves


def _quartiles(values: Sequence[float]) -> tuple[float, float, float]:
    """Linear-interpolation quartiles (the box-plot convention)."""
    xs = sorted(values)
    n = len(xs)

    def at(q: float) -> float:
        pos = q * (n - 1)
        lo = math.floor(pos)
        hi = math.ceil(pos)
        if lo == hi:
            return xs[lo]
        return xs[lo] + (pos - lo) * (xs[hi] - xs[lo])

    return at(0.25), at(0.5), at(0.75)


def error_distribution(outcomes: Sequence[Outcome]) -> list[YearErrorSummary]:
    """Per-year box-plot summary of percent errors over answered records."""
    by_year: dict[int, list[Outcome]] = {}
    for out in outcomes:
        by_year.setdefault(out.year, []).append(out)
    summaries = []
    for year in sorted(by_year):
        outs = by_year[year]
        n = len(outs)
        answered = [o.pct_error for o in outs
                    if o.y != NO_ANSWER and o.pct_error is not None and math.isfinite(o.pct_error)]
        answer_rate = sum(1 for o in outs if o.y != NO_ANSWER) / n
        if not answered:
            summaries.append(YearErrorSummary(year=year, n=n, answer_rate=answer_rate,
                                              q1=math.nan, median=math.nan, q3=math.nan,
                                              whisker_low=math.nan, whisker_high=math.nan,
                                              outlier_count=0, empty=True))
            continue
        q1, median, q3 = _quartiles(answered)
        iqr = q3 - q1
        low_fence, high_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
        inside = [e for e in answered if low_fence <= e <= high_fence]
        summaries.append(YearErrorSummary(
            year=year, n=n, answer_rate=answer_rate, q1=q1, median=median, q3=q3,
            whisker_low=min(inside), whisker_high=max(inside),
            outlier_count=sum(1 for e in answered if e < low_fence or e > high_fence)))
    return summaries


def spearman_rank_correlation(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Spearman rho with average ranks for ties."""
    if len(xs) != len(ys) or len(xs) < 2:
        raise ValueError("need two sequences of equal length >= 2")

    def ranks(values: Sequence[float]) -> list[float]:
        order = sorted(range(len(values)), key=lambda i: values[i])
        out = [0.0] * len(values)
        i = 0
        while i < len(order):
            j = i
            while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
                j += 1
            avg = (i + j) / 2.0 + 1.0
            for k in range(i, j + 1):
                out[order[k]] = avg
            i = j + 1
        return out

    rx, ry = ranks(xs), ranks(ys)
    mx = sum(rx) / len(rx)
    my = sum(ry) / len(ry)
    cov = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    vx = sum((a - mx) ** 2 for a in rx)
    vy = sum((b - my) ** 2 for b in ry)
    if vx == 0 or vy == 0:
        return 0.0
    return cov / math.sqrt(vx * vy)


def emit_report(rates: Sequence[YearlyRates], tallies: Sequence[EntityTally],
                fits: Mapping[str, FitResult], out_dir: str | Path) -> list[Path]:
    """Write rates.csv, tallies.csv, fits.json and summary.txt.

    Rows are ordered year-ascending / entity-lexicographic and floats use
    repr, so identical inputs yield byte-identical files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    rates_path = out_dir / "rates.csv"
    ordered = sorted(rates, key=lambda r: (r.threshold, r.year))
    write_csv(rates_path, RATES_HEADER,
              ([r.year, r.n, r.success_rate, r.hallucination_rate, r.stderr_success,
                r.threshold] for r in ordered))
    written.append(rates_path)

    tallies_path = out_dir / "tallies.csv"
    write_csv(tallies_path, TALLIES_HEADER,
              ([t.entity_id, t.years_correct, t.years_hallucinated, t.mean_covariate]
               for t in sorted(tallies, key=lambda t: t.entity_id)))
    written.append(tallies_path)

    fits_path = out_dir / "fits.json"
    fits_payload = {name: fit_to_dict(fit) for name, fit in sorted(fits.items())}
    fits_path.write_text(json.dumps(fits_payload, indent=2, ensure_ascii=False) + "\n",
                         encoding="utf-8")
    written.append(fits_path)

    summary_path = out_dir / "summary.txt"
    lines = [
        "hallucination_rate denominator: failed outcomes (y in {0, 1}); "
        "years with no failures are reported as 0.",
        "stderr_success is the binomial standard error sqrt(r(1-r)/n), "
        "emitted for the uncertainty band around the success-rate curve.",
        "",
    ]
    for threshold in sorted({r.threshold for r in rates}):
        subset = [r for r in ordered if r.threshold == threshold]
        total = sum(r.n for r in subset)
        lines.append(f"threshold {threshold:g}: {len(subset)} years, {total} outcomes")
    lines.append("")
    for name, fit in sorted(fits.items()):
        lines.append(format_fit_table(fit, title=f"[{name}]"))
    write_text(summary_path, "\n".join(lines))
    written.append(summary_path)
    return written
