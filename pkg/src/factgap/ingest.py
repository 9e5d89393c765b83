"""Load, join, and transform fact and covariate tables.

The canonical data model is the entity-year panel: a fact table holds one
ground-truth value per (entity_id, year), and covariate tables hold named,
transformed characteristics on the same key. All loaders read UTF-8 CSV with
RFC-4180 quoting.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

from .errors import DataError, ZeroVarianceError

UNITS = ("millions_usd", "points", "raw")
TRANSFORM_TAGS = ("raw", "log10", "standardized", "inflation_adjusted_log10")

# Bucket labels for log10 market cap, ordered low to high.
LOGMCAP_BUCKETS = ("<8.00", "8.xx", "9.xx", ">=10.00")

FACTS_COLUMNS = ("entity_id", "entity_name", "year", "value", "unit")
COVARIATES_COLUMNS = ("entity_id", "year", "name", "value", "transform_tag")


@dataclass(frozen=True)
class FactRecord:
    """Ground-truth entity-year value; the answer key for one prompt."""

    entity_id: str
    entity_name: str
    year: int
    value: float
    unit: str = "millions_usd"


@dataclass(frozen=True)
class CovariateValue:
    """A named, transformed entity-year characteristic."""

    entity_id: str
    year: int
    name: str
    value: float
    transform_tag: str = "raw"


class CpiSeries:
    """Ordered map from period key (year or year-month string) to CPI level.

    Period keys are opaque strings; annual ("1984") and monthly ("2022-12")
    keys can coexist as long as lookups use the keys that were loaded.
    """

    def __init__(self, levels: Mapping[str, float]):
        if not levels:
            raise DataError("CPI series is empty")
        for period, level in levels.items():
            if not (isinstance(level, (int, float)) and math.isfinite(level) and level > 0):
                raise DataError(f"CPI level for period {period!r} must be a positive real, got {level!r}")
        self._levels = dict(levels)
        self._order = list(levels)

    def level(self, period: str) -> float:
        try:
            return self._levels[period]
        except KeyError:
            raise DataError(f"period {period!r} not present in CPI series") from None

    def __contains__(self, period: str) -> bool:
        return period in self._levels

    def __len__(self) -> int:
        return len(self._levels)

    @property
    def periods(self) -> list[str]:
        return list(self._order)

    @property
    def latest_period(self) -> str:
        """Last loaded period; the default inflation reference."""
        return self._order[-1]


class JoinResult(NamedTuple):
    """Inner-join output plus the count of facts lacking the covariate."""

    pairs: list[tuple[FactRecord, float]]
    dropped: int

    def __iter__(self):  # iterate the payload, not the tuple fields
        return iter(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)


def _resolve_columns(fieldnames: Sequence[str], required: Sequence[str],
                     schema: Mapping[str, str] | None, path: Path) -> dict[str, str]:
    """Map canonical column names to file column names via the schema."""
    schema = dict(schema or {})
    resolved = {}
    for name in required:
        column = schema.get(name, name)
        if column not in fieldnames:
            raise DataError(f"{path}: column {column!r} (for {name!r}) not found in header {list(fieldnames)}")
        resolved[name] = column
    return resolved


def load_facts(path: str | Path, schema: Mapping[str, str] | None = None,
               min_year: int = 1800, max_year: int = 2200) -> list[FactRecord]:
    """Load a facts CSV into validated FactRecords.

    `schema` maps canonical names (entity_id, entity_name, year, value, unit)
    to the file's column names; omitted entries default to the canonical name.
    Rejects duplicate (entity_id, year) keys, out-of-range years, mixed units,
    and malformed cells, naming the row number and column.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"facts file not found: {path}")
    records: list[FactRecord] = []
    seen: set[tuple[str, int]] = set()
    table_unit: str | None = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        cols = _resolve_columns(reader.fieldnames, FACTS_COLUMNS, schema, path)
        for rownum, row in enumerate(reader, start=2):
            try:
                year = int(row[cols["year"]])
            except (TypeError, ValueError):
                raise DataError(f"{path}:{rownum}: column {cols['year']!r} is not an integer year: "
                                f"{row.get(cols['year'])!r}") from None
            try:
                value = float(row[cols["value"]])
            except (TypeError, ValueError):
                raise DataError(f"{path}:{rownum}: column {cols['value']!r} is not a number: "
                                f"{row.get(cols['value'])!r}") from None
            unit = row[cols["unit"]]
            if unit not in UNITS:
                raise DataError(f"{path}:{rownum}: column {cols['unit']!r} has unknown unit {unit!r}; "
                                f"expected one of {UNITS}")
            if table_unit is None:
                table_unit = unit
            elif unit != table_unit:
                raise DataError(f"{path}:{rownum}: unit {unit!r} differs from the table's unit {table_unit!r}")
            if not (min_year <= year <= max_year):
                raise DataError(f"{path}:{rownum}: year {year} outside configured range "
                                f"[{min_year}, {max_year}]")
            entity_id = row[cols["entity_id"]]
            if not entity_id:
                raise DataError(f"{path}:{rownum}: column {cols['entity_id']!r} is empty")
            key = (entity_id, year)
            if key in seen:
                raise DataError(f"{path}:{rownum}: duplicate (entity_id, year) key {key!r}")
            seen.add(key)
            records.append(FactRecord(entity_id=entity_id, entity_name=row[cols["entity_name"]],
                                      year=year, value=value, unit=unit))
    return records


def load_covariates(path: str | Path, schema: Mapping[str, str] | None = None) -> list[CovariateValue]:
    """Load a long-form covariates CSV (entity_id, year, name, value, transform_tag).

    Enforces finite values, known transform tags, unique (entity_id, year,
    name) keys, and the standardization invariant (mean ~ 0, sample std ~ 1
    within 1e-9) over the rows tagged `standardized` for each covariate name.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"covariates file not found: {path}")
    values: list[CovariateValue] = []
    seen: set[tuple[str, int, str]] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        cols = _resolve_columns(reader.fieldnames, COVARIATES_COLUMNS, schema, path)
        for rownum, row in enumerate(reader, start=2):
            try:
                year = int(row[cols["year"]])
            except (TypeError, ValueError):
                raise DataError(f"{path}:{rownum}: column {cols['year']!r} is not an integer year: "
                                f"{row.get(cols['year'])!r}") from None
            try:
                value = float(row[cols["value"]])
            except (TypeError, ValueError):
                raise DataError(f"{path}:{rownum}: column {cols['value']!r} is not a number: "
                                f"{row.get(cols['value'])!r}") from None
            if not math.isfinite(value):
                raise DataError(f"{path}:{rownum}: covariate value must be finite, got {value!r}")
            tag = row[cols["transform_tag"]]
            if tag not in TRANSFORM_TAGS:
                raise DataError(f"{path}:{rownum}: unknown transform_tag {tag!r}; expected one of {TRANSFORM_TAGS}")
            key = (row[cols["entity_id"]], year, row[cols["name"]])
            if key in seen:
                raise DataError(f"{path}:{rownum}: duplicate (entity_id, year, name) key {key!r}")
            seen.add(key)
            values.append(CovariateValue(entity_id=row[cols["entity_id"]], year=year,
                                         name=row[cols["name"]], value=value, transform_tag=tag))
    _check_standardized(values, path)
    return values


def _check_standardized(values: Sequence[CovariateValue], path: Path) -> None:
    by_name: dict[str, list[float]] = {}
    for v in values:
        if v.transform_tag == "standardized":
            by_name.setdefault(v.name, []).append(v.value)
    for name, xs in by_name.items():
        if len(xs) < 2:
            continue
        mean = sum(xs) / len(xs)
        std = math.sqrt(sum((x - mean) ** 2 for x in xs) / (len(xs) - 1))
        if abs(mean) > 1e-9 or abs(std - 1.0) > 1e-9:
            raise DataError(f"{path}: covariate {name!r} is tagged standardized but has "
                            f"mean {mean:.3e}, sample std {std:.12f}")


def load_cpi(path: str | Path) -> CpiSeries:
    """Load a CPI CSV with header `period,level` into a CpiSeries."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"CPI file not found: {path}")
    levels: dict[str, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"period", "level"} <= set(reader.fieldnames):
            raise DataError(f"{path}: expected header period,level")
        for rownum, row in enumerate(reader, start=2):
            period = row["period"]
            if period in levels:
                raise DataError(f"{path}:{rownum}: duplicate period {period!r}")
            try:
                levels[period] = float(row["level"])
            except (TypeError, ValueError):
                raise DataError(f"{path}:{rownum}: level is not a number: {row.get('level')!r}") from None
    return CpiSeries(levels)


def load_factor_levels(path: str | Path, name: str | None = None) -> dict[tuple[str, int], str]:
    """Load categorical factor levels keyed by (entity_id, year).

    CSV header: `entity_id,year,name,level`. Used for non-year fixed effects
    such as a league indicator. When `name` is given, other names are skipped.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"factors file not found: {path}")
    out: dict[tuple[str, int], str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"entity_id", "year", "name", "level"} <= set(reader.fieldnames):
            raise DataError(f"{path}: expected header entity_id,year,name,level")
        for rownum, row in enumerate(reader, start=2):
            if name is not None and row["name"] != name:
                continue
            try:
                year = int(row["year"])
            except (TypeError, ValueError):
                raise DataError(f"{path}:{rownum}: year is not an integer: {row.get('year')!r}") from None
            key = (row["entity_id"], year)
            if key in out:
                raise DataError(f"{path}:{rownum}: duplicate factor key {key!r}")
            out[key] = row["level"]
    return out


def adjust_inflation(value: float, period_t: str, period_r: str, cpi: CpiSeries) -> float:
    """Restate `value` from period_t money into period_r money: value * CPI(r)/CPI(t).

    The ratio is formed first so the same-period case is an exact identity.
    """
    return value * (cpi.level(period_r) / cpi.level(period_t))


def log_transform(value: float) -> float:
    """Base-10 logarithm; the scaling applied to market capitalization."""
    if not (isinstance(value, (int, float)) and math.isfinite(value)) or value <= 0:
        raise DataError(f"log_transform requires a positive finite value, got {value!r}")
    return math.log10(value)


def standardize(values: Sequence[float]) -> list[float]:
    """Subtract the mean and divide by the sample (n-1) standard deviation.

    Output has sample mean 0 and sample std 1 (within 1e-9), order preserved.
    """
    n = len(values)
    if n < 2:
        raise DataError(f"standardize requires at least 2 values, got {n}")
    first = values[0]
    if all(x == first for x in values):
        raise ZeroVarianceError("cannot standardize a constant series")

    def center_scale(xs: Sequence[float]) -> list[float]:
        mean = sum(xs) / n
        var = sum((x - mean) ** 2 for x in xs) / (n - 1)
        if var <= 0.0:
            raise ZeroVarianceError("cannot standardize a numerically constant series")
        std = math.sqrt(var)
        return [(x - mean) / std for x in xs]

    # second pass removes the residual mean left by cancellation on
    # large-offset inputs, keeping the output moments within 1e-9
    return center_scale(center_scale(list(values)))


def bucketize_logmcap(log_mcap: float) -> str:
    """Assign a log10 market-cap value to one of the four size buckets.

    Boundaries are half-open: (-inf, 8.0), [8.0, 9.0), [9.0, 10.0), [10.0, inf);
    10.0 lands in the top bucket.
    """
    if not (isinstance(log_mcap, (int, float)) and math.isfinite(log_mcap)):
        raise DataError(f"bucketize_logmcap requires a finite value, got {log_mcap!r}")
    if log_mcap < 8.0:
        return LOGMCAP_BUCKETS[0]
    if log_mcap < 9.0:
        return LOGMCAP_BUCKETS[1]
    if log_mcap < 10.0:
        return LOGMCAP_BUCKETS[2]
    return LOGMCAP_BUCKETS[3]


def covariate_map(covariates: Iterable[CovariateValue], name: str) -> dict[tuple[str, int], float]:
    """Index covariate values with the given name by (entity_id, year)."""
    out: dict[tuple[str, int], float] = {}
    for cov in covariates:
        if cov.name != name:
            continue
        key = (cov.entity_id, cov.year)
        if key in out:
            raise DataError(f"duplicate covariate key {key!r} for name {name!r}")
        out[key] = cov.value
    return out


def join_covariates(facts: Sequence[FactRecord], covariates: Iterable[CovariateValue],
                    name: str) -> JoinResult:
    """Inner-join facts with the named covariate on (entity_id, year).

    Facts lacking the covariate are dropped and counted, never fatal.
    """
    values = covariate_map(covariates, name)
    pairs: list[tuple[FactRecord, float]] = []
    dropped = 0
    for fact in facts:
        key = (fact.entity_id, fact.year)
        if key in values:
            pairs.append((fact, values[key]))
        else:
            dropped += 1
    return JoinResult(pairs=pairs, dropped=dropped)
