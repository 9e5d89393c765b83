"""Tests for fact/covariate loading and the covariate transforms."""
import math

import pytest
from hypothesis import given, strategies as st

from factgap.errors import DataError, ZeroVarianceError
from factgap.ingest import (
    CpiSeries,
    FactRecord,
    CovariateValue,
    adjust_inflation,
    bucketize_logmcap,
    join_covariates,
    load_covariates,
    load_cpi,
    load_facts,
    load_factor_levels,
    log_transform,
    standardize,
)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


FACTS_HEADER = "entity_id,entity_name,year,value,unit\n"


class TestLoadFacts:
    def test_direct_field_mapping(self, tmp_path):
        p = write(tmp_path / "facts.csv", FACTS_HEADER + "1234,NEXTERA ENERGY,1984,1521.0,millions_usd\n")
        records = load_facts(p)
        assert records == [FactRecord("1234", "NEXTERA ENERGY", 1984, 1521.0, "millions_usd")]

    def test_empty_file(self, tmp_path):
        p = write(tmp_path / "facts.csv", FACTS_HEADER)
        assert load_facts(p) == []

    def test_duplicate_key_lists_collision(self, tmp_path):
        p = write(tmp_path / "facts.csv", FACTS_HEADER
                  + "1234,NEXTERA ENERGY,1984,1521.0,millions_usd\n"
                  + "1234,NEXTERA ENERGY,1984,1600.0,millions_usd\n")
        with pytest.raises(DataError, match=r"\('1234', 1984\)"):
            load_facts(p)

    def test_malformed_row_names_row_and_column(self, tmp_path):
        p = write(tmp_path / "facts.csv", FACTS_HEADER + "1234,ACME,not_a_year,5.0,millions_usd\n")
        with pytest.raises(DataError, match=r":2:.*year"):
            load_facts(p)

    def test_bad_value_cell(self, tmp_path):
        p = write(tmp_path / "facts.csv", FACTS_HEADER + "1234,ACME,1999,abc,millions_usd\n")
        with pytest.raises(DataError, match=r":2:.*value"):
            load_facts(p)

    def test_mixed_units_rejected(self, tmp_path):
        p = write(tmp_path / "facts.csv", FACTS_HEADER
                  + "1,A,1999,5.0,millions_usd\n2,B,1999,6.0,points\n")
        with pytest.raises(DataError, match="unit"):
            load_facts(p)

    def test_year_range_enforced(self, tmp_path):
        p = write(tmp_path / "facts.csv", FACTS_HEADER + "1,A,1979,5.0,millions_usd\n")
        with pytest.raises(DataError, match="1979"):
            load_facts(p, min_year=1980, max_year=2022)

    def test_schema_column_mapping(self, tmp_path):
        p = write(tmp_path / "facts.csv", "gvkey,conm,fyear,revt,unit\n12,ACME,2001,42.5,millions_usd\n")
        records = load_facts(p, schema={"entity_id": "gvkey", "entity_name": "conm",
                                        "year": "fyear", "value": "revt"})
        assert records[0].entity_id == "12"
        assert records[0].value == 42.5

    def test_missing_column_error(self, tmp_path):
        p = write(tmp_path / "facts.csv", "entity_id,year,value,unit\n")
        with pytest.raises(DataError, match="entity_name"):
            load_facts(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_facts(tmp_path / "nope.csv")


class TestAdjustInflation:
    def test_identity_when_same_period(self):
        cpi = CpiSeries({"1984": 103.9, "2022-12": 296.8})
        assert adjust_inflation(100.0, "1984", "1984", cpi) == 100.0

    def test_direct_arithmetic(self):
        cpi = CpiSeries({"t": 200.0, "r": 300.0})
        assert adjust_inflation(100.0, "t", "r", cpi) == pytest.approx(150.0)

    def test_zero_value(self):
        cpi = CpiSeries({"t": 200.0, "r": 300.0})
        assert adjust_inflation(0.0, "t", "r", cpi) == 0.0

    def test_missing_period_named(self):
        cpi = CpiSeries({"t": 200.0})
        with pytest.raises(DataError, match="'r'"):
            adjust_inflation(1.0, "t", "r", cpi)

    @given(v=st.floats(-1e12, 1e12), a=st.floats(-1000, 1000))
    def test_linear_in_value(self, v, a):
        cpi = CpiSeries({"t": 120.0, "r": 250.0})
        lhs = adjust_inflation(a * v, "t", "r", cpi)
        rhs = a * adjust_inflation(v, "t", "r", cpi)
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-6)


class TestLogTransform:
    def test_power_of_ten(self):
        assert log_transform(1e9) == 9.0

    def test_unity(self):
        assert log_transform(1.0) == 0.0

    def test_negative_rejected(self):
        with pytest.raises(DataError):
            log_transform(-5.0)

    def test_zero_rejected(self):
        with pytest.raises(DataError):
            log_transform(0.0)


class TestStandardize:
    def test_three_points(self):
        assert standardize([1, 2, 3]) == pytest.approx([-1.0, 0.0, 1.0])

    def test_constant_series(self):
        with pytest.raises(ZeroVarianceError):
            standardize([5, 5, 5])

    def test_two_points(self):
        assert standardize([0, 2]) == pytest.approx([-0.70710678, 0.70710678])

    def test_too_short(self):
        with pytest.raises(DataError):
            standardize([1.0])

    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=200)
           .filter(lambda xs: max(xs) == min(xs) or max(xs) - min(xs) > 1e-9))
    def test_output_moments(self, xs):
        if max(xs) == min(xs):
            with pytest.raises(ZeroVarianceError):
                standardize(xs)
            return
        out = standardize(xs)
        n = len(out)
        mean = sum(out) / n
        std = math.sqrt(sum((x - mean) ** 2 for x in out) / (n - 1))
        assert abs(mean) <= 1e-9
        assert abs(std - 1.0) <= 1e-9
        # order preserved: the transform is affine with positive slope
        for a, b, za, zb in zip(xs, xs[1:], out, out[1:]):
            if a <= b:
                assert za <= zb
            else:
                assert za >= zb


class TestBucketize:
    def test_low_bucket(self):
        assert bucketize_logmcap(7.5) == "<8.00"

    def test_nine_bucket(self):
        assert bucketize_logmcap(9.3) == "9.xx"

    def test_ten_is_top_bucket(self):
        assert bucketize_logmcap(10.0) == ">=10.00"

    def test_eight_boundary(self):
        assert bucketize_logmcap(8.0) == "8.xx"

    def test_non_finite_rejected(self):
        with pytest.raises(DataError):
            bucketize_logmcap(float("nan"))

    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_partition_totality(self, x):
        label = bucketize_logmcap(x)
        assert label in ("<8.00", "8.xx", "9.xx", ">=10.00")
        # contiguous, ordered boundaries
        expected = "<8.00" if x < 8 else "8.xx" if x < 9 else "9.xx" if x < 10 else ">=10.00"
        assert label == expected


class TestJoinCovariates:
    FACTS = [
        FactRecord("1", "A", 2000, 10.0),
        FactRecord("2", "B", 2000, 20.0),
        FactRecord("3", "C", 2000, 30.0),
    ]

    def test_inner_join_drops_and_counts(self):
        covs = [CovariateValue("1", 2000, "mcap", 8.1), CovariateValue("2", 2000, "mcap", 9.2)]
        result = join_covariates(self.FACTS, covs, "mcap")
        assert len(result.pairs) == 2
        assert result.dropped == 1
        assert all(f.entity_id == "1" or f.entity_id == "2" for f, _ in result.pairs)
        assert [v for _, v in result.pairs] == [8.1, 9.2]

    def test_empty_covariates(self):
        result = join_covariates(self.FACTS, [], "mcap")
        assert result.pairs == []
        assert result.dropped == 3

    def test_duplicate_covariate_key(self):
        covs = [CovariateValue("1", 2000, "mcap", 8.1), CovariateValue("1", 2000, "mcap", 8.2)]
        with pytest.raises(DataError, match=r"\('1', 2000\)"):
            join_covariates(self.FACTS, covs, "mcap")

    def test_join_agrees_on_key(self):
        covs = [CovariateValue("2", 2000, "mcap", 9.2), CovariateValue("9", 1990, "mcap", 1.0)]
        result = join_covariates(self.FACTS, covs, "mcap")
        assert len(result) <= min(len(self.FACTS), len(covs))
        for fact, value in result:
            assert (fact.entity_id, fact.year) == ("2", 2000)
            assert value == 9.2

    def test_other_names_ignored(self):
        covs = [CovariateValue("1", 2000, "bog", 85.0)]
        result = join_covariates(self.FACTS, covs, "mcap")
        assert result.pairs == []


class TestLoadCovariates:
    HEADER = "entity_id,year,name,value,transform_tag\n"

    def test_roundtrip(self, tmp_path):
        p = write(tmp_path / "cov.csv", self.HEADER + "1,2000,mcap_log10,8.5,log10\n")
        values = load_covariates(p)
        assert values == [CovariateValue("1", 2000, "mcap_log10", 8.5, "log10")]

    def test_duplicate_key(self, tmp_path):
        p = write(tmp_path / "cov.csv", self.HEADER
                  + "1,2000,mcap,8.5,raw\n1,2000,mcap,8.6,raw\n")
        with pytest.raises(DataError, match="duplicate"):
            load_covariates(p)

    def test_unknown_tag(self, tmp_path):
        p = write(tmp_path / "cov.csv", self.HEADER + "1,2000,mcap,8.5,zscore\n")
        with pytest.raises(DataError, match="zscore"):
            load_covariates(p)

    def test_nonfinite_value(self, tmp_path):
        p = write(tmp_path / "cov.csv", self.HEADER + "1,2000,mcap,inf,raw\n")
        with pytest.raises(DataError, match="finite"):
            load_covariates(p)

    def test_standardized_invariant_enforced(self, tmp_path):
        p = write(tmp_path / "cov.csv", self.HEADER
                  + "1,2000,retail,5.0,standardized\n2,2000,retail,7.0,standardized\n")
        with pytest.raises(DataError, match="standardized"):
            load_covariates(p)

    def test_standardized_invariant_passes(self, tmp_path):
        zs = standardize([5.0, 7.0, 11.0])
        rows = "".join(f"{i},2000,retail,{z!r},standardized\n" for i, z in enumerate(zs))
        p = write(tmp_path / "cov.csv", self.HEADER + rows)
        assert len(load_covariates(p)) == 3


class TestCpi:
    def test_load(self, tmp_path):
        p = write(tmp_path / "cpi.csv", "period,level\n1984,103.9\n2022-12,296.797\n")
        cpi = load_cpi(p)
        assert cpi.level("1984") == 103.9
        assert cpi.latest_period == "2022-12"
        assert "1984" in cpi and "1985" not in cpi

    def test_nonpositive_level(self, tmp_path):
        p = write(tmp_path / "cpi.csv", "period,level\n1984,0.0\n")
        with pytest.raises(DataError, match="positive"):
            load_cpi(p)

    def test_duplicate_period(self, tmp_path):
        p = write(tmp_path / "cpi.csv", "period,level\n1984,100\n1984,101\n")
        with pytest.raises(DataError, match="duplicate"):
            load_cpi(p)


class TestLoadFactorLevels:
    def test_load(self, tmp_path):
        p = write(tmp_path / "factors.csv",
                  "entity_id,year,name,level\nRMA,1995,league,La Liga\nELC,1995,league,Segunda\n")
        levels = load_factor_levels(p, name="league")
        assert levels == {("RMA", 1995): "La Liga", ("ELC", 1995): "Segunda"}

    def test_duplicate(self, tmp_path):
        p = write(tmp_path / "factors.csv",
                  "entity_id,year,name,level\nRMA,1995,league,La Liga\nRMA,1995,league,Segunda\n")
        with pytest.raises(DataError, match="duplicate"):
            load_factor_levels(p)
