"""Tests for rate aggregation, tallies, sweeps, and report emission."""
import hashlib
import math

import pytest

from factgap.extract import ExtractedAnswer
from factgap.glmfit import RegressionSpec, build_design, fit_logit
from factgap.ingest import FactRecord
from factgap.analytics import (
    emit_report,
    error_distribution,
    hallucination_rate_of_all,
    rates_by_year,
    spearman_rank_correlation,
    tally_entities,
    threshold_sweep,
)
from factgap.outcome import classify


def out(entity, year, code, threshold=0.10):
    answer = {2: 100.0, 1: 150.0, 0: None}[code]
    return classify(100.0, answer, threshold, prompt_id=f"{entity}-{year}",
                    entity_id=entity, year=year)


class TestRatesByYear:
    def test_mixed_year(self):
        outcomes = [out("a", 2000, 2), out("b", 2000, 1), out("c", 2000, 0)]
        [r] = rates_by_year(outcomes)
        assert r.success_rate == pytest.approx(1 / 3)
        assert r.hallucination_rate == pytest.approx(1 / 2)
        assert r.n == 3
        assert not r.no_failures

    def test_no_failures_flagged(self):
        outcomes = [out("a", 2000, 2), out("b", 2000, 2)]
        [r] = rates_by_year(outcomes)
        assert r.success_rate == 1.0
        assert r.hallucination_rate == 0.0
        assert r.no_failures

    def test_all_failures(self):
        outcomes = [out("a", 2000, 0), out("b", 2000, 0), out("c", 2000, 1)]
        [r] = rates_by_year(outcomes)
        assert r.success_rate == 0.0
        assert r.hallucination_rate == pytest.approx(1 / 3)

    def test_stderr_formula(self):
        outcomes = [out("a", 2000, 2), out("b", 2000, 1), out("c", 2000, 0), out("d", 2000, 2)]
        [r] = rates_by_year(outcomes)
        assert r.stderr_success == pytest.approx(math.sqrt(0.5 * 0.5 / 4))

    def test_year_counts_sum_to_total(self):
        outcomes = [out(f"e{i}", 2000 + (i % 5), (i % 3)) for i in range(60)]
        rates = rates_by_year(outcomes)
        assert sum(r.n for r in rates) == 60
        assert [r.year for r in rates] == sorted(r.year for r in rates)

    def test_permutation_invariant(self):
        outcomes = [out(f"e{i}", 2000 + (i % 5), (i % 3)) for i in range(60)]
        a = rates_by_year(outcomes)
        b = rates_by_year(list(reversed(outcomes)))
        assert a == b

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            rates_by_year([])

    def test_alternative_denominator(self):
        outcomes = [out("a", 2000, 2), out("b", 2000, 1), out("c", 2000, 0)]
        assert hallucination_rate_of_all(outcomes, 2000) == pytest.approx(1 / 3)


class TestTallyEntities:
    def test_counts(self):
        outcomes = [out("a", y, c) for y, c in [(2000, 2), (2001, 2), (2002, 1), (2003, 0)]]
        [tally] = tally_entities(outcomes)
        assert tally.years_correct == 2
        assert tally.years_hallucinated == 1

    def test_mean_covariate(self):
        outcomes = [out("a", 2000, 2), out("a", 2001, 1), out("a", 2002, 0)]
        cov = {("a", 2000): 8.0, ("a", 2001): 9.0, ("a", 2002): 10.0}
        [tally] = tally_entities(outcomes, cov)
        assert tally.mean_covariate == pytest.approx(9.0)

    def test_missing_covariate_years_skipped(self):
        outcomes = [out("a", 2000, 2), out("a", 2001, 1)]
        [tally] = tally_entities(outcomes, {("a", 2000): 4.0})
        assert tally.mean_covariate == pytest.approx(4.0)

    def test_no_covariate_nan(self):
        [tally] = tally_entities([out("a", 2000, 2)], {})
        assert math.isnan(tally.mean_covariate)

    def test_sum_matches_total_successes(self):
        outcomes = [out(f"e{i % 7}", 2000 + i, (i % 3)) for i in range(42)]
        tallies = tally_entities(outcomes)
        assert sum(t.years_correct for t in tallies) == sum(1 for o in outcomes if o.y == 2)
        assert sum(t.years_hallucinated for t in tallies) == sum(1 for o in outcomes if o.y == 1)


class TestThresholdSweep:
    def setup_data(self):
        truths = {}
        answers = []
        # pct errors 7% planted: success at 0.10/0.20, hallucination at 0.05
        for i in range(10):
            pid = f"p{i}"
            truths[pid] = FactRecord(f"e{i}", f"E{i}", 2000 + (i % 2), 100.0)
            answers.append(ExtractedAnswer(pid, 107.0, (0, 5), False))
        return truths, answers

    def test_boundary_logic(self):
        truths, answers = self.setup_data()
        curves = threshold_sweep(truths, answers, [0.05, 0.10, 0.20])
        assert all(r.success_rate == 0.0 for r in curves[0.05])
        assert all(r.success_rate == 1.0 for r in curves[0.10])
        assert all(r.success_rate == 1.0 for r in curves[0.20])

    def test_monotone_in_threshold(self):
        truths = {}
        answers = []
        for i in range(50):
            pid = f"p{i}"
            truths[pid] = FactRecord(f"e{i}", f"E{i}", 2000 + (i % 3), 100.0)
            value = None if i % 5 == 0 else 100.0 + i
            span = (0, 1) if value is not None else None
            answers.append(ExtractedAnswer(pid, value, span, value is None))
        curves = threshold_sweep(truths, answers, [0.05, 0.10, 0.20])
        for y_idx in range(3):
            rates = [curves[t][y_idx].success_rate for t in (0.05, 0.10, 0.20)]
            assert rates == sorted(rates)

    def test_single_threshold_matches_direct(self):
        truths, answers = self.setup_data()
        from factgap.outcome import classify_batch
        direct = rates_by_year(classify_batch(truths, answers, 0.10).outcomes)
        assert threshold_sweep(truths, answers, [0.10])[0.10] == direct

    def test_unsorted_thresholds_rejected(self):
        with pytest.raises(ValueError):
            threshold_sweep({}, [], [0.2, 0.1])


class TestErrorDistribution:
    def test_quartiles_and_outliers(self):
        outcomes = []
        for i, err in enumerate([1.0, 2.0, 3.0, 4.0, 100.0]):
            outcomes.append(classify(100.0, 100.0 + err, 0.10, prompt_id=f"p{i}",
                                     entity_id=f"e{i}", year=2000))
        [summary] = error_distribution(outcomes)
        assert summary.median == 3.0
        assert summary.outlier_count == 1
        assert summary.answer_rate == 1.0

    def test_no_answers_flagged_empty(self):
        outcomes = [out("a", 2000, 0), out("b", 2000, 0)]
        [summary] = error_distribution(outcomes)
        assert summary.empty
        assert summary.answer_rate == 0.0

    def test_equal_errors_zero_iqr(self):
        outcomes = [classify(100.0, 105.0, 0.10, prompt_id=f"p{i}", entity_id=f"e{i}",
                             year=2000) for i in range(4)]
        [summary] = error_distribution(outcomes)
        assert summary.q1 == summary.q3 == summary.median == 5.0
        assert summary.outlier_count == 0


class TestSpearman:
    def test_perfect_monotone(self):
        assert spearman_rank_correlation([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
        assert spearman_rank_correlation([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)

    def test_matches_scipy(self):
        from scipy.stats import spearmanr
        import numpy as np
        rng = np.random.default_rng(5)
        xs = rng.standard_normal(50).tolist()
        ys = (rng.standard_normal(50) + np.asarray(xs)).tolist()
        ours = spearman_rank_correlation(xs, ys)
        ref = spearmanr(xs, ys).statistic
        assert ours == pytest.approx(ref, abs=1e-12)

    def test_ties_averaged(self):
        from scipy.stats import spearmanr
        xs = [1.0, 1.0, 2.0, 3.0, 3.0, 4.0]
        ys = [2.0, 1.0, 3.0, 5.0, 4.0, 6.0]
        assert spearman_rank_correlation(xs, ys) == pytest.approx(spearmanr(xs, ys).statistic)


class TestEmitReport:
    def make_inputs(self):
        outcomes = [out(f"e{i}", 2000 + (i % 3), (i % 3)) for i in range(30)]
        rates = rates_by_year(outcomes)
        tallies = tally_entities(outcomes, {(f"e{i}", 2000 + (i % 3)): float(i) for i in range(30)})
        import numpy as np
        rng = np.random.default_rng(1)
        rows = []
        covs = {"x": {}}
        for i in range(200):
            code = 2 if rng.random() < 0.5 else 1
            row = out(f"r{i}", 2000 + (i % 2), code)
            rows.append(row)
            covs["x"][(row.entity_id, row.year)] = float(rng.standard_normal())
        fit = fit_logit(build_design(rows, covs, RegressionSpec("success", ["x"], ["year"])))
        return rates, tallies, {"success~x": fit}

    def digest(self, path):
        return hashlib.sha256(path.read_bytes()).hexdigest()

    def test_files_written(self, tmp_path):
        rates, tallies, fits = self.make_inputs()
        written = emit_report(rates, tallies, fits, tmp_path)
        names = {p.name for p in written}
        assert names == {"rates.csv", "tallies.csv", "fits.json", "summary.txt"}
        rates_lines = (tmp_path / "rates.csv").read_text().strip().splitlines()
        assert rates_lines[0] == "year,n,success_rate,hallucination_rate,stderr_success,threshold"
        assert len(rates_lines) == 1 + len(rates)

    def test_headers_only_when_empty(self, tmp_path):
        emit_report([], [], {}, tmp_path)
        assert (tmp_path / "rates.csv").read_text().strip() == \
            "year,n,success_rate,hallucination_rate,stderr_success,threshold"
        assert (tmp_path / "fits.json").read_text().strip() == "{}"

    def test_byte_identical_rerun(self, tmp_path):
        rates, tallies, fits = self.make_inputs()
        emit_report(rates, tallies, fits, tmp_path / "a")
        emit_report(rates, tallies, fits, tmp_path / "b")
        for name in ("rates.csv", "tallies.csv", "fits.json", "summary.txt"):
            assert self.digest(tmp_path / "a" / name) == self.digest(tmp_path / "b" / name)

    def test_43_year_row_count(self, tmp_path):
        outcomes = [out(f"e{i}", 1980 + (i % 43), (i % 3)) for i in range(43 * 3)]
        rates = rates_by_year(outcomes)
        emit_report(rates, [], {}, tmp_path)
        lines = (tmp_path / "rates.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 43
