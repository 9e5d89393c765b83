"""Smoke tests for figure rendering."""
from factgap.analytics import EntityTally, rates_by_year, tally_entities
from factgap.figures import plot_entity_tallies, plot_rate_curves, render_report_figures
from factgap.outcome import classify


def outcomes():
    outs = []
    for i in range(60):
        answer = [100.0, 150.0, None][i % 3]
        outs.append(classify(100.0, answer, 0.10, prompt_id=f"p{i}",
                             entity_id=f"e{i % 6}", year=2000 + (i % 5)))
    return outs


def test_rate_curves_written(tmp_path):
    rates = rates_by_year(outcomes())
    path = plot_rate_curves(rates, tmp_path / "rates.png", marker_year=2002)
    assert path.exists() and path.stat().st_size > 0


def test_tally_scatter_written(tmp_path):
    tallies = tally_entities(outcomes(), {(f"e{i}", 2000): float(i) for i in range(6)})
    path = plot_entity_tallies(tallies, tmp_path / "tallies.png")
    assert path.exists() and path.stat().st_size > 0


def test_tally_scatter_without_covariate(tmp_path):
    tallies = [EntityTally("a", 3, 1, float("nan"))]
    path = plot_entity_tallies(tallies, tmp_path / "tallies.png")
    assert path.exists()


def test_render_report_figures(tmp_path):
    outs = outcomes()
    rates = rates_by_year(outs)
    tallies = tally_entities(outs)
    written = render_report_figures(rates, tallies, tmp_path)
    assert {p.name for p in written} == {"rates.png", "tallies.png"}
