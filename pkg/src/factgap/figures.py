"""Render report figures to files alongside the delimited output.

The CSV/JSON files remain the canonical output; these are diagnostic plots:
rate curves over years with the binomial-SE band, the per-entity
correct-vs-hallucinated scatter colored by mean covariate, and the
threshold-sweep overlay.
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .analytics import EntityTally, YearlyRates  # noqa: E402


def plot_rate_curves(rates: Sequence[YearlyRates], path: str | Path,
                     marker_year: int | None = None, title: str = "") -> Path:
    """Success and hallucination rates over years, with the SE band."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    years = [r.year for r in rates]
    success = [r.success_rate for r in rates]
    hal = [r.hallucination_rate for r in rates]
    se = [r.stderr_success for r in rates]

    fig, ax = plt.subplots(figsize=(8, 4.5))
    ax.plot(years, success, label="success rate", color="tab:blue")
    ax.fill_between(years, [s - e for s, e in zip(success, se)],
                    [s + e for s, e in zip(success, se)], color="tab:blue", alpha=0.2)
    ax.plot(years, hal, label="hallucination rate", color="tab:red")
    if marker_year is not None:
        ax.axvline(marker_year, linestyle=":", color="gray")
    ax.set_xlabel("year")
    ax.set_ylabel("rate")
    ax.set_ylim(-0.02, 1.02)
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_entity_tallies(tallies: Sequence[EntityTally], path: str | Path,
                        covariate_label: str = "mean covariate") -> Path:
    """Scatter of correct vs hallucinated year counts, colored by covariate."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    xs = [t.years_correct for t in tallies]
    ys = [t.years_hallucinated for t in tallies]
    colors = [t.mean_covariate for t in tallies]
    has_color = any(not math.isnan(c) for c in colors)

    fig, ax = plt.subplots(figsize=(6, 5))
    if has_color:
        sc = ax.scatter(xs, ys, c=colors, cmap="viridis", s=14, alpha=0.8)
        fig.colorbar(sc, ax=ax, label=covariate_label)
    else:
        ax.scatter(xs, ys, s=14, alpha=0.8)
    ax.set_xlabel("years answered correctly")
    ax.set_ylabel("years hallucinated")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_threshold_sweep(curves: Mapping[float, Sequence[YearlyRates]], path: str | Path) -> Path:
    """Overlay success-rate curves for each error threshold."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for threshold in sorted(curves):
        rates = curves[threshold]
        ax.plot([r.year for r in rates], [r.success_rate for r in rates],
                label=f"threshold {threshold:g}")
    ax.set_xlabel("year")
    ax.set_ylabel("success rate")
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_report_figures(rates: Sequence[YearlyRates], tallies: Sequence[EntityTally],
                          out_dir: str | Path, marker_year: int | None = None) -> list[Path]:
    """Standard figure set written next to the report CSVs."""
    out_dir = Path(out_dir)
    written = []
    by_threshold: dict[float, list[YearlyRates]] = {}
    for r in rates:
        by_threshold.setdefault(r.threshold, []).append(r)
    if by_threshold:
        main_threshold = sorted(by_threshold)[0] if len(by_threshold) == 1 else \
            (0.10 if 0.10 in by_threshold else sorted(by_threshold)[0])
        written.append(plot_rate_curves(by_threshold[main_threshold], out_dir / "rates.png",
                                        marker_year=marker_year))
        if len(by_threshold) > 1:
            written.append(plot_threshold_sweep(by_threshold, out_dir / "threshold_sweep.png"))
    if tallies:
        written.append(plot_entity_tallies(tallies, out_dir / "tallies.png"))
    return written
