"""Facial palsy detection from face landmarks."""

from ._palsyfuse import (
    Error,
    Metrics,
    compute_metrics,
    decide,
    handcrafted_features,
    late_fuse,
    render_line_segments,
    report_to_markdown,
    round_robin_sample,
    run_experiment,
    synth_cohort,
)

__all__ = [
    "Error",
    "Metrics",
    "compute_metrics",
    "decide",
    "handcrafted_features",
    "late_fuse",
    "render_line_segments",
    "report_to_markdown",
    "round_robin_sample",
    "run_experiment",
    "synth_cohort",
]
