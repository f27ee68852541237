"""Deterministic desk-scale simulator of an autonomous ultrasound liver
follow-up pipeline: virtual phantom and probe, hepatic-vein search and
sweep acquisition, rigid CT registration, slice matching, and a Monte
Carlo evaluation harness with reproducible reports."""

from .harness import ConfigError, SweepConfig, emit_reports, run_sweep, run_trial

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "SweepConfig",
    "emit_reports",
    "run_sweep",
    "run_trial",
    "__version__",
]
