"""Synthetic-cohort experiment harness: generation, experiments, reports, CLI."""

from .generate import GenConfig, cohort_prevalence, generate, preset, preset_names
from .experiment import (
    ExperimentConfig,
    MethodConfig,
    RunRecord,
    SeedResult,
    hours_to_steps,
    run_experiment,
    split_stays,
)
from .io import load_cohort, save_cohort
from .report import write_report

__all__ = [
    "GenConfig",
    "generate",
    "preset",
    "preset_names",
    "cohort_prevalence",
    "ExperimentConfig",
    "MethodConfig",
    "RunRecord",
    "SeedResult",
    "hours_to_steps",
    "run_experiment",
    "split_stays",
    "save_cohort",
    "load_cohort",
    "write_report",
]
