"""
Experiment pipeline for XAI Inversion.

This module provides the staged experiment: the run matrix, the shared run
context, the append-only run manifest, the stages themselves and the
factor analysis and report rendering that close a run.
"""

from .analysis import FACTORS, analyze_factors, factor_values
from .context import SEED_OFFSETS, RunContext
from .manifest import RunManifest, StageRecord
from .matrix import RunSpec, breach_kinds, build_run_matrix, run_id_for
from .report import render_report, summarize_ordering
from .stages import PREREQUISITES, STAGES, check_prerequisites, render_explanations, run_pipeline, run_stage

__all__ = [
    "FACTORS",
    "PREREQUISITES",
    "SEED_OFFSETS",
    "STAGES",
    "RunContext",
    "RunManifest",
    "RunSpec",
    "StageRecord",
    "analyze_factors",
    "breach_kinds",
    "build_run_matrix",
    "check_prerequisites",
    "factor_values",
    "render_explanations",
    "render_report",
    "run_id_for",
    "run_pipeline",
    "run_stage",
    "summarize_ordering",
]
