"""Configs, batch runs, report files and the command line."""

from .config import AdversaryConfig, RunConfig, load_config, parse_config
from .runner import CompareSummary, RunReport, VariantOutcome, compare_variants, output_dir, run_scenario

__all__ = [
    "AdversaryConfig", "CompareSummary", "RunConfig", "RunReport", "VariantOutcome", "compare_variants",
    "load_config", "output_dir", "parse_config", "run_scenario",
]
