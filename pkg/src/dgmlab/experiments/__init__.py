"""Scenario configuration, sweeps and reports."""

from .config import ScenarioConfig, load_config
from .report import emit_report
from .runner import RunManifest, StageError, convergence_study, run_scenario

__all__ = ["ScenarioConfig", "load_config", "emit_report", "RunManifest", "StageError",
           "convergence_study", "run_scenario"]
