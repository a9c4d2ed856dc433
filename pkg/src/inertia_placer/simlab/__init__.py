"""Time-domain simulation, metrics, linearization studies and scenario comparison."""

from .compare import COLUMNS, ROW_SCHEMA, Comparison, ScenarioColumn, compare_scenarios
from .metrics import MetricsReport, energy_curves, metrics
from .simulate import (ROCOF_FILTER, FaultSpec, SimulationDivergence, Trajectory, simulate,
                       simulate_linear, simulate_nonlinear)
from .study import (STUDY_METRICS, StudyResult, StudySample, default_magnitudes,
                    linearization_error_study, relative_error, scalar_metrics)

__all__ = [
    "COLUMNS", "Comparison", "FaultSpec", "MetricsReport", "ROCOF_FILTER", "ROW_SCHEMA",
    "STUDY_METRICS", "ScenarioColumn", "SimulationDivergence", "StudyResult", "StudySample",
    "Trajectory", "compare_scenarios", "default_magnitudes", "energy_curves",
    "linearization_error_study", "metrics", "relative_error", "scalar_metrics", "simulate",
    "simulate_linear", "simulate_nonlinear",
]
