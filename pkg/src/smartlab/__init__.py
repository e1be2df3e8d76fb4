"""Platform SMART simulation with IPW and Bayesian G-formula DTR estimators."""
__version__ = "0.1.0"

from .trial import ALL_DTRS, Cohort, Dtr, ScenarioParams, TrialDesign, optimal_dtr, true_dtr_mean
from .scenarios import get_scenario
from .datagen import TrialDataset, read_csv, simulate_trial, write_csv
from .approaches import APPROACHES, analyze
from .harness import StudyConfig, run_study

__all__ = [
    "ALL_DTRS", "APPROACHES", "Cohort", "Dtr", "ScenarioParams", "StudyConfig", "TrialDataset", "TrialDesign",
    "analyze", "get_scenario", "optimal_dtr", "read_csv", "run_study", "simulate_trial", "true_dtr_mean",
    "write_csv",
]
