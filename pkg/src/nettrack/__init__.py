"""Networked multi-target tracking with PCRB-driven transmit beamforming."""

__version__ = "0.1.0"

from ._linalg import NumericalError
from .beamform import build_problem, extract_beamformers, optimize_beams, solve, verify_span
from .fim import BeamPlan, FimOperator, assemble_Ru, fim_general, measurement_info
from .harness import genie_run, monte_carlo, run_scenario
from .motion import MotionModel, build_motion_model
from .nkf import TrackState, predict, run_block, update
from .pcrb import accuracy, bim_step, data_info, prior_info
from .scenario import ConfigError, Scenario, load_scenario, table1

__all__ = [
    "BeamPlan", "ConfigError", "FimOperator", "MotionModel", "NumericalError", "Scenario", "TrackState",
    "accuracy", "assemble_Ru", "bim_step", "build_motion_model", "build_problem", "data_info",
    "extract_beamformers", "fim_general", "genie_run", "load_scenario", "measurement_info", "monte_carlo",
    "optimize_beams", "predict", "prior_info", "run_block", "run_scenario", "solve", "table1", "update",
    "verify_span",
]
