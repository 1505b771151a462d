"""Sensorless power-factor-correction workbench for a single-phase boost converter."""
from .plant import PlantParams, PlantState
from .estimator import EstimatorGains, EstimatorState, EstimateBundle, ThetaVector
from .controller import ControllerGains, ControllerState
from .sim_engine import Event, Scenario, Trace, run_pair, simulate, standard_scenario

__version__ = "0.1.0"
