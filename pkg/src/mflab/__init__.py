"""Mean-field gradient flow of two-layer ReLU networks: particles, fields, flows and diagnostics."""
from .data import Batch, DataModel
from .diagnostics import ConvergenceReport, SardReport, convergence_report, mbr_gap, sard_probe
from .field import ActivationSpec, PotentialField, probe_sup, realize, risk
from .flow import FlowConfig, NonFiniteStateError, TrajectoryRecord, dissipation, run, step
from .loss import LossModel, bayes_optimal, mbr_estimate
from .params import Ensemble, Particle, SphereMeasure, init_omni

__version__ = "0.1.0"

__all__ = [
    "ActivationSpec", "Batch", "ConvergenceReport", "DataModel", "Ensemble", "FlowConfig",
    "LossModel", "NonFiniteStateError", "Particle", "PotentialField", "SardReport",
    "SphereMeasure", "TrajectoryRecord", "bayes_optimal", "convergence_report", "dissipation",
    "init_omni", "mbr_estimate", "mbr_gap", "probe_sup", "realize", "risk", "run", "sard_probe",
    "step",
]
