"""Continuous-time GNSS factor-graph positioning with online-learned noise mixtures.

Modules
-------
gp           white-noise-on-acceleration GP prior, transition and interpolation
graph        time-centric factor graph, linearisation and costs
solver       Levenberg-Marquardt with max-mixture component selection
measurements pseudorange and odometry models
noise        Gaussian, M-estimator and mixture noise models
vbgmm        variational-Bayes mixture fitting on residual windows
nlos         NLOS features, logistic baseline and epoch screening
sim          seedable urban-canyon scenario generator
harness      sliding-window runs, metrics and comparison tables
"""

from .errors import GpfgoError
from .gp import GpHyperParams, StateKnot, interpolate, interpolant
from .graph import Factor, GraphConfig, build_graph, evaluate_cost, linearize
from .harness import MetricsReport, RunConfig, compare, export_density, run
from .measurements import OdometryMeasurement, SatObservation
from .noise import NoiseModel
from .sim import ScenarioConfig, simulate
from .solver import SolveOptions, solve
from .vbgmm import GmmModel, VbPrior, eliminate_shift, prune, vb_fit

__version__ = "0.1.0"

__all__ = [
    "GpfgoError", "GpHyperParams", "StateKnot", "interpolate", "interpolant", "Factor",
    "GraphConfig", "build_graph", "evaluate_cost", "linearize", "MetricsReport", "RunConfig",
    "compare", "export_density", "run", "OdometryMeasurement", "SatObservation", "NoiseModel",
    "ScenarioConfig", "simulate", "SolveOptions", "solve", "GmmModel", "VbPrior",
    "eliminate_shift", "prune", "vb_fit",
]
