"""PEM-corrected universal differential equations for chaotic systems."""

from .errors import (DivergedTrajectory, EmptySeries, IntegrationUnstable, InvalidArgument,
                     MaxStepsExceeded, NoPeak, PemUdeError)
from .odesim import DynamicalSystem, SolverConfig, TimeSeries, integrate
from .pem import PemUdeProblem, TrainReport, network_correction, polynomial_correction, train
from .rbfnet import AdamWHyper, RbfNetwork, init_network
from .symreg import FeatureLibrary, SymbolicModel, refine_parameters, stlsq

__version__ = "0.1.0"

__all__ = [
    "AdamWHyper", "DivergedTrajectory", "DynamicalSystem", "EmptySeries", "FeatureLibrary",
    "IntegrationUnstable", "InvalidArgument", "MaxStepsExceeded", "NoPeak", "PemUdeError",
    "PemUdeProblem", "RbfNetwork", "SolverConfig", "SymbolicModel", "TimeSeries", "TrainReport",
    "init_network", "integrate", "network_correction", "polynomial_correction", "refine_parameters",
    "stlsq", "train",
]
