"""Segment travel time prediction from time-space matrices.

Modules:
    traffic_core  flow/speed/density formulas, eTag trip matching, aggregation
    grid          time-space matrices, gap filling, normalisation, windowing
    baselines     unweighted average, linear/logistic regression, small MLP
    cnn           didactic 3x3 CNN and the configurable general CNN
    synth         synthetic corridors with upstream-propagating congestion
    harness       MAPE, experiments, comparison reports (CLI in ``cli``)
"""

from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    DivisionDegenerate,
    InvalidArgument,
    NoData,
    TravelTimeError,
)
from .grid import TimeSpaceMatrix, build_matrix, window_samples
from .harness import compare_methods, mape, relative_error, run_experiment
from .predictors import ExperimentConfig, WindowConfig
from .traffic_core import (
    compute_flow,
    compute_space_mean_speed,
    compute_time_mean_speed,
    estimate_density,
    estimate_travel_time,
)

__version__ = "0.1.0"
