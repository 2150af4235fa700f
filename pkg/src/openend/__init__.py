"""Open-end sequential change point monitoring.

The package implements the detector ``E`` that compares estimators before
and after every split point of the monitored data, together with the
ordinary CUSUM (``Q``) and Page CUSUM (``P``) benchmarks, critical values
from their Brownian limit laws, and a simulation harness for size and power.
"""

from .core import (
    DetectorKind,
    NormMatrix,
    NotPositiveDefinite,
    WeightFunction,
    invert_to_norm,
    weight_eval,
    weighted_norm,
)
from .detectors import (
    HorizonExceeded,
    Monitor,
    MonitorConfig,
    StepReport,
    detector_E,
    detector_P,
    detector_Q,
    first_rejections,
    make_config,
    trajectories,
)
from .functionals import PrefixSums, ScoreStream, estimator_average, prefix_sums, score_lm, score_mean
from .experiments import (
    ChangeSpec,
    DataModel,
    ExperimentPlan,
    ExperimentResult,
    generate,
    power_experiment,
    results_to_csv,
    size_experiment,
    true_lrv,
)
from .limits import (
    LimitSpec,
    MCSettings,
    QuantileCache,
    borodin_cdf,
    critical_value,
    simulate_limit,
)
from .lrv import LRVConfig, bandwidth_rule, lrv_estimate, qs_kernel, sample_autocov

__all__ = [
    "DetectorKind", "NormMatrix", "NotPositiveDefinite", "WeightFunction", "invert_to_norm",
    "weight_eval", "weighted_norm", "HorizonExceeded", "Monitor", "MonitorConfig", "StepReport",
    "detector_E", "detector_P", "detector_Q", "first_rejections", "make_config", "trajectories",
    "PrefixSums", "ScoreStream", "estimator_average", "prefix_sums", "score_lm", "score_mean", "LimitSpec",
    "MCSettings", "QuantileCache", "borodin_cdf", "critical_value", "simulate_limit", "LRVConfig",
    "bandwidth_rule", "lrv_estimate", "qs_kernel", "sample_autocov", "ChangeSpec", "DataModel",
    "ExperimentPlan", "ExperimentResult", "generate", "power_experiment", "results_to_csv",
    "size_experiment", "true_lrv",
]

__version__ = "0.1.0"
