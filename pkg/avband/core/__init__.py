"""
avband 核心模块

提供样本聚合、估计器、主动探测、RIPE 日志解析和路径仿真功能。
"""

from .config import config
from .estimators import (
    AffineFit,
    InterceptModel,
    PathEstimate,
    affine_fit,
    estimate_path,
    fit_intercept_model,
)
from .pathsim import GroundTruth, PathSpec, ground_truth, load_path_spec, run_experiment
from .probe import ProbeConfig, ProbeReport, probe_and_estimate, run_probe
from .ripe_ingest import match_pairs, pairs_to_samples, parse_rcdp, parse_sndp
from .samples import (
    AvbandError,
    Direction,
    ProbeSample,
    SampleSet,
    SizeDelayStats,
    aggregate,
    filter_outliers,
)

__all__ = [
    "config",
    "AffineFit",
    "InterceptModel",
    "PathEstimate",
    "affine_fit",
    "estimate_path",
    "fit_intercept_model",
    "GroundTruth",
    "PathSpec",
    "ground_truth",
    "load_path_spec",
    "run_experiment",
    "ProbeConfig",
    "ProbeReport",
    "probe_and_estimate",
    "run_probe",
    "match_pairs",
    "pairs_to_samples",
    "parse_rcdp",
    "parse_sndp",
    "AvbandError",
    "Direction",
    "ProbeSample",
    "SampleSet",
    "SizeDelayStats",
    "aggregate",
    "filter_outliers",
]
