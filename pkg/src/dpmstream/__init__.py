"""Streaming variational inference for Dirichlet process Gaussian mixtures with learned forgetting."""

from .dpm import MixtureState, ModelConfig
from .evaluation import BatchMetrics, evaluate_batch
from .expfam import ComponentPosterior, GammaFactor, GaussianMeanFactor
from .forgetting import AlgorithmSpec, ForgettingState, expected_rho, fit_batch, fit_stream
from .stream import StreamConfig, generate_stream, load_stream_csv

__all__ = [
    "AlgorithmSpec",
    "BatchMetrics",
    "ComponentPosterior",
    "ForgettingState",
    "GammaFactor",
    "GaussianMeanFactor",
    "MixtureState",
    "ModelConfig",
    "StreamConfig",
    "evaluate_batch",
    "expected_rho",
    "fit_batch",
    "fit_stream",
    "generate_stream",
    "load_stream_csv",
]
