"""Inverse spectral problems on quantum star graphs via Neumann series of Bessel functions."""

from .direct import WeylSample, synthesize_weyl_data, weyl_matrix
from .graph_model import Edge, SpectralSamplingPlan, StarGraph, build_graph, example1_graph, sample_rho
from .inverse import InverseConfig, RecoveredPotential, run_inverse_pipeline

__version__ = "0.1.0"

__all__ = [
    "Edge", "StarGraph", "SpectralSamplingPlan", "WeylSample", "InverseConfig", "RecoveredPotential",
    "build_graph", "example1_graph", "sample_rho", "synthesize_weyl_data", "weyl_matrix",
    "run_inverse_pipeline",
]
