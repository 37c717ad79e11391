"""Reconstruction algorithms and the measurement-to-temperature pipeline."""
from .entropy import entropy_gradient, entropy_hessian, relative_entropy_term
from .pipeline import (
    Algorithm,
    Operators,
    ReconstructionResult,
    RetrievalConfig,
    reconstruct_many,
    solve_full_pipeline,
)
from .regularization import build_difference_operator
from .retro import RetroConfig, RetroResult, RetroSystem, projected_gradient, retro_reconstruct
from .sart import SartConfig, SartResult, SartSystem, sart_reconstruct

__all__ = [
    "Algorithm", "Operators", "ReconstructionResult", "RetrievalConfig", "RetroConfig", "RetroResult",
    "RetroSystem", "SartConfig", "SartResult", "SartSystem", "build_difference_operator",
    "entropy_gradient", "entropy_hessian", "projected_gradient", "reconstruct_many",
    "relative_entropy_term", "retro_reconstruct", "sart_reconstruct", "solve_full_pipeline",
]
