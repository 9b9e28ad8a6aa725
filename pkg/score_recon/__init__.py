"""
score-recon - Score-based generative reconstruction for MRI and sparse-view CT.

This package provides noise-conditional score models, annealed Langevin and
predictor-corrector posterior samplers, a total-variation baseline and an
experiment harness configured through Markdown experiment cards.
"""

from .async_experiment_builder import AsyncExperimentBuilder
from .experiment import ExperimentConfig
from .experiment_builder import ExperimentBuilder
from .runner import run_experiment

__version__ = "0.1.0"
__all__ = ["AsyncExperimentBuilder", "ExperimentBuilder", "ExperimentConfig", "run_experiment"]
