"""Least-squares fitting: models, guesses and the Levenberg-Marquardt engine."""
from .engine import FitResult, fit, numeric_jacobian
from .models import MODELS, PAPER_MODELS, FitModel, Guess, get_model, initial_guess, model_eval

__all__ = [
    "FitModel", "FitResult", "Guess", "MODELS", "PAPER_MODELS",
    "fit", "get_model", "initial_guess", "model_eval", "numeric_jacobian",
]
