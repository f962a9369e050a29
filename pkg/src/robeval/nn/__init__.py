"""Differentiable classifiers with hand-written backprop, weight files and a toy trainer."""
from .classifier import (
    AdditiveNoiseClassifier,
    Classifier,
    ScaledClassifier,
    Sequential,
    cnn,
    linear_model,
    mlp,
    wrap_scaled,
)
from .gradcheck import finite_difference_grad, finite_difference_vjp
from .layers import Conv2D, Dense, Flatten, MaxPool2D, ReLU, Reshape
from .serialization import load_weights, save_weights
from .train import accuracy, train_toy

__all__ = [
    "AdditiveNoiseClassifier",
    "Classifier",
    "Conv2D",
    "Dense",
    "Flatten",
    "MaxPool2D",
    "ReLU",
    "Reshape",
    "ScaledClassifier",
    "Sequential",
    "accuracy",
    "cnn",
    "finite_difference_grad",
    "finite_difference_vjp",
    "linear_model",
    "load_weights",
    "mlp",
    "save_weights",
    "train_toy",
    "wrap_scaled",
]
