"""Statistically guided lightweight underwater image enhancement, in numpy."""
from .autodiff import Tape, Tensor, backward
from .model import WeightSet, init_weights, load_weights, save_weights, usln_forward

__all__ = ["Tape", "Tensor", "backward", "WeightSet", "init_weights", "load_weights",
           "save_weights", "usln_forward"]
