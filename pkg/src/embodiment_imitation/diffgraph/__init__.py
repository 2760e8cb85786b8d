"""Reverse-mode gradients for the distance measure and the networks."""
from .tape import Tape, Var, value_of

__all__ = ["Tape", "Var", "value_of"]
