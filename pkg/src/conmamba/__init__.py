"""Desk-scale multilingual CTC ASR with a convolutional Mamba encoder."""

from .tensor import Tensor, grad_check

__all__ = ["Tensor", "grad_check"]
__version__ = "0.1.0"
