"""Entanglement-based QKD simulator: quantum-dot source, channels, detectors, protocol and key distillation."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
