"""KSGAN: generative modelling by minimising a Generalized Kolmogorov-Smirnov distance.

Everything runs on a small numpy autodiff engine; no deep-learning framework is used.
"""
from . import autodiff, checkpoint, losses, metrics, nn, targets, trainer

__version__ = "0.1.0"
__all__ = ["autodiff", "checkpoint", "losses", "metrics", "nn", "targets", "trainer"]
