"""Item-aligned federated cold-start recommendation."""

from .config import TrainConfig
from .estimator import IFedRec

__all__ = ["IFedRec", "TrainConfig"]
__version__ = "0.1.0"
