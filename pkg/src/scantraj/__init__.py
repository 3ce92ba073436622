"""Socially aware multi-agent trajectory forecasting.

An LSTM encoder-decoder in which every hidden-state update is filtered
through a learnable spatial domain over neighbouring pedestrians, with an
optional temporal attention stage and an adversarial wrapper for multimodal
futures. Built on a self-contained float64 reverse-mode autodiff tape.
"""

__version__ = "0.1.0"

from . import autodiff, geometry, spatial, temporal, cells, model, generative
from . import data, metrics, training, plots, cli  # noqa: F401
from .errors import ShapeError, DataError, NumericError, EmptyMetricError  # noqa: F401
