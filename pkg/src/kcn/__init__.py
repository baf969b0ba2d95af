"""Kriging convolutional networks with a universal-kriging reference implementation."""

from ._backend import BACKEND
from .dataset import Dataset
from .errors import KcnError
from .kcn_models import KcnConfig, TrainedModel, kriging_emulation_predict, predict, predict_many, train
from .kriging import local_kriging_predict
from .spatial_index import SpatialIndex, build_index
from .variogram import VariogramModel, empirical_semivariogram, fit_variogram

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Dataset", "KcnConfig", "KcnError", "SpatialIndex", "TrainedModel", "VariogramModel",
    "build_index", "empirical_semivariogram", "fit_variogram", "kriging_emulation_predict",
    "local_kriging_predict", "predict", "predict_many", "train",
]
