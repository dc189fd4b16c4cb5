"""Synthetic recordings, preprocessing and the dataset container."""

from .io import load_dataset, save_dataset
from .lexicon import Lexicon
from .preprocess import (
    augment,
    detect_dead_channels,
    interpolate_dead_channels,
    split_dataset,
    subsample,
    zscore_by_day,
)
from .simulate import NeuralDataset, Session, SimConfig, Simulator, Trial, generate_dataset, gaussian_kernel

__all__ = [
    "Lexicon",
    "SimConfig",
    "Simulator",
    "NeuralDataset",
    "Session",
    "Trial",
    "generate_dataset",
    "gaussian_kernel",
    "zscore_by_day",
    "interpolate_dead_channels",
    "detect_dead_channels",
    "augment",
    "split_dataset",
    "subsample",
    "save_dataset",
    "load_dataset",
]
