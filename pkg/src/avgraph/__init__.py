"""Adaptive visibility graphs and graph-pooling classifiers for I/Q signals."""

from .avg import BandedMatrix, ConvBank, avg_backward, avg_forward, init_bank
from .diffpool import ArchConfig, AvgNetParams, avgnet_forward
from .signal import Dataset, IQFrame, LabeledFrame, generate_synthetic, synthesize_dataset
from .train import TrainConfig, evaluate, train
from .visibility import VisGraph, hvg, lpvg, vg_fast, vg_naive

__version__ = "0.1.0"

__all__ = [
    "ArchConfig",
    "AvgNetParams",
    "BandedMatrix",
    "ConvBank",
    "Dataset",
    "IQFrame",
    "LabeledFrame",
    "TrainConfig",
    "VisGraph",
    "avg_backward",
    "avg_forward",
    "avgnet_forward",
    "evaluate",
    "generate_synthetic",
    "hvg",
    "init_bank",
    "lpvg",
    "synthesize_dataset",
    "train",
    "vg_fast",
    "vg_naive",
]
