"""Deterministic training-dynamics lab for a one-layer softmax-attention model
on the even pairs and parity tasks."""

from .model import ModelParams, attention_weights, forward, load_checkpoint, predict, save_checkpoint
from .sequences import (EVEN_PAIRS, PARITY_COT, TaskDataset, ValidationError, build_dataset,
                        build_even_pairs_dataset, build_parity_cot_dataset)
from .training import TrainConfig, Trajectory, load_run, train

__version__ = "0.1.0"
