"""Autodiff tensors and the residual-dense attack network built on them."""

from .model import (DESK_WAN, PAPER_WAN, WAN, AdamState, WanConfig, adam_init, adam_step,
                    build_wan, load_checkpoint, save_checkpoint)
from .tensor import Tape, Tensor, abs_mean, add, concat, conv2d, relu, scale, split, sub

__all__ = [
    "DESK_WAN", "PAPER_WAN", "WAN", "AdamState", "WanConfig", "adam_init", "adam_step",
    "build_wan", "load_checkpoint", "save_checkpoint", "Tape", "Tensor", "abs_mean",
    "add", "concat", "conv2d", "relu", "scale", "split", "sub",
]
