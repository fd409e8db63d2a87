"""Causal transformer trunk with dense, sparse and head-shared attention."""

from src.service.transformer.attention import CausalSelfAttention, SequenceOverflowError
from src.service.transformer.blocks import (
    CausalTransformer,
    LayerNorm,
    TransformerBlock,
    attention_cost,
    count_parameters,
)

__all__ = [
    "CausalSelfAttention",
    "CausalTransformer",
    "LayerNorm",
    "SequenceOverflowError",
    "TransformerBlock",
    "attention_cost",
    "count_parameters",
]
