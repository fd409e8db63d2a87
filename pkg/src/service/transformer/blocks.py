"""
Pre-norm transformer blocks and the causal trunk.

Each block computes x + Attn(LN(x)) followed by x + FFN(LN(x)), with a
GELU feed-forward and residual dropout. The trunk adds no positional
encoding of its own; callers add timestep embeddings to their tokens.
"""

import logging
from typing import List, Optional

import torch
from torch import nn

from src import numerics
from src.configs import LAYER_NORM_EPS
from src.schemas import TransformerConfig
from src.service.transformer.attention import CausalSelfAttention

logger = logging.getLogger(__name__)


class LayerNorm(nn.Module):
    """Affine layer norm over the last dimension (see `numerics.layer_norm`)."""

    def __init__(self, width: int, eps: float = LAYER_NORM_EPS):
        super().__init__()
        self.eps = eps
        self.gain = nn.Parameter(torch.ones(width))
        self.bias = nn.Parameter(torch.zeros(width))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return numerics.layer_norm(x, self.gain, self.bias, self.eps)


class FeedForward(nn.Module):
    def __init__(self, model_dim: int, ffn_dim: int):
        super().__init__()
        self.expand = nn.Linear(model_dim, ffn_dim)
        self.activation = nn.GELU()
        self.project = nn.Linear(ffn_dim, model_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.project(self.activation(self.expand(x)))


class TransformerBlock(nn.Module):
    """One pre-norm residual block."""

    def __init__(self, config: TransformerConfig):
        super().__init__()
        self.ln_attention = LayerNorm(config.model_dim)
        self.attention = CausalSelfAttention(config)
        self.ln_ffn = LayerNorm(config.model_dim)
        self.ffn = FeedForward(config.model_dim, config.ffn_dim)
        self.dropout = nn.Dropout(config.dropout_rate)

    def forward(self, x: torch.Tensor, key_padding_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        attended, _ = self.attention(self.ln_attention(x), key_padding_mask)
        x = x + self.dropout(attended)
        return x + self.dropout(self.ffn(self.ln_ffn(x)))


class CausalTransformer(nn.Module):
    """
    Stack of `num_blocks` causal blocks mapping (B, T, d) -> (B, T, d).

    Output at position t depends only on inputs at positions <= t (and,
    for sparse variants, only on positions in the last `window`).
    """

    def __init__(self, config: TransformerConfig):
        super().__init__()
        self.config = config
        self.blocks = nn.ModuleList([TransformerBlock(config) for _ in range(config.num_blocks)])

    def forward(self, x: torch.Tensor, key_padding_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        for block in self.blocks:
            x = block(x, key_padding_mask)
        return x

    @torch.no_grad()
    def attention_weights(
        self, x: torch.Tensor, key_padding_mask: Optional[torch.Tensor] = None
    ) -> List[torch.Tensor]:
        """Dense (B, H, T, T) attention weights of every block, for inspection."""
        weights = []
        for block in self.blocks:
            _, block_weights = block.attention(block.ln_attention(x), key_padding_mask, return_weights=True)
            weights.append(block_weights)
            x = block(x, key_padding_mask)
        return weights


def count_parameters(config: TransformerConfig) -> int:
    """Exact number of learnable scalars in a trunk built from `config`."""
    return sum(p.numel() for p in CausalTransformer(config).parameters())


def attention_cost(seq_len: int, config: TransformerConfig) -> int:
    """
    Scalar multiplies spent on attention scores and weighted sums.

    Measured by running one attention layer on a (1, seq_len, d) input
    under `numerics.count_multiplies`; projections are not included.
    Dense layers cost 2 * T^2 * d, sparse ones 2 * T * w * d.
    """
    sized = config.derive(max_sequence_len=max(seq_len, config.max_sequence_len))
    layer = CausalSelfAttention(sized).eval()
    tokens = torch.zeros(1, seq_len, config.model_dim)
    with torch.no_grad(), numerics.count_multiplies() as counter:
        layer(tokens)
    logger.debug("attention_cost(T=%d, %s) = %d", seq_len, config.attention_variant, counter.total)
    return counter.total
