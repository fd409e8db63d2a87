"""
Causal multi-head self-attention with dense, sliding-window and
head-shared variants.

Dense: every query attends to all earlier positions (T x T scores).

Sparse: query t attends only to positions [t - w + 1, t]. Keys and values
are gathered into per-query windows with `unfold`, so the score and
weighted-sum products cost T * w * d multiplies instead of T * T * d.

Shared heads: one query/key/value projection of width d / H is shared by
all heads; heads differ through a learned per-head query offset (absent
when H == 1, so a single-head shared layer equals the dense one).

Key-padding masks mark left-padded positions; a padded query always sees
at least itself so no softmax row is empty.
"""

import math
from typing import Optional, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from src import numerics
from src.schemas import TransformerConfig


class SequenceOverflowError(ValueError):
    """Token sequence longer than the configured max_sequence_len."""


class CausalSelfAttention(nn.Module):
    """Causal self-attention over (B, T, d) token batches."""

    def __init__(self, config: TransformerConfig):
        super().__init__()
        self.config = config
        self.num_heads = config.num_heads
        self.head_dim = config.head_dim
        self.window = config.window if config.is_sparse else None
        self.shares_heads = config.shares_heads

        d = config.model_dim
        proj_dim = self.head_dim if self.shares_heads else d
        self.query = nn.Linear(d, proj_dim)
        self.key = nn.Linear(d, proj_dim)
        self.value = nn.Linear(d, proj_dim)
        self.output = nn.Linear(d, d)
        if self.shares_heads and self.num_heads > 1:
            self.head_query_offset = nn.Parameter(0.02 * torch.randn(self.num_heads, self.head_dim))
        else:
            self.register_parameter("head_query_offset", None)

    def _heads(self, projected: torch.Tensor) -> torch.Tensor:
        batch, seq_len, _ = projected.shape
        if self.shares_heads:
            return projected.unsqueeze(1).expand(batch, self.num_heads, seq_len, self.head_dim)
        return projected.view(batch, seq_len, self.num_heads, self.head_dim).transpose(1, 2)

    def forward(
        self,
        x: torch.Tensor,
        key_padding_mask: Optional[torch.Tensor] = None,
        return_weights: bool = False,
    ) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
        """
        Args:
            x: (B, T, d) tokens
            key_padding_mask: (B, T) bool, True marks padding
            return_weights: Also return dense (B, H, T, T) attention weights

        Returns:
            (output (B, T, d), weights or None)
        """
        batch, seq_len, width = x.shape
        if seq_len > self.config.max_sequence_len:
            raise SequenceOverflowError(
                f"sequence of {seq_len} tokens exceeds max_sequence_len {self.config.max_sequence_len}"
            )

        q = self._heads(self.query(x))
        if self.head_query_offset is not None:
            q = q + self.head_query_offset[None, :, None, :]
        k = self._heads(self.key(x))
        v = self._heads(self.value(x))

        if self.window is None:
            attended, weights = self._dense(q, k, v, key_padding_mask)
        else:
            attended, weights = self._windowed(q, k, v, key_padding_mask, return_weights)

        merged = attended.transpose(1, 2).reshape(batch, seq_len, width)
        return self.output(merged), (weights if return_weights else None)

    def _dense(self, q, k, v, key_padding_mask):
        seq_len = q.shape[2]
        scores = numerics.matmul(q, k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        allowed = torch.ones(seq_len, seq_len, dtype=torch.bool, device=q.device).tril()
        allowed = allowed.expand(q.shape[0], 1, seq_len, seq_len)
        if key_padding_mask is not None:
            diagonal = torch.eye(seq_len, dtype=torch.bool, device=q.device)
            allowed = allowed & (~key_padding_mask[:, None, None, :] | diagonal)
        weights = numerics.softmax_lastdim(scores.masked_fill(~allowed, float("-inf")))
        return numerics.matmul(weights, v), weights

    def _windowed(self, q, k, v, key_padding_mask, return_weights):
        batch, heads, seq_len, head_dim = q.shape
        w = self.window
        # slot j of query t holds key position t - (w - 1) + j
        k_win = F.pad(k, (0, 0, w - 1, 0)).unfold(2, w, 1)
        v_win = F.pad(v, (0, 0, w - 1, 0)).unfold(2, w, 1).transpose(-1, -2)

        scores = numerics.matmul(q.unsqueeze(-2), k_win).squeeze(-2) / math.sqrt(head_dim)
        positions = torch.arange(seq_len)[:, None] - (w - 1) + torch.arange(w)[None, :]
        valid = (positions >= 0).expand(batch, seq_len, w)
        if key_padding_mask is not None:
            lead = torch.ones(batch, w - 1, dtype=torch.bool)
            padded = torch.cat([lead, key_padding_mask], dim=1).unfold(1, w, 1)
            is_self = torch.zeros(w, dtype=torch.bool)
            is_self[-1] = True
            valid = valid & (~padded | is_self)
        scores = scores.masked_fill(~valid[:, None], float("-inf"))
        weights = numerics.softmax_lastdim(scores)

        attended = numerics.matmul(weights.unsqueeze(-2), v_win).squeeze(-2)
        if not return_weights:
            return attended, None
        slots = (torch.arange(seq_len)[:, None] + torch.arange(w)[None, :]).expand(batch, heads, seq_len, w)
        dense = torch.zeros(batch, heads, seq_len, seq_len + w - 1, dtype=weights.dtype)
        dense.scatter_(-1, slots, weights)
        return attended, dense[..., w - 1 :]
