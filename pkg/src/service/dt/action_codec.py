"""
Hybrid action embedding and decoding.

Every discrete part owns a learned codebook with one row per legal value
(row width e = model_dim // num_parts, at least 1). The model predicts a
vector per discrete part; logits are negative squared distances to the
codebook rows and decoding picks the nearest row (lowest index on ties).

Continuous parts are predicted one after another: head j sees the hidden
state, the embeddings of the discrete parts and the j continuous values
already fixed (targets while training, decoded values at inference).
Decoded values are clamped to the part's bounds.
"""

from typing import List, Optional

import torch
import torch.nn.functional as F
from torch import nn

from src.models import ActionSpace, HybridAction


class ActionCodecError(ValueError):
    """Codec cannot be built or a vector does not fit it."""


def nearest_rows(vectors: torch.Tensor, codebook: torch.Tensor) -> torch.Tensor:
    """Index of the closest codebook row for each vector; ties go to the lowest index."""
    distances = ((vectors.unsqueeze(-2) - codebook) ** 2).sum(dim=-1)
    return torch.argmin(distances, dim=-1)


class ActionCodec(nn.Module):
    """Embeds flat action rows and predicts/decodes actions from hidden states."""

    def __init__(self, space: ActionSpace, model_dim: int):
        super().__init__()
        if space.num_parts == 0:
            raise ActionCodecError("action space has no parts")
        for part in space.discrete:
            if part.cardinality < 1:
                raise ActionCodecError(f"discrete part {part.name} has an empty codebook")
        self.space = space
        self.model_dim = model_dim
        self.part_dim = max(1, model_dim // space.num_parts)
        n_disc = len(space.discrete)

        self.codebooks = nn.ParameterList(
            [nn.Parameter(torch.randn(part.cardinality, self.part_dim)) for part in space.discrete]
        )
        self.continuous_embed = nn.ModuleList([nn.Linear(1, self.part_dim) for _ in space.continuous])
        self.discrete_heads = nn.ModuleList([nn.Linear(model_dim, self.part_dim) for _ in space.discrete])
        condition = model_dim + n_disc * self.part_dim
        self.continuous_heads = nn.ModuleList(
            [nn.Linear(condition + j, 1) for j in range(len(space.continuous))]
        )

    @property
    def num_discrete(self) -> int:
        return len(self.space.discrete)

    @property
    def embedding_dim(self) -> int:
        return self.part_dim * self.space.num_parts

    # ------------------------------------------------------------------
    # Embedding
    # ------------------------------------------------------------------

    def _discrete_embedding(self, indices: torch.Tensor) -> torch.Tensor:
        """(..., n_disc) long -> (..., n_disc * e)."""
        rows = [codebook[indices[..., i]] for i, codebook in enumerate(self.codebooks)]
        if not rows:
            return indices.new_zeros(indices.shape[:-1] + (0,), dtype=torch.float64)
        return torch.cat(rows, dim=-1)

    def embed(self, actions: torch.Tensor) -> torch.Tensor:
        """Flat action rows (..., A) -> embeddings (..., embedding_dim)."""
        if actions.shape[-1] != self.space.num_parts:
            raise ActionCodecError(f"action rows need {self.space.num_parts} entries, got {actions.shape[-1]}")
        n_disc = self.num_discrete
        parts = [self._discrete_embedding(actions[..., :n_disc].round().long())]
        for j, layer in enumerate(self.continuous_embed):
            parts.append(layer(actions[..., n_disc + j : n_disc + j + 1]))
        return torch.cat(parts, dim=-1)

    def embed_action(self, action: HybridAction) -> torch.Tensor:
        """Embedding of one legal action (see `embed`)."""
        row = torch.as_tensor(self.space.flatten(self.space.validate(action)))
        return self.embed(row)

    # ------------------------------------------------------------------
    # Prediction
    # ------------------------------------------------------------------

    def predicted_vectors(self, hidden: torch.Tensor) -> List[torch.Tensor]:
        """Per discrete part, the predicted (N, e) vector."""
        return [head(hidden) for head in self.discrete_heads]

    def discrete_logits(self, hidden: torch.Tensor) -> List[torch.Tensor]:
        """Per discrete part, (N, C_i) logits = -squared distance to each codebook row."""
        logits = []
        for vector, codebook in zip(self.predicted_vectors(hidden), self.codebooks):
            logits.append(-((vector.unsqueeze(-2) - codebook) ** 2).sum(dim=-1))
        return logits

    def _continuous_head(self, j: int, hidden, discrete_embedding, previous) -> torch.Tensor:
        features = torch.cat([hidden, discrete_embedding, previous], dim=-1)
        return self.continuous_heads[j](features).squeeze(-1)

    def loss(self, hidden: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
        """
        Per-row action loss: CE per discrete part plus squared error per
        continuous part (teacher-forced), summed over parts.

        Args:
            hidden: (N, d)
            targets: (N, A) flat target rows

        Returns:
            (N,) loss per row
        """
        n_disc = self.num_discrete
        indices = targets[:, :n_disc].round().long()
        total = hidden.new_zeros(hidden.shape[0])
        for i, logits in enumerate(self.discrete_logits(hidden)):
            total = total + F.cross_entropy(logits, indices[:, i], reduction="none")
        if self.continuous_heads:
            discrete_embedding = self._discrete_embedding(indices)
            for j in range(len(self.continuous_heads)):
                predicted = self._continuous_head(j, hidden, discrete_embedding, targets[:, n_disc : n_disc + j])
                total = total + (predicted - targets[:, n_disc + j]) ** 2
        return total

    @torch.no_grad()
    def decode(self, hidden: torch.Tensor) -> torch.Tensor:
        """(N, d) hidden states -> (N, A) legal flat action rows."""
        indices = [nearest_rows(v, cb) for v, cb in zip(self.predicted_vectors(hidden), self.codebooks)]
        index_tensor = (
            torch.stack(indices, dim=-1) if indices else torch.zeros(hidden.shape[0], 0, dtype=torch.long)
        )
        return torch.cat([index_tensor.double(), self._decode_continuous(hidden, index_tensor)], dim=-1)

    def _decode_continuous(self, hidden: torch.Tensor, indices: torch.Tensor) -> torch.Tensor:
        values = hidden.new_zeros(hidden.shape[0], 0)
        if not self.continuous_heads:
            return values
        discrete_embedding = self._discrete_embedding(indices)
        for j, part in enumerate(self.space.continuous):
            raw = self._continuous_head(j, hidden, discrete_embedding, values)
            values = torch.cat([values, raw.clamp(part.low, part.high).unsqueeze(-1)], dim=-1)
        return values

    @torch.no_grad()
    def decode_action(self, vector: torch.Tensor, hidden: Optional[torch.Tensor] = None) -> HybridAction:
        """
        Decode one predicted vector.

        `vector` holds the discrete slices (n_disc * e entries, or a full
        embedding_dim vector whose trailing continuous slices are ignored).
        Continuous parts are predicted from `hidden` (d entries).

        Raises:
            ActionCodecError: wrong vector size, or continuous parts without `hidden`
        """
        n_disc = self.num_discrete
        if vector.dim() != 1 or vector.shape[0] not in (n_disc * self.part_dim, self.embedding_dim):
            raise ActionCodecError(
                f"vector must have {n_disc * self.part_dim} or {self.embedding_dim} entries, "
                f"got {tuple(vector.shape)}"
            )
        slices = vector[: n_disc * self.part_dim].view(n_disc, self.part_dim)
        indices = [int(nearest_rows(slices[i], cb)) for i, cb in enumerate(self.codebooks)]
        continuous = ()
        if self.continuous_heads:
            if hidden is None:
                raise ActionCodecError("continuous parts need the hidden state to decode")
            index_tensor = torch.as_tensor([indices], dtype=torch.long)
            continuous = tuple(self._decode_continuous(hidden.view(1, -1), index_tensor)[0].tolist())
        return self.space.validate(HybridAction(tuple(indices), continuous))
