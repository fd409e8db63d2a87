"""
Tests for the hybrid action codec: nearest-row decoding, clamping and the
per-part loss.
"""

# pylint: disable=missing-function-docstring,redefined-outer-name,unused-argument

import pytest
import torch

from src.models import ActionSpace, ContinuousPart, DiscretePart, HybridAction, InvalidActionError
from src.service.dt.action_codec import ActionCodec, ActionCodecError, nearest_rows


@pytest.fixture()
def hybrid_space() -> ActionSpace:
    return ActionSpace(
        (DiscretePart("phase", 4), DiscretePart("mode", 2)),
        (ContinuousPart("power", 0.0, 1.0, (0.0, 0.5, 1.0)),),
    )


@pytest.fixture()
def codec(hybrid_space) -> ActionCodec:
    torch.manual_seed(0)
    return ActionCodec(hybrid_space, model_dim=9)


def test_nearest_row_ties_go_to_lowest_index():
    codebook = torch.tensor([[1.0, 0.0], [-1.0, 0.0], [0.0, 3.0]])
    assert int(nearest_rows(torch.tensor([0.0, 0.0]), codebook)) == 0
    assert nearest_rows(torch.tensor([[-0.9, 0.1], [0.0, 2.0]]), codebook).tolist() == [1, 2]


def test_part_width_splits_model_dim(codec):
    assert codec.part_dim == 3
    assert codec.embedding_dim == 9
    assert codec.embed(torch.tensor([[2.0, 1.0, 0.25], [0.0, 0.0, 1.0]])).shape == (2, 9)


def test_predicted_codebook_row_decodes_to_its_index(codec):
    hidden = torch.zeros(1, 9)
    with torch.no_grad():
        for head, codebook, index in zip(codec.discrete_heads, codec.codebooks, (3, 1)):
            head.weight.zero_()
            head.bias.copy_(codebook[index])
    row = codec.decode(hidden)[0]
    assert row[:2].tolist() == [3.0, 1.0]


def test_decoded_rows_are_always_legal(codec, hybrid_space):
    hidden = torch.randn(50, 9, generator=torch.Generator().manual_seed(1)) * 100.0
    for row in codec.decode(hidden):
        hybrid_space.validate(hybrid_space.unflatten(row.numpy()))


def test_continuous_values_are_clamped_to_bounds(codec):
    with torch.no_grad():
        codec.continuous_heads[0].weight.zero_()
        codec.continuous_heads[0].bias.fill_(7.5)
    assert codec.decode(torch.zeros(2, 9))[:, 2].tolist() == [1.0, 1.0]
    with torch.no_grad():
        codec.continuous_heads[0].bias.fill_(-3.0)
    assert codec.decode(torch.zeros(1, 9))[0, 2].item() == 0.0


def test_decode_action_needs_hidden_for_continuous_parts(codec):
    vector = torch.zeros(codec.embedding_dim)
    with pytest.raises(ActionCodecError):
        codec.decode_action(vector)
    action = codec.decode_action(vector, hidden=torch.zeros(9))
    assert isinstance(action, HybridAction)
    assert len(action.discrete) == 2 and len(action.continuous) == 1


def test_decode_action_rejects_wrong_width(codec):
    with pytest.raises(ActionCodecError):
        codec.decode_action(torch.zeros(5), hidden=torch.zeros(9))


def test_exact_continuous_prediction_has_zero_loss():
    space = ActionSpace((), (ContinuousPart("power", 0.0, 2.0),))
    codec = ActionCodec(space, model_dim=4)
    with torch.no_grad():
        codec.continuous_heads[0].weight.zero_()
        codec.continuous_heads[0].bias.fill_(1.25)
    loss = codec.loss(torch.randn(3, 4), torch.full((3, 1), 1.25))
    assert loss.tolist() == [0.0, 0.0, 0.0]


def test_loss_is_per_row_and_nonnegative(codec):
    targets = torch.tensor([[0.0, 1.0, 0.5], [3.0, 0.0, 0.0]])
    loss = codec.loss(torch.randn(2, 9), targets)
    assert loss.shape == (2,)
    assert torch.all(loss >= 0)


def test_embed_rejects_wrong_row_width(codec):
    with pytest.raises(ActionCodecError):
        codec.embed(torch.zeros(1, 2))


def test_empty_space_is_rejected():
    with pytest.raises(ActionCodecError):
        ActionCodec(ActionSpace(()), model_dim=4)


def test_embedded_discrete_action_decodes_to_itself():
    torch.manual_seed(3)
    codec = ActionCodec(ActionSpace((DiscretePart("phase", 16),)), model_dim=8)
    for index in range(16):
        action = HybridAction((index,), ())
        with torch.no_grad():
            assert codec.decode_action(codec.embed_action(action)) == action


def test_embed_action_rejects_illegal_actions(codec):
    with pytest.raises(InvalidActionError):
        codec.embed_action(HybridAction((4, 0), (0.5,)))
