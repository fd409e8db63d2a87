"""
Tests for the causal transformer trunk: masking, variant equivalence,
parameter counts and instrumented attention cost.
"""

# pylint: disable=missing-function-docstring,redefined-outer-name,unused-argument

import pytest
import torch

from src import numerics
from src.schemas import TransformerConfig
from src.service.transformer import (
    CausalSelfAttention,
    CausalTransformer,
    SequenceOverflowError,
    attention_cost,
    count_parameters,
)

VARIANTS = ["dense", "sparse", "shared_heads", "sparse_shared"]


def _tokens(seq_len: int, width: int = 8, seed: int = 0, batch: int = 1) -> torch.Tensor:
    return torch.rand(batch, seq_len, width, generator=torch.Generator().manual_seed(seed)) * 2.0 - 1.0


def _trunk(config: TransformerConfig, seed: int = 0) -> CausalTransformer:
    torch.manual_seed(seed)
    return CausalTransformer(config).eval()


# ---------------------------------------------------------------------------
# Causality and masking
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("variant", VARIANTS)
def test_future_tokens_do_not_change_earlier_outputs(tiny_transformer_config, variant):
    trunk = _trunk(tiny_transformer_config.derive(attention_variant=variant, window=3))
    x = _tokens(8)
    perturbed = x.clone()
    perturbed[:, 5:] += 0.75
    with torch.no_grad():
        before, after = trunk(x), trunk(perturbed)
    assert torch.equal(before[:, :5], after[:, :5])
    assert not torch.equal(before[:, 5:], after[:, 5:])


def test_sparse_layer_ignores_tokens_outside_the_window(tiny_transformer_config):
    config = tiny_transformer_config.derive(attention_variant="sparse", window=2)
    torch.manual_seed(0)
    layer = CausalSelfAttention(config).eval()
    x = _tokens(6)
    perturbed = x.clone()
    perturbed[:, 1] += 1.0
    with torch.no_grad():
        before, _ = layer(x)
        after, _ = layer(perturbed)
    # position 1 is visible to queries 1 and 2 only
    assert torch.equal(before[:, 3:], after[:, 3:])
    assert not torch.equal(before[:, 2], after[:, 2])


@pytest.mark.parametrize("dense_variant,sparse_variant", [("dense", "sparse"), ("shared_heads", "sparse_shared")])
def test_sparse_equals_dense_when_window_covers_history(tiny_transformer_config, dense_variant, sparse_variant):
    dense = _trunk(tiny_transformer_config.derive(attention_variant=dense_variant))
    sparse = CausalTransformer(tiny_transformer_config.derive(attention_variant=sparse_variant, window=8)).eval()
    sparse.load_state_dict(dense.state_dict())
    x = _tokens(6, batch=2)
    with torch.no_grad():
        assert torch.allclose(dense(x), sparse(x), rtol=0, atol=1e-10)


def test_window_row_has_min_t_plus_one_w_nonzeros(tiny_transformer_config):
    config = tiny_transformer_config.derive(attention_variant="sparse", window=2)
    torch.manual_seed(0)
    layer = CausalSelfAttention(config).eval()
    with torch.no_grad():
        _, weights = layer(_tokens(6), return_weights=True)
    assert weights.shape == (1, 2, 6, 6)
    for t in range(6):
        nonzero = (weights[0, :, t] != 0).sum(dim=-1)
        assert nonzero.tolist() == [min(t + 1, 2)] * 2
    torch.testing.assert_close(weights.sum(dim=-1), torch.ones(1, 2, 6), rtol=0, atol=1e-12)


def test_single_token_output_is_projected_value(tiny_transformer_config):
    torch.manual_seed(0)
    layer = CausalSelfAttention(tiny_transformer_config).eval()
    x = _tokens(1)
    with torch.no_grad():
        out, _ = layer(x)
        expected = layer.output(layer.value(x))
    assert torch.allclose(out, expected, rtol=0, atol=1e-12)


def test_padded_positions_still_produce_finite_outputs(tiny_transformer_config):
    trunk = _trunk(tiny_transformer_config.derive(attention_variant="sparse", window=2))
    padding = torch.tensor([[True, True, True, False, False], [False] * 5])
    with torch.no_grad():
        out = trunk(_tokens(5, batch=2), padding)
    assert torch.isfinite(out).all()


def test_zero_output_projections_pass_tokens_through(tiny_transformer_config):
    trunk = _trunk(tiny_transformer_config)
    with torch.no_grad():
        for block in trunk.blocks:
            for layer in (block.attention.output, block.ffn.project):
                layer.weight.zero_()
                layer.bias.zero_()
        x = _tokens(5)
        assert torch.equal(trunk(x), x)


def test_overflow_is_rejected(tiny_transformer_config):
    trunk = _trunk(tiny_transformer_config)
    with pytest.raises(SequenceOverflowError):
        trunk(_tokens(tiny_transformer_config.max_sequence_len + 1))


def test_attention_weights_are_reported_per_block(tiny_transformer_config):
    trunk = _trunk(tiny_transformer_config)
    weights = trunk.attention_weights(_tokens(4))
    assert len(weights) == tiny_transformer_config.num_blocks
    assert all(w.shape == (1, 2, 4, 4) for w in weights)
    assert all(torch.equal(w.triu(diagonal=1), torch.zeros_like(w)) for w in weights)


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("variant", VARIANTS)
def test_trunk_gradients_match_finite_differences(tiny_transformer_config, variant):
    trunk = _trunk(tiny_transformer_config.derive(attention_variant=variant, window=2))
    x = _tokens(4).requires_grad_(True)
    probe = _tokens(4, seed=9)
    inputs = {"x": x, **dict(trunk.named_parameters())}
    error = numerics.grad_check(lambda: (trunk(x) * probe).sum(), inputs, max_entries=6, seed=1)
    assert error <= 1e-4


# ---------------------------------------------------------------------------
# Parameter counts
# ---------------------------------------------------------------------------


def test_single_head_sharing_changes_nothing():
    dense = TransformerConfig(model_dim=8, num_heads=1, ffn_dim=16)
    assert count_parameters(dense.derive(attention_variant="shared_heads")) == count_parameters(dense)


def test_shared_projection_is_counted_once(tiny_transformer_config):
    # per block: dense q/k/v/o 4 * (8*8 + 8), ffn 8*16+16 + 16*8+8, two norms 2 * 16
    assert count_parameters(tiny_transformer_config) == 2 * 600
    # shared q/k/v 3 * (8*4 + 4), o 8*8 + 8, query offsets 2 * 4
    assert count_parameters(tiny_transformer_config.derive(attention_variant="shared_heads")) == 2 * 500


def test_sparse_window_adds_no_parameters(tiny_transformer_config):
    assert count_parameters(tiny_transformer_config.derive(attention_variant="sparse")) == count_parameters(
        tiny_transformer_config
    )


def test_block_parameters_scale_with_block_count(tiny_transformer_config):
    doubled = tiny_transformer_config.derive(num_blocks=4)
    assert count_parameters(doubled) == 2 * count_parameters(tiny_transformer_config)


def test_desk_lightweight_trunk_is_under_seventy_percent():
    dense = TransformerConfig(num_blocks=3, model_dim=64, num_heads=4, ffn_dim=64)
    light = dense.derive(attention_variant="sparse_shared", window=8)
    assert count_parameters(dense) == 75648
    assert count_parameters(light) == 47760
    assert count_parameters(light) <= 0.7 * count_parameters(dense)


# ---------------------------------------------------------------------------
# Attention cost
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("seq_len", [64, 128, 256])
def test_dense_cost_quadruples_with_doubled_length(seq_len):
    config = TransformerConfig(model_dim=16, num_heads=2, ffn_dim=16)
    assert attention_cost(seq_len, config) == 2 * seq_len * seq_len * 16
    assert attention_cost(2 * seq_len, config) / attention_cost(seq_len, config) == pytest.approx(4.0, rel=0.1)


@pytest.mark.parametrize("seq_len", [64, 128, 256])
def test_sparse_cost_doubles_with_doubled_length(seq_len):
    config = TransformerConfig(model_dim=16, num_heads=2, ffn_dim=16, attention_variant="sparse", window=8)
    assert attention_cost(seq_len, config) == 2 * seq_len * 8 * 16
    assert attention_cost(2 * seq_len, config) / attention_cost(seq_len, config) == pytest.approx(2.0, rel=0.1)


def test_costs_agree_when_length_equals_window():
    dense = TransformerConfig(model_dim=16, num_heads=2, ffn_dim=16)
    assert attention_cost(8, dense) == attention_cost(8, dense.derive(attention_variant="sparse", window=8))
