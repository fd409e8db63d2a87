"""
Dense float64 tensor arithmetic, autodiff helpers and AdamW.

Tensors are `torch.Tensor` in float64 and torch autograd is the tape.
This module adds the pieces the rest of the package relies on having
explicit control over:

  - `matmul` with shape checks and an opt-in multiply counter, used by
    the attention layers so `attention_cost` can report exact counts.
  - `softmax_lastdim` / `layer_norm` written out so their numerics are
    pinned (max subtraction, population variance, eps guard).
  - `backward` returning a name -> gradient map, and `adamw_step`
    applying such a map through `torch.optim.AdamW`.
  - `grad_check` comparing `backward` against central differences.

Importing this module sets torch's default dtype to float64.
"""

import contextlib
import logging
import math
import threading
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from src.configs import (
    DT_LEARNING_RATE,
    DT_WEIGHT_DECAY,
    GRAD_CHECK_MIN_SCALE,
    GRAD_CHECK_STEP,
    LAYER_NORM_EPS,
)

logger = logging.getLogger(__name__)

DTYPE = torch.float64

torch.set_default_dtype(DTYPE)


class NumericsError(Exception):
    """Base class for numeric contract violations."""


class NonFiniteError(NumericsError):
    """A NaN or Inf appeared where a finite value is required."""


class ShapeMismatchError(NumericsError, ValueError):
    """Operand shapes do not satisfy an operation's precondition."""


@dataclass
class MultiplyCounter:
    """Running total of scalar multiplications performed by `matmul`."""

    total: int = 0


_COUNTERS = threading.local()


def _active_counters() -> List[MultiplyCounter]:
    stack = getattr(_COUNTERS, "stack", None)
    if stack is None:
        stack = []
        _COUNTERS.stack = stack
    return stack


@contextlib.contextmanager
def count_multiplies() -> Iterator[MultiplyCounter]:
    """
    Count scalar multiplications done by `matmul` inside the block.

    Counters nest; every active counter on the current thread is charged.

    Yields:
        MultiplyCounter: counter whose `total` grows as matmuls run
    """
    counter = MultiplyCounter()
    stack = _active_counters()
    stack.append(counter)
    try:
        yield counter
    finally:
        stack.remove(counter)


def ensure_finite(tensor: torch.Tensor, what: str = "tensor") -> torch.Tensor:
    """Raise NonFiniteError if `tensor` holds any NaN/Inf; return it otherwise."""
    if not bool(torch.isfinite(tensor).all()):
        raise NonFiniteError(f"{what} contains non-finite values")
    return tensor


def as_tensor(values, requires_grad: bool = False) -> torch.Tensor:
    """Copy `values` into a fresh float64 tensor."""
    tensor = torch.tensor(np.asarray(values, dtype=np.float64), dtype=DTYPE)
    tensor.requires_grad_(requires_grad)
    return tensor


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """
    Batched matrix product a[..., m, k] @ b[..., k, n].

    Leading (batch) dimensions must match exactly, or `b` may be a plain
    2-D matrix shared across the batch. No other broadcasting.

    Raises:
        ShapeMismatchError: rank < 2, inner dims differ, or batch dims differ
    """
    if a.dim() < 2 or b.dim() < 2:
        raise ShapeMismatchError(f"matmul needs rank >= 2, got {tuple(a.shape)} and {tuple(b.shape)}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul inner dims differ: {tuple(a.shape)} @ {tuple(b.shape)}")
    if b.dim() > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatchError(f"matmul batch dims differ: {tuple(a.shape)} @ {tuple(b.shape)}")

    stack = _active_counters()
    if stack:
        batch = math.prod(a.shape[:-2])
        count = batch * a.shape[-2] * a.shape[-1] * b.shape[-1]
        for counter in stack:
            counter.total += count
    return torch.matmul(a, b)


def softmax_lastdim(x: torch.Tensor) -> torch.Tensor:
    """
    Softmax over the last dimension with max subtraction.

    Entries equal to -inf get probability exactly 0; every slice must hold
    at least one finite entry.
    """
    shift = x.max(dim=-1, keepdim=True).values.detach()
    exp = torch.exp(x - shift)
    return exp / exp.sum(dim=-1, keepdim=True)


def layer_norm(
    x: torch.Tensor,
    gain: torch.Tensor,
    bias: torch.Tensor,
    eps: float = LAYER_NORM_EPS,
) -> torch.Tensor:
    """
    Normalize each last-dim slice to zero mean / unit variance, then affine.

    Variance is the population variance; `eps` guards constant slices.

    Raises:
        ShapeMismatchError: gain/bias do not match the last dimension
    """
    width = x.shape[-1]
    if tuple(gain.shape) != (width,) or tuple(bias.shape) != (width,):
        raise ShapeMismatchError(
            f"layer_norm gain/bias must be ({width},), got {tuple(gain.shape)} / {tuple(bias.shape)}"
        )
    mean = x.mean(dim=-1, keepdim=True)
    centered = x - mean
    var = (centered * centered).mean(dim=-1, keepdim=True)
    return centered / torch.sqrt(var + eps) * gain + bias


def backward(loss: torch.Tensor, leaves: Mapping[str, torch.Tensor]) -> Dict[str, torch.Tensor]:
    """
    Reverse-mode gradients of a scalar loss with respect to named leaves.

    Leaves that do not require grad are skipped; leaves the loss does not
    depend on get a zero gradient.

    Args:
        loss: Scalar tensor produced under autograd
        leaves: name -> tensor

    Returns:
        Dict[str, Tensor]: name -> d(loss)/d(leaf), same shape as the leaf

    Raises:
        ShapeMismatchError: loss is not a scalar
        NonFiniteError: loss is NaN/Inf
    """
    if loss.numel() != 1 or loss.dim() > 1:
        raise ShapeMismatchError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    ensure_finite(loss.detach(), "loss")
    names = [name for name, leaf in leaves.items() if leaf.requires_grad]
    if not names:
        return {}
    grads = torch.autograd.grad(loss.reshape(()), [leaves[n] for n in names], allow_unused=True)
    result: Dict[str, torch.Tensor] = {}
    for name, grad in zip(names, grads):
        result[name] = torch.zeros_like(leaves[name]) if grad is None else grad
    return result


def build_adamw(
    params: Iterable[torch.nn.Parameter],
    lr: float = DT_LEARNING_RATE,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = DT_WEIGHT_DECAY,
) -> torch.optim.AdamW:
    """AdamW with decoupled weight decay and bias-corrected moments."""
    return torch.optim.AdamW(list(params), lr=lr, betas=betas, eps=eps, weight_decay=weight_decay)


def adamw_step(
    params: Mapping[str, torch.nn.Parameter],
    grads: Mapping[str, torch.Tensor],
    optimizer: torch.optim.Optimizer,
    max_grad_norm: Optional[float] = None,
) -> None:
    """
    Apply one AdamW update from an explicit gradient map.

    Parameters missing from `grads` are left untouched (no decay either).

    Raises:
        ShapeMismatchError: a gradient's shape differs from its parameter
        NonFiniteError: a gradient holds NaN/Inf
    """
    stepped = []
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            param.grad = None
            continue
        if grad.shape != param.shape:
            raise ShapeMismatchError(
                f"gradient for {name} has shape {tuple(grad.shape)}, parameter {tuple(param.shape)}"
            )
        ensure_finite(grad, f"gradient of {name}")
        param.grad = grad.detach().clone()
        stepped.append(param)
    if max_grad_norm is not None and stepped:
        torch.nn.utils.clip_grad_norm_(stepped, max_grad_norm)
    optimizer.step()
    optimizer.zero_grad(set_to_none=True)


def _index_subset(numel: int, max_entries: Optional[int], rng: np.random.Generator) -> Sequence[int]:
    if max_entries is None or numel <= max_entries:
        return range(numel)
    return sorted(rng.choice(numel, size=max_entries, replace=False).tolist())


def grad_check(
    fn: Callable[[], torch.Tensor],
    inputs: Union[Mapping[str, torch.Tensor], Sequence[torch.Tensor]],
    step: float = GRAD_CHECK_STEP,
    max_entries: Optional[int] = None,
    min_scale: float = GRAD_CHECK_MIN_SCALE,
    seed: int = 0,
) -> float:
    """
    Worst relative discrepancy between `backward` and central differences.

    Each checked entry x_i is nudged by +/- step in place and restored.
    The relative error of an entry is |a - n| / max(|a|, |n|, min_scale).

    Args:
        fn: Closure recomputing the scalar loss from the current inputs
        inputs: Leaf tensors (requires_grad) to check, by name or position
        step: Finite-difference step
        max_entries: Check at most this many entries per leaf (random subset)
        min_scale: Denominator floor for near-zero gradients
        seed: Seed for the entry subset

    Returns:
        float: Maximum relative error over all checked entries

    Raises:
        NonFiniteError: the loss or a finite difference is non-finite
    """
    if not isinstance(inputs, Mapping):
        inputs = {str(i): t for i, t in enumerate(inputs)}
    analytic = backward(fn(), inputs)
    rng = np.random.default_rng(seed)
    worst = 0.0
    with torch.no_grad():
        for name, grad in analytic.items():
            flat = inputs[name].data.view(-1)
            flat_grad = grad.reshape(-1)
            for i in _index_subset(flat.numel(), max_entries, rng):
                original = flat[i].item()
                flat[i] = original + step
                plus = fn().item()
                flat[i] = original - step
                minus = fn().item()
                flat[i] = original
                numeric = (plus - minus) / (2.0 * step)
                if not math.isfinite(numeric):
                    raise NonFiniteError(f"finite difference for {name}[{i}] is not finite")
                exact = flat_grad[i].item()
                err = abs(exact - numeric) / max(abs(exact), abs(numeric), min_scale)
                worst = max(worst, err)
    logger.debug("grad_check worst relative error %.3e", worst)
    return worst
