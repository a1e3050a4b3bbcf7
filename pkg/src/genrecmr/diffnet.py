"""Differentiable operator surface, AdamW, clipping, schedule, gradient checks.

Forward/backward passes ride on torch autograd; the optimizer, clipping
and learning-rate schedule are implemented here so the exact update
recurrence is pinned down and every optimizer moment is addressable by
parameter name for checkpointing. ``grad_check`` is the independent
central-difference oracle used by the test suite against every operator
and the end-to-end unrolled network.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Callable, Iterable

import numpy as np
import torch
import torch.nn.functional as F

from .numerics import Rng

Tensor4 = torch.Tensor  # (batch, channels, h, w) with autograd-tracked grad


def conv2d(x: Tensor4, weight: torch.Tensor, bias: torch.Tensor | None = None,
           stride: int = 1, padding: int | str = "same") -> Tensor4:
    """Standard cross-correlation with odd kernels; gradients via autograd."""
    if weight.shape[-1] % 2 == 0 or weight.shape[-2] % 2 == 0:
        raise ValueError(f"kernel sides must be odd, got {tuple(weight.shape[-2:])}")
    if padding == "same":
        padding = (weight.shape[-2] // 2, weight.shape[-1] // 2)
    return F.conv2d(x, weight, bias, stride=stride, padding=padding)


def leaky_relu(x: Tensor4, slope: float = 0.1) -> Tensor4:
    return F.leaky_relu(x, negative_slope=slope)


def global_avg_pool(x: Tensor4) -> torch.Tensor:
    """Channelwise spatial mean, (B, C, H, W) -> (B, C)."""
    if x.shape[-1] == 0 or x.shape[-2] == 0:
        raise ValueError("empty spatial dimensions")
    return x.mean(dim=(-2, -1))


def prompt_embed(step: int, prompts: torch.Tensor, h: int, w: int) -> Tensor4:
    """Broadcast the per-step prompt vector to a (1, P, h, w) channel block.

    ``prompts`` is the (T, P) learnable table; only row ``step``
    receives gradient from a given call.
    """
    if step < 0 or step >= prompts.shape[0]:
        raise ValueError(f"step {step} out of range [0, {prompts.shape[0]})")
    return prompts[step].reshape(1, -1, 1, 1).expand(1, prompts.shape[1], h, w)


class ParamSet:
    """Named parameters with per-tensor AdamW moments and a step counter."""

    def __init__(self, params: "OrderedDict[str, torch.Tensor]"):
        self.params = OrderedDict(params)
        self.exp_avg = {n: torch.zeros_like(p) for n, p in self.params.items()}
        self.exp_avg_sq = {n: torch.zeros_like(p) for n, p in self.params.items()}
        self.step_count = 0

    @classmethod
    def from_module(cls, module: torch.nn.Module) -> "ParamSet":
        return cls(OrderedDict(module.named_parameters()))

    def named(self) -> Iterable[tuple[str, torch.Tensor]]:
        return self.params.items()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grads(self) -> list[torch.Tensor]:
        return [p.grad for p in self.params.values() if p.grad is not None]


def adamw_step(pset: ParamSet, lr: float, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8, weight_decay: float = 0.1) -> None:
    """Decoupled-weight-decay AdamW update on every parameter with a gradient.

    Per step: p <- p * (1 - lr*wd); m <- b1*m + (1-b1)*g;
    v <- b2*v + (1-b2)*g^2; p <- p - lr * mhat / (sqrt(vhat) + eps)
    with the usual bias corrections. Raises on NaN gradients so
    divergence surfaces at the step that produced it.
    """
    pset.step_count += 1
    t = pset.step_count
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    with torch.no_grad():
        for name in sorted(pset.params):
            p = pset.params[name]
            g = p.grad
            if g is None:
                continue
            if torch.isnan(g).any():
                raise FloatingPointError(f"NaN gradient in parameter {name!r}")
            m, v = pset.exp_avg[name], pset.exp_avg_sq[name]
            p.mul_(1.0 - lr * weight_decay)
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            denom = (v / bc2).sqrt_().add_(eps)
            p.addcdiv_(m, denom * bc1, value=-lr)


def clip_grad_norm(pset: ParamSet, max_norm: float = 0.1) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``.

    Returns the applied scale (1.0 when already within the bound).
    """
    grads = pset.grads()
    if not grads:
        return 1.0
    total = torch.sqrt(sum(g.pow(2).sum() for g in grads))
    norm = float(total)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    scale = max_norm / norm
    with torch.no_grad():
        for g in grads:
            g.mul_(scale)
    return scale


def lr_schedule(epoch: int, base_lr: float, step_size: int = 11,
                gamma: float = 0.1) -> float:
    """Step decay: base_lr * gamma ** floor(epoch / step_size)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return base_lr * gamma ** (epoch // step_size)


def grad_check(fn: Callable[..., torch.Tensor], inputs: list[torch.Tensor],
               h: float = 1e-6, max_coords: int = 200,
               rng: Rng | None = None) -> float:
    """Central-difference check of ``fn``'s gradients w.r.t. ``inputs``.

    ``fn`` maps the inputs to a scalar. All coordinates are checked when
    the total count is small; otherwise a seeded random subset of
    ``max_coords`` coordinates per tensor. Returns the worst relative
    error max(|fd - an|) / max(|fd|, |an|, 1).
    """
    # fresh contiguous copies: the in-place FD writes below must reach
    # the evaluated tensor (a non-contiguous view would be silently
    # replaced by reshape) and must never touch the caller's storage
    leaves = [x.detach().to(torch.float64).clone().contiguous().requires_grad_(True)
              for x in inputs]
    out = fn(*leaves)
    if out.numel() != 1:
        raise ValueError("fn must return a scalar")
    analytic = torch.autograd.grad(out, leaves, allow_unused=True)
    if rng is None:
        rng = Rng(0)
    worst = 0.0
    for x, an in zip(leaves, analytic):
        an = torch.zeros_like(x) if an is None else an
        n = x.numel()
        coords = range(n) if n <= max_coords else sorted(
            rng.choice(n, size=max_coords, replace=False).tolist())
        flat = x.detach().reshape(-1)
        for i in coords:
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + h
                f_plus = fn(*leaves).item()
                flat[i] = orig - h
                f_minus = fn(*leaves).item()
                flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            a = an.reshape(-1)[i].item()
            err = abs(fd - a) / max(abs(fd), abs(a), 1.0)
            worst = max(worst, err)
    return worst


def init_conv(rng: Rng, out_ch: int, in_ch: int, k: int,
              dtype: torch.dtype = torch.float64, zero: bool = False,
              gain: float = 2.0) -> tuple[torch.nn.Parameter, torch.nn.Parameter]:
    """Seeded He-style init so runs are reproducible without torch RNG."""
    if zero:
        w = np.zeros((out_ch, in_ch, k, k))
    else:
        std = float(np.sqrt(gain / (in_ch * k * k)))
        w = rng.normal(0.0, std, size=(out_ch, in_ch, k, k))
    b = np.zeros(out_ch)
    return (torch.nn.Parameter(torch.as_tensor(w, dtype=dtype)),
            torch.nn.Parameter(torch.as_tensor(b, dtype=dtype)))
