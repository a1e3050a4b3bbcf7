"""Unrolled reconstruction generator and the conditional patch discriminator.

The generator alternates small two-scale reconstructor networks with
data-consistency updates for a configurable number of stages, carrying a
residual feature stream across stages. Each stage owns a learnable
prompt vector (appended as constant input channels), a learnable
consistency step size, and a 1x1 head that turns the feature stream into
a complex image correction; the correction enters k-space through the
coil-expansion forward model. Sensitivity maps are estimated once per
sample from the calibration region, optionally refined by a small
trainable network whose parameters train jointly with the generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .diffnet import conv2d, global_avg_pool, init_conv, leaky_relu, prompt_embed
from .mri import (KSpaceVolume, SensitivityMaps, coil_combine, coil_expand,
                  data_consistency, estimate_sensitivities, extract_acs)
from .numerics import Rng, fft2c, ifft2c


@dataclass
class GeneratorConfig:
    """Shape of the unrolled generator; defaults are the desk-scale setup."""

    unrolls: int = 4
    base_channels: int = 8
    prompt_channels: int = 4
    adjacent: int = 5
    acs_lines: int = 16
    coils: int = 4
    residual: bool = True
    sme_refine: bool = True
    dtype: torch.dtype = torch.float64

    def __post_init__(self):
        if self.unrolls < 1:
            raise ValueError("unrolls must be >= 1")
        if self.adjacent % 2 == 0 or self.adjacent < 1:
            raise ValueError("adjacent must be odd and positive")


class Conv(torch.nn.Module):
    """3x3 (or 1x1) convolution with seeded init and same padding."""

    def __init__(self, rng: Rng, in_ch: int, out_ch: int, k: int = 3,
                 stride: int = 1, zero: bool = False,
                 dtype: torch.dtype = torch.float64):
        super().__init__()
        self.weight, self.bias = init_conv(rng, out_ch, in_ch, k, dtype=dtype, zero=zero)
        self.stride = stride

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride)


class APUnet(torch.nn.Module):
    """Two-scale encoder-decoder producing a residual feature map.

    The 1x1 ``head`` (zero-initialized, so a fresh model starts at the
    pure data-consistency solution) is applied by the caller *after* the
    cross-stage residual addition.
    """

    def __init__(self, config: GeneratorConfig, rng: Rng):
        super().__init__()
        in_ch = 2 * config.adjacent + config.prompt_channels
        b = config.base_channels
        dt = config.dtype
        self.enc1a = Conv(rng.split("enc1a"), in_ch, b, dtype=dt)
        self.enc1b = Conv(rng.split("enc1b"), b, b, dtype=dt)
        self.down = Conv(rng.split("down"), b, 2 * b, stride=2, dtype=dt)
        self.enc2 = Conv(rng.split("enc2"), 2 * b, 2 * b, dtype=dt)
        self.up = Conv(rng.split("up"), 2 * b, b, dtype=dt)
        self.dec = Conv(rng.split("dec"), 2 * b, b, dtype=dt)
        self.head = Conv(rng.split("head"), b, 2, k=1, zero=True, dtype=dt)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        e1 = leaky_relu(self.enc1b(leaky_relu(self.enc1a(x))))
        e2 = leaky_relu(self.enc2(leaky_relu(self.down(e1))))
        u = F.interpolate(e2, scale_factor=2, mode="nearest")
        u = u[..., : e1.shape[-2], : e1.shape[-1]]
        u = leaky_relu(self.up(u))
        return leaky_relu(self.dec(torch.cat([u, e1], dim=1)))


class SmeRefiner(torch.nn.Module):
    """Residual refiner for sensitivity maps on stacked (real, imag) channels."""

    def __init__(self, coils: int, rng: Rng, dtype: torch.dtype, hidden: int = 8):
        super().__init__()
        self.c1 = Conv(rng.split("c1"), 2 * coils, hidden, dtype=dtype)
        self.c2 = Conv(rng.split("c2"), hidden, 2 * coils, zero=True, dtype=dtype)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.c2(leaky_relu(self.c1(x)))


class Generator(torch.nn.Module):
    """Stage networks + per-stage step sizes, prompts, and map refiner."""

    def __init__(self, config: GeneratorConfig, rng: Rng):
        super().__init__()
        self.config = config
        t, p, dt = config.unrolls, config.prompt_channels, config.dtype
        self.stages = torch.nn.ModuleList(
            [APUnet(config, rng.split("stage", i)) for i in range(t)])
        self.sme = SmeRefiner(config.coils, rng.split("sme"), dt) if config.sme_refine else None
        self.eta = torch.nn.Parameter(torch.ones(t, dtype=dt))
        prompts = 0.1 * rng.split("prompts").normal(size=(t, p))
        self.prompts = torch.nn.Parameter(torch.as_tensor(prompts, dtype=dt))


@dataclass
class UnrollTrace:
    """Everything the training loop needs from one generator pass."""

    k_steps: list[torch.Tensor] = field(default_factory=list)   # central frame per stage
    z_steps: list[torch.Tensor] = field(default_factory=list)   # pooled feature vectors
    g_steps: list[torch.Tensor] = field(default_factory=list)   # k-space corrections
    final_image: torch.Tensor | None = None
    sens: SensitivityMaps | None = None
    k_final: torch.Tensor | None = None                          # full final volume


def _as_volume_tensor(k0) -> torch.Tensor:
    data = k0.data if isinstance(k0, KSpaceVolume) else k0
    if data.ndim != 4:
        raise ValueError(f"expected (adjacent, coils, h, w) k-space, got {data.ndim}-D")
    return data


def generator_forward(k0, mask_vol: torch.Tensor, model: Generator) -> UnrollTrace:
    """Run the unrolled reconstruction on one masked adjacent stack.

    ``mask_vol`` is (adjacent, h, w) or (adjacent, 1, h, w) and must be
    the pattern that produced ``k0``. Records per-stage central k-space,
    pooled features, and corrections; the final image is the
    coil-combined inverse FFT of the last stage's central frame.
    """
    cfg = model.config
    k0d = _as_volume_tensor(k0)
    adjacent, coils, h, w = k0d.shape
    if adjacent != cfg.adjacent or coils != cfg.coils:
        raise ValueError(f"volume shape {tuple(k0d.shape)} does not match config "
                         f"(adjacent={cfg.adjacent}, coils={cfg.coils})")
    if mask_vol.ndim == 3:
        mask_vol = mask_vol.unsqueeze(1)
    if mask_vol.shape[-2:] != (h, w) or mask_vol.shape[0] != adjacent:
        raise ValueError("mask volume does not match the k-space stack")
    mask_vol = mask_vol.to(k0d.real.dtype)

    acs = extract_acs(KSpaceVolume(k0d.detach()), cfg.acs_lines)
    sens = estimate_sensitivities(acs, refiner=model.sme)

    trace = UnrollTrace(sens=sens)
    central = adjacent // 2
    k_t = k0d
    feat = None
    for t in range(cfg.unrolls):
        i_sc = coil_combine(ifft2c(k_t), sens)                      # (adjacent, h, w)
        x = torch.cat([i_sc.real, i_sc.imag], dim=0).unsqueeze(0)   # (1, 2A, h, w)
        x = torch.cat([x, prompt_embed(t, model.prompts, h, w)], dim=1)
        f_hat = model.stages[t](x)
        feat = f_hat + feat if (cfg.residual and feat is not None) else f_hat
        trace.z_steps.append(global_avg_pool(feat)[0])
        delta2 = model.stages[t].head(feat)[0]                      # (2, h, w)
        delta = torch.complex(delta2[0], delta2[1])
        g_k = fft2c(coil_expand(delta, sens, adjacent=adjacent))
        k_t = data_consistency(k_t, k0d, mask_vol, model.eta[t], g_k)
        trace.g_steps.append(g_k)
        trace.k_steps.append(k_t[central])
    trace.k_final = k_t
    trace.final_image = coil_combine(ifft2c(k_t[central]), sens)
    return trace


class PatchDiscriminator(torch.nn.Module):
    """Four stride-2 conv layers over (candidate, condition) magnitude pairs."""

    def __init__(self, rng: Rng, dtype: torch.dtype = torch.float64):
        super().__init__()
        chans = (2, 16, 32, 64, 64)
        self.layers = torch.nn.ModuleList(
            [Conv(rng.split("d", i), chans[i], chans[i + 1], stride=2, dtype=dtype)
             for i in range(4)])
        self.final = Conv(rng.split("final"), 64, 1, k=1, dtype=dtype)


def discriminator_forward(candidate: torch.Tensor, condition: torch.Tensor,
                          model: PatchDiscriminator) -> torch.Tensor:
    """Patch logit map for a (candidate, condition) magnitude image pair."""
    if candidate.shape != condition.shape:
        raise ValueError(f"shape mismatch {tuple(candidate.shape)} vs {tuple(condition.shape)}")
    if candidate.ndim != 2:
        raise ValueError("expected 2-D magnitude images")
    x = torch.stack([candidate, condition], dim=0).unsqueeze(0)
    for layer in model.layers:
        x = leaky_relu(layer(x), slope=0.2)
    return model.final(x)[0, 0]
