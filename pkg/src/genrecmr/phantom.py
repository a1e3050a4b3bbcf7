"""Synthetic dynamic cardiac-like phantoms across simulated acquisition domains.

A phantom sequence is a layered-ellipse torso with a periodically
contracting ventricle, a smooth random phase map, and domain-dependent
corruptions (contrast, noise, bias field, blur). Domains 0-4 are the
training distributions; domain 5 is held out for generalization tests.
The domain table is a parameterized stand-in for multi-center
variability, not a model of any particular scanner.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .numerics import Rng, conv2d_same, fft2c
from .sampling import SamplingMask, clamp_frame_indices


@dataclass(frozen=True)
class DomainParams:
    contrast_gamma: float
    noise_sigma: float
    bias_strength: float
    blur_sigma: float


# Domains 0-4 train; domain 5 is the unseen distribution. Its noise sigma
# and contrast gamma differ from every training domain.
DOMAIN_TABLE: tuple[DomainParams, ...] = (
    DomainParams(contrast_gamma=1.0, noise_sigma=0.005, bias_strength=0.0, blur_sigma=0.0),
    DomainParams(contrast_gamma=0.8, noise_sigma=0.010, bias_strength=0.20, blur_sigma=0.0),
    DomainParams(contrast_gamma=1.3, noise_sigma=0.005, bias_strength=0.10, blur_sigma=0.5),
    DomainParams(contrast_gamma=0.7, noise_sigma=0.020, bias_strength=0.30, blur_sigma=0.0),
    DomainParams(contrast_gamma=1.1, noise_sigma=0.015, bias_strength=0.0, blur_sigma=0.8),
    DomainParams(contrast_gamma=1.6, noise_sigma=0.030, bias_strength=0.25, blur_sigma=0.3),
)
UNSEEN_DOMAIN_ID = 5


@dataclass
class PhantomSequence:
    frames: torch.Tensor  # (frames, h, w) complex, max magnitude 1
    domain_id: int
    seed: int


@dataclass
class CoilProfileSet:
    maps: torch.Tensor  # (coils, h, w) complex, pixelwise RSS in (0, 1]


def _grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    y = np.linspace(-1.0, 1.0, h)[:, None]
    x = np.linspace(-1.0, 1.0, w)[None, :]
    return y, x


def _ellipse(y, x, cy, cx, ry, rx, angle=0.0) -> np.ndarray:
    ca, sa = np.cos(angle), np.sin(angle)
    yy = (y - cy) * ca + (x - cx) * sa
    xx = -(y - cy) * sa + (x - cx) * ca
    return ((yy / ry) ** 2 + (xx / rx) ** 2 <= 1.0).astype(np.float64)


def _gaussian_kernel(sigma: float) -> torch.Tensor:
    half = max(1, int(np.ceil(3.0 * sigma)))
    t = np.arange(-half, half + 1, dtype=np.float64)
    k1 = np.exp(-(t**2) / (2.0 * sigma**2))
    k2 = np.outer(k1, k1)
    return torch.from_numpy(k2 / k2.sum())


def make_dynamic_phantom(h: int, w: int, frames: int, domain_id: int,
                         rng: Rng) -> PhantomSequence:
    """Build one dynamic complex phantom sequence.

    Geometry (centres, radii, orientations) is jittered per sequence
    from ``rng``; the ventricle radius is modulated sinusoidally over
    the frame axis so consecutive frames always differ.
    """
    if h < 32 or w < 32:
        raise ValueError(f"phantom size must be >= 32, got {h}x{w}")
    if frames < 5:
        raise ValueError(f"need at least 5 frames, got {frames}")
    if domain_id < 0 or domain_id >= len(DOMAIN_TABLE):
        raise ValueError(f"domain_id must be in [0, {len(DOMAIN_TABLE)}), got {domain_id}")
    dom = DOMAIN_TABLE[domain_id]
    y, x = _grid(h, w)

    jit = lambda s: float(rng.normal(0.0, s))
    torso = _ellipse(y, x, jit(0.02), jit(0.02), 0.85 + jit(0.03), 0.75 + jit(0.03))
    lung_l = _ellipse(y, x, -0.15 + jit(0.03), -0.42 + jit(0.03), 0.38, 0.22, jit(0.1))
    lung_r = _ellipse(y, x, -0.15 + jit(0.03), 0.42 + jit(0.03), 0.38, 0.22, jit(0.1))
    spine = _ellipse(y, x, 0.62 + jit(0.02), jit(0.02), 0.14, 0.10)
    vc_y, vc_x = 0.12 + jit(0.03), -0.05 + jit(0.03)
    vr_y, vr_x = 0.26 + jit(0.02), 0.30 + jit(0.02)
    v_angle = jit(0.15)

    # Smooth random phase: low-order polynomial in normalized coordinates.
    c = rng.normal(0.0, 1.0, size=6)
    phase = 0.3 * (c[0] + c[1] * y + c[2] * x + c[3] * y * x
                   + 0.5 * c[4] * y**2 + 0.5 * c[5] * x**2)
    bias = 1.0 + dom.bias_strength * np.sin(1.3 * np.pi * (y + jit(0.2))) \
        * np.cos(1.1 * np.pi * (x + jit(0.2)))

    out = np.empty((frames, h, w), dtype=np.complex128)
    blur_kernel = _gaussian_kernel(dom.blur_sigma) if dom.blur_sigma > 0 else None
    for f in range(frames):
        contraction = 1.0 - 0.28 * (0.5 - 0.5 * np.cos(2.0 * np.pi * (f + 0.25) / frames))
        ring = _ellipse(y, x, vc_y, vc_x, vr_y * contraction, vr_x * contraction, v_angle)
        pool = _ellipse(y, x, vc_y, vc_x, 0.62 * vr_y * contraction,
                        0.62 * vr_x * contraction, v_angle)
        mag = 0.45 * torso - 0.25 * lung_l - 0.25 * lung_r + 0.30 * spine \
            + 0.50 * ring - 0.15 * pool
        mag = np.clip(mag, 0.0, None)
        mag = np.power(mag, dom.contrast_gamma) * bias
        if blur_kernel is not None:
            mag = conv2d_same(torch.from_numpy(mag), blur_kernel).numpy()
        out[f] = mag * np.exp(1j * phase)

    noise = rng.normal(0.0, dom.noise_sigma, size=(frames, h, w)) \
        + 1j * rng.normal(0.0, dom.noise_sigma, size=(frames, h, w))
    out += noise
    peak = np.abs(out).max()
    if peak > 0:
        out /= peak
    return PhantomSequence(torch.from_numpy(out), domain_id, rng.seed)


def simulate_coils(seq: PhantomSequence, ncoils: int,
                   rng: Rng) -> tuple[torch.Tensor, CoilProfileSet]:
    """Multiply the sequence by smooth synthetic coil profiles.

    Profiles are shifted 2-D Gaussians (magnitude floor 1e-3) with a
    low-order polynomial phase, normalized so the pixelwise
    root-sum-of-squares peaks at 1. Returns the per-coil frames
    (frames, coils, h, w) and the profiles.
    """
    if ncoils < 2:
        raise ValueError(f"need at least 2 coils, got {ncoils}")
    _, h, w = seq.frames.shape
    y, x = _grid(h, w)
    width = 0.9
    maps = np.empty((ncoils, h, w), dtype=np.complex128)
    for c in range(ncoils):
        ang = 2.0 * np.pi * c / ncoils + float(rng.normal(0.0, 0.1))
        cy, cx = 0.95 * np.sin(ang), 0.95 * np.cos(ang)
        g = np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2.0 * width**2))
        g = np.maximum(g, 1e-3)
        b = rng.normal(0.0, 0.5, size=3)
        maps[c] = g * np.exp(1j * (b[0] + b[1] * y + b[2] * x))
    rss = np.sqrt((np.abs(maps) ** 2).sum(axis=0))
    maps /= rss.max()
    profiles = CoilProfileSet(torch.from_numpy(maps))
    mc = seq.frames.unsqueeze(1) * profiles.maps.unsqueeze(0)
    return mc, profiles


def to_kspace_dataset(mc_frames: torch.Tensor, mask: SamplingMask,
                      adjacent: int) -> tuple[list[torch.Tensor], list[torch.Tensor]]:
    """Stack adjacent fully sampled k-spaces and their masked versions.

    For every central frame index, ``adjacent`` temporally neighbouring
    frames (clamp-replicated at the sequence edges) are transformed to
    k-space and stacked into kG; k0 applies the corresponding mask
    frames multiplicatively. Returns per-central-frame lists of
    (adjacent, coils, h, w) tensors.
    """
    if adjacent % 2 == 0:
        raise ValueError(f"adjacent length must be odd, got {adjacent}")
    frames = mc_frames.shape[0]
    if adjacent > frames:
        raise ValueError(f"adjacent={adjacent} exceeds frame count {frames}")
    if mask.frames != frames:
        raise ValueError("mask frame count must match the sequence")
    k_full = fft2c(mc_frames)  # (frames, coils, h, w)
    k0_list, kg_list = [], []
    for central in range(frames):
        idx = clamp_frame_indices(central, adjacent, frames)
        kg = k_full[idx].clone()
        m = mask.mask[idx].unsqueeze(1).to(kg.real.dtype)
        k0_list.append(kg * m)
        kg_list.append(kg)
    return k0_list, kg_list
