"""k-t undersampling masks: uniform, Gaussian-density, and pseudo-radial.

Masks are binary (frames, height, width) tensors over phase-encode rows
(height) with the readout direction (width) always fully sampled for the
Cartesian trajectories. A centred auto-calibration (ACS) band of fully
sampled rows is forced on in every frame; ACS lines are additive on top
of the nominal acceleration budget, so :func:`effective_acceleration`
reports the true sampled ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch

from .numerics import Rng

GOLDEN_ANGLE_DEG = 111.246
DEFAULT_ACS_LINES = 16


class Trajectory(str, Enum):
    UNIFORM = "uniform"
    GAUSSIAN = "gaussian"
    RADIAL = "radial"


@dataclass
class SamplingMask:
    """Binary k-t mask plus the metadata needed to interpret it."""

    mask: torch.Tensor  # (frames, h, w) float, entries in {0, 1}
    acs_lines: int
    accel: int
    trajectory: Trajectory

    def __post_init__(self):
        self.trajectory = Trajectory(self.trajectory)

    @property
    def frames(self) -> int:
        return self.mask.shape[0]

    def acs_rows(self) -> slice:
        return acs_row_slice(self.mask.shape[1], self.acs_lines)

    def volume(self, central: int, adjacent: int) -> torch.Tensor:
        """Mask frames for an adjacent stack centred at ``central``.

        Temporal edges are clamp-replicated, matching the k-space
        stacking convention. Returns (adjacent, 1, h, w) for broadcast
        over coils.
        """
        idx = clamp_frame_indices(central, adjacent, self.frames)
        return self.mask[idx].unsqueeze(1)

    def validate(self) -> None:
        m = self.mask
        if not torch.logical_or(m == 0, m == 1).all():
            raise ValueError("mask entries must be 0 or 1")
        rows = self.acs_rows()
        if self.acs_lines > 0 and not (m[:, rows, :] == 1).all():
            raise ValueError("ACS band must be fully sampled in every frame")
        if (m.sum(dim=(1, 2)) == 0).any():
            raise ValueError("every frame needs at least one sample")


def clamp_frame_indices(central: int, adjacent: int, frames: int) -> list[int]:
    half = adjacent // 2
    return [min(max(central + d, 0), frames - 1) for d in range(-half, half + 1)]


def acs_row_slice(h: int, acs_lines: int) -> slice:
    start = h // 2 - acs_lines // 2
    return slice(start, start + acs_lines)


def gaussian_line_count(h: int, accel: int) -> int:
    return int(round(h / accel))


def radial_spoke_count(h: int, accel: int) -> int:
    return int(round(0.5 * math.pi * h / accel))


def _check_args(h: int, w: int, frames: int, accel: int, acs_lines: int) -> None:
    if accel < 1:
        raise ValueError(f"acceleration must be >= 1, got {accel}")
    if acs_lines > h:
        raise ValueError(f"acs_lines={acs_lines} exceeds height {h}")
    if frames < 1 or h < 1 or w < 1:
        raise ValueError("mask dimensions must be positive")


def uniform_kt_mask(h: int, w: int, frames: int, accel: int,
                    acs_lines: int = DEFAULT_ACS_LINES, rng: Rng | None = None,
                    static: bool = False) -> SamplingMask:
    """Equispaced rows, every ``accel``-th line, offset by frame index.

    The per-frame offset (frame index mod accel) interleaves the sampled
    lines over time; ``static=True`` reuses offset 0 for all frames.
    """
    _check_args(h, w, frames, accel, acs_lines)
    m = np.zeros((frames, h, w), dtype=np.float32)
    rows = np.arange(h)
    for f in range(frames):
        offset = 0 if static else f % accel
        m[f, rows % accel == offset, :] = 1.0
    m[:, acs_row_slice(h, acs_lines), :] = 1.0
    out = SamplingMask(torch.from_numpy(m), acs_lines, accel, Trajectory.UNIFORM)
    out.validate()
    return out


def gaussian_kt_mask(h: int, w: int, frames: int, accel: int,
                     acs_lines: int = DEFAULT_ACS_LINES, rng: Rng | None = None,
                     static: bool = False) -> SamplingMask:
    """Random rows with a centre-weighted Gaussian density (sigma = h/6).

    Per frame, ``round(h/accel)`` distinct rows are drawn without
    replacement from outside the ACS band (the ACS band is additive and
    always on), so the per-frame line count is exactly
    ``acs_lines + min(round(h/accel), h - acs_lines)``.
    """
    _check_args(h, w, frames, accel, acs_lines)
    if rng is None:
        rng = Rng(0)
    sigma = h / 6.0
    rows = np.arange(h)
    acs = acs_row_slice(h, acs_lines)
    outside = rows[(rows < acs.start) | (rows >= acs.stop)]
    weights = np.exp(-((outside - h / 2.0) ** 2) / (2.0 * sigma**2))
    n_draw = min(gaussian_line_count(h, accel), outside.size)
    m = np.zeros((frames, h, w), dtype=np.float32)
    drawn0 = None
    for f in range(frames):
        if static and drawn0 is not None:
            drawn = drawn0
        else:
            p = weights / weights.sum()
            drawn = rng.choice(outside, size=n_draw, replace=False, p=p)
            if drawn0 is None:
                drawn0 = drawn
        m[f, drawn, :] = 1.0
    m[:, acs, :] = 1.0
    out = SamplingMask(torch.from_numpy(m), acs_lines, accel, Trajectory.GAUSSIAN)
    out.validate()
    return out


def radial_kt_mask(h: int, w: int, frames: int, accel: int,
                   rng: Rng | None = None, acs_lines: int = DEFAULT_ACS_LINES,
                   static: bool = False) -> SamplingMask:
    """Pseudo-radial spokes rasterized on the Cartesian grid.

    ``round(pi/2 * h / accel)`` full-diameter spokes per frame, frame f
    rotated by f times the golden angle (111.246 deg). Spokes are
    rasterized from the centre outward and mirrored, so the spoke
    pattern is symmetric under 180-degree rotation about the centre
    pixel. The ACS band is forced on afterwards (pass ``acs_lines=0``
    for the raw spoke pattern).
    """
    _check_args(h, w, frames, accel, acs_lines)
    n_spokes = max(1, radial_spoke_count(h, accel))
    ci, cj = h // 2, w // 2
    radius = math.hypot(max(ci, h - ci), max(cj, w - cj))
    steps = np.arange(0.0, radius + 0.5, 0.5)
    m = np.zeros((frames, h, w), dtype=np.float32)
    for f in range(frames):
        rot = 0.0 if static else math.radians(f * GOLDEN_ANGLE_DEG)
        for s in range(n_spokes):
            theta = rot + s * math.pi / n_spokes
            di = np.floor(steps * math.sin(theta) + 0.5).astype(int)
            dj = np.floor(steps * math.cos(theta) + 0.5).astype(int)
            for sign in (1, -1):
                ii = ci + sign * di
                jj = cj + sign * dj
                keep = (ii >= 0) & (ii < h) & (jj >= 0) & (jj < w)
                m[f, ii[keep], jj[keep]] = 1.0
    if acs_lines > 0:
        m[:, acs_row_slice(h, acs_lines), :] = 1.0
    out = SamplingMask(torch.from_numpy(m), acs_lines, accel, Trajectory.RADIAL)
    out.validate()
    return out


def make_mask(trajectory: Trajectory | str, h: int, w: int, frames: int, accel: int,
              acs_lines: int = DEFAULT_ACS_LINES, rng: Rng | None = None,
              static: bool = False) -> SamplingMask:
    traj = Trajectory(trajectory)
    if traj is Trajectory.UNIFORM:
        return uniform_kt_mask(h, w, frames, accel, acs_lines, rng, static)
    if traj is Trajectory.GAUSSIAN:
        return gaussian_kt_mask(h, w, frames, accel, acs_lines, rng, static)
    return radial_kt_mask(h, w, frames, accel, rng, acs_lines, static)


def effective_acceleration(m: SamplingMask) -> float:
    """Total entries over sampled entries across all frames."""
    sampled = float(m.mask.sum())
    if sampled == 0:
        raise ValueError("mask has no sampled entries")
    return float(m.mask.numel()) / sampled
