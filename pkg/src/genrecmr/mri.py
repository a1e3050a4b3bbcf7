"""Physics layer: ACS extraction, sensitivity maps, coil operators, data consistency.

All operators work on adjacent multi-coil k-space stacks and are pure
functions of their inputs, so they can sit inside the differentiable
reconstruction loop unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .numerics import check_finite, fft2c, ifft2c
from .sampling import SamplingMask, acs_row_slice

SENS_EPS = 1e-8


@dataclass
class KSpaceVolume:
    """Adjacent multi-coil k-space stack (adjacent, coils, h, w)."""

    data: torch.Tensor
    central_index: int = field(default=-1)

    def __post_init__(self):
        if self.data.ndim != 4:
            raise ValueError(f"expected 4-D (adjacent, coils, h, w), got {self.data.ndim}-D")
        if self.central_index < 0:
            self.central_index = self.data.shape[0] // 2
        if self.central_index != self.data.shape[0] // 2:
            raise ValueError("central_index must be adjacent//2")
        check_finite(self.data, "k-space")

    @property
    def adjacent(self) -> int:
        return self.data.shape[0]

    @property
    def coils(self) -> int:
        return self.data.shape[1]

    @property
    def central(self) -> torch.Tensor:
        return self.data[self.central_index]


@dataclass
class SensitivityMaps:
    """Pixelwise-normalized coil maps and their conjugates."""

    s: torch.Tensor       # (coils, h, w) complex
    s_conj: torch.Tensor  # conj(s), stored for the combination path

    @classmethod
    def from_maps(cls, s: torch.Tensor) -> "SensitivityMaps":
        return cls(s=s, s_conj=s.conj())

    @property
    def coils(self) -> int:
        return self.s.shape[0]


def extract_acs(k: KSpaceVolume, n_lines: int,
                mask: SamplingMask | None = None) -> KSpaceVolume:
    """Zero-filled copy keeping only the central ``n_lines`` phase-encode rows.

    When a mask is supplied, its ACS band is verified to be fully
    sampled; otherwise each retained row of the central frame must carry
    signal, which catches masks that skipped the calibration region.
    """
    h = k.data.shape[2]
    if n_lines > h:
        raise ValueError(f"n_lines={n_lines} exceeds height {h}")
    rows = acs_row_slice(h, n_lines)
    if mask is not None:
        band = mask.mask[:, rows, :]
        if not (band == 1).all():
            raise ValueError("ACS band is not fully sampled by the supplied mask")
    else:
        band_mag = k.central[:, rows, :].abs().amax(dim=(0, 2))
        if (band_mag == 0).any():
            raise ValueError("ACS band contains empty rows; mask/config mismatch?")
    out = torch.zeros_like(k.data)
    out[:, :, rows, :] = k.data[:, :, rows, :]
    return KSpaceVolume(out, k.central_index)


def estimate_sensitivities(acs: KSpaceVolume,
                           refiner: torch.nn.Module | None = None) -> SensitivityMaps:
    """Low-resolution sensitivity estimate from the central ACS frame.

    Per-coil inverse FFT divided by the pixelwise root-sum-of-squares
    (floored at 1e-8). The optional refiner predicts a residual on the
    stacked (real, imag) channels; maps are re-normalized afterwards so
    sum_c |s_c|^2 = 1 holds wherever there is signal.
    """
    imgs = ifft2c(acs.central)  # (coils, h, w)
    if (imgs.abs().max() == 0):
        raise ValueError("all-zero ACS data")
    s = _rss_normalize(imgs)
    if refiner is not None:
        first = next(refiner.parameters(), None)
        net_dtype = first.dtype if first is not None else s.real.dtype
        stacked = torch.cat([s.real, s.imag], dim=0).unsqueeze(0).to(net_dtype)
        delta = refiner(stacked).squeeze(0)
        ncoils = s.shape[0]
        delta_c = torch.complex(delta[:ncoils], delta[ncoils:]).to(s.dtype)
        s = _rss_normalize(s + delta_c)
    return SensitivityMaps.from_maps(s)


def _rss_normalize(maps: torch.Tensor) -> torch.Tensor:
    rss = maps.abs().pow(2).sum(dim=0).sqrt()
    return maps / rss.clamp_min(SENS_EPS)


def coil_combine(img_mc: torch.Tensor, sens: SensitivityMaps) -> torch.Tensor:
    """Conjugate-weighted coil combination: sum_c conj(s_c) * img_c.

    The coil axis is the third-from-last dimension, so this works on
    (coils, h, w) and (adjacent, coils, h, w) alike.
    """
    if img_mc.shape[-3] != sens.coils:
        raise ValueError(f"coil count mismatch: {img_mc.shape[-3]} vs {sens.coils}")
    return (sens.s_conj * img_mc).sum(dim=-3)


def coil_expand(img: torch.Tensor, sens: SensitivityMaps,
                adjacent: int | None = None) -> torch.Tensor:
    """Per-coil expansion: img * s_c, optionally broadcast to an adjacent stack."""
    if img.shape[-2:] != sens.s.shape[-2:]:
        raise ValueError(f"spatial shape mismatch: {tuple(img.shape[-2:])} vs "
                         f"{tuple(sens.s.shape[-2:])}")
    out = img.unsqueeze(-3) * sens.s
    if adjacent is not None and out.ndim == 3:
        out = out.unsqueeze(0).expand(adjacent, *out.shape)
    return out


def data_consistency(k_t: torch.Tensor, k_0: torch.Tensor, m: torch.Tensor,
                     eta: torch.Tensor | float, g_k: torch.Tensor) -> torch.Tensor:
    """Learnable-step consistency update: k_t - eta * m * (k_t - k_0) + g_k."""
    if k_t.shape != k_0.shape or g_k.shape != k_t.shape:
        raise ValueError("k-space shapes must match")
    if isinstance(eta, float) and not torch.isfinite(torch.tensor(eta)):
        raise ValueError("eta must be finite")
    return k_t - eta * (m * (k_t - k_0)) + g_k


def forward_operator(img: torch.Tensor, sens: SensitivityMaps,
                     mask_vol: torch.Tensor, adjacent: int) -> torch.Tensor:
    """Masked SENSE forward model A(x) = m * FFT(expand(x))."""
    return mask_vol * fft2c(coil_expand(img, sens, adjacent))


def adjoint_operator(k: torch.Tensor, sens: SensitivityMaps,
                     mask_vol: torch.Tensor) -> torch.Tensor:
    """Adjoint A^H(y) = combine(IFFT(m * y)), summed over adjacent frames."""
    img = coil_combine(ifft2c(mask_vol * k), sens)
    return img.sum(dim=0) if img.ndim == 3 else img
