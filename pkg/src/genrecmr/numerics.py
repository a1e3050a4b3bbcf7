"""Deterministic tensor primitives shared by the whole pipeline.

Centered orthonormal FFT pair, same-size 2-D convolution, and a
counter-based random stream that can be split hierarchically so every
consumer (dataset generation, mask drawing, weight init, training) owns
an independent, replayable sequence.
"""

from __future__ import annotations

import zlib

import numpy as np
import torch

_SPATIAL = (-2, -1)


def _key_int(k: "int | str") -> int:
    """Map a split-key element to a stable non-negative integer."""
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    return int(k)


class NonFiniteError(ValueError):
    """Raised when an operation receives or would produce NaN/Inf values."""


def check_finite(x: torch.Tensor, what: str = "input") -> torch.Tensor:
    if not bool(torch.isfinite(x.detach()).all()):
        raise NonFiniteError(f"{what} contains NaN or Inf entries")
    return x


def fft2c(img: torch.Tensor) -> torch.Tensor:
    """Centered orthonormal 2-D FFT over the last two dimensions.

    DC ends up at ``(H//2, W//2)``; unitary scaling (``1/sqrt(H*W)`` each
    way) keeps k-space and image norms equal.
    """
    if img.shape[-2] < 2 or img.shape[-1] < 2:
        raise ValueError(f"spatial dims must be >= 2, got {tuple(img.shape[-2:])}")
    check_finite(img, "fft2c input")
    shifted = torch.fft.ifftshift(img, dim=_SPATIAL)
    k = torch.fft.fft2(shifted, dim=_SPATIAL, norm="ortho")
    return torch.fft.fftshift(k, dim=_SPATIAL)


def ifft2c(k: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`fft2c` (adjoint of the unitary transform)."""
    if k.shape[-2] < 2 or k.shape[-1] < 2:
        raise ValueError(f"spatial dims must be >= 2, got {tuple(k.shape[-2:])}")
    check_finite(k, "ifft2c input")
    shifted = torch.fft.ifftshift(k, dim=_SPATIAL)
    img = torch.fft.ifft2(shifted, dim=_SPATIAL, norm="ortho")
    return torch.fft.fftshift(img, dim=_SPATIAL)


def conv2d_same(img: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    """Same-size 2-D correlation of a real image with an odd-sized kernel.

    Borders are zero padded. Correlation orientation (no kernel flip),
    matching the convention used everywhere else in the network stack;
    symmetric kernels are unaffected.
    """
    if kernel.ndim != 2 or kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
        raise ValueError(f"kernel sides must be odd, got {tuple(kernel.shape)}")
    if img.is_complex() or kernel.is_complex():
        raise ValueError("conv2d_same operates on real arrays")
    lead = img.shape[:-2]
    x = img.reshape(-1, 1, *img.shape[-2:])
    w = kernel.to(img.dtype).reshape(1, 1, *kernel.shape)
    pad = (kernel.shape[0] // 2, kernel.shape[1] // 2)
    out = torch.nn.functional.conv2d(x, w, padding=pad)
    return out.reshape(*lead, *img.shape[-2:])


class Rng:
    """Counter-based random stream (Philox) with hierarchical splitting.

    The same ``(seed, key)`` pair always yields the same sequence, and
    ``split`` derives statistically independent child streams without
    consuming state from the parent, so per-sample / per-iteration
    randomness can be re-derived from scratch when resuming a run.
    """

    def __init__(self, seed: int, key: tuple = ()):
        self.seed = int(seed)
        self.key = tuple(_key_int(k) for k in key)
        ss = np.random.SeedSequence([self.seed, *self.key])
        self.gen = np.random.Generator(np.random.Philox(ss))

    def split(self, *key: "int | str") -> "Rng":
        """Derive an independent child stream tagged by ``key``.

        String tags are folded to integers with CRC-32, so call sites can
        use readable purpose labels ("mask", "weights", ...) while the
        derivation stays platform-stable.
        """
        return Rng(self.seed, self.key + tuple(_key_int(k) for k in key))

    # Thin passthroughs for the draws the pipeline needs.
    def normal(self, loc=0.0, scale=1.0, size=None) -> np.ndarray:
        return self.gen.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        return self.gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self.gen.integers(low, high, size)

    def choice(self, a, size=None, replace=True, p=None) -> np.ndarray:
        return self.gen.choice(a, size=size, replace=replace, p=p)

    def permutation(self, x) -> np.ndarray:
        return self.gen.permutation(x)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, key={self.key})"
