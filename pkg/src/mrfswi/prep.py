"""Echo centering, neighbourhood high-pass filtering and clique phase differences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from mrfswi.image_model import ComplexImage, RealField

# Canonical second-order neighbourhood, row-major, centre excluded.
OFFSETS: tuple[tuple[int, int], ...] = tuple(
    (p, q) for p in (-1, 0, 1) for q in (-1, 0, 1) if (p, q) != (0, 0)
)
N_NEIGHBORS = len(OFFSETS)


@dataclass(frozen=True, eq=False)
class CliqueField:
    """Clique phase differences, `diffs[k] = phi(r) - phi(r + OFFSETS[k])`.

    `diffs` has shape (8, height, width); borders use replicate padding.
    """

    diffs: np.ndarray

    @property
    def height(self) -> int:
        return self.diffs.shape[1]

    @property
    def width(self) -> int:
        return self.diffs.shape[2]

    def values(self) -> np.ndarray:
        """All clique differences as a flat array."""
        return self.diffs.ravel()


def center_echo(kspace: ComplexImage | np.ndarray) -> tuple[ComplexImage, tuple[int, int]]:
    """Circularly shift k-space so the peak-magnitude sample lands on (h//2, w//2).

    Ties go to the smallest (row, col). Returns the shifted data and the applied shift.
    """
    k = np.asarray(kspace, dtype=np.complex128)
    h, w = k.shape
    peak = np.unravel_index(np.argmax(np.abs(k)), k.shape)
    shift = (h // 2 - int(peak[0]), w // 2 - int(peak[1]))
    return ComplexImage(np.roll(k, shift, axis=(0, 1))), shift


def _neighbor_mean(phi: np.ndarray, radius: int) -> np.ndarray:
    size = 2 * radius + 1
    n = size * size
    box_sum = ndimage.uniform_filter(phi, size=size, mode="nearest") * n
    return (box_sum - phi) / (n - 1)


def hp_filter(
    phase: RealField | np.ndarray,
    kernel_radius: int = 1,
    variable: bool = False,
    center: tuple[float, float] | None = None,
) -> RealField:
    """Subtract the mean of the surrounding neighbours (centre excluded).

    With `variable=True` the neighbourhood radius grows linearly from 1 at
    `center` (default: image centre) to `kernel_radius` at the farthest corner.
    """
    phi = np.asarray(phase, dtype=np.float64)
    if kernel_radius < 1:
        raise ValueError("kernel_radius must be >= 1")
    if not variable or kernel_radius == 1:
        return RealField(phi - _neighbor_mean(phi, kernel_radius))

    h, w = phi.shape
    cy, cx = center if center is not None else ((h - 1) / 2.0, (w - 1) / 2.0)
    yy, xx = np.mgrid[0:h, 0:w]
    dist = np.hypot(yy - cy, xx - cx)
    corners = np.hypot(np.array([0, 0, h - 1, h - 1]) - cy, np.array([0, w - 1, 0, w - 1]) - cx)
    far = corners.max()
    frac = dist / far if far > 0 else np.zeros_like(dist)
    radius = np.clip(np.rint(1 + frac * (kernel_radius - 1)), 1, kernel_radius).astype(int)
    out = np.empty_like(phi)
    for r in np.unique(radius):
        sel = radius == r
        out[sel] = (phi - _neighbor_mean(phi, int(r)))[sel]
    return RealField(out)


def clique_diffs(phase: RealField | np.ndarray) -> CliqueField:
    """Differences between each site and its 8 neighbours (replicate-edge)."""
    phi = np.asarray(phase, dtype=np.float64)
    h, w = phi.shape
    padded = np.pad(phi, 1, mode="edge")
    diffs = np.empty((N_NEIGHBORS, h, w))
    for k, (p, q) in enumerate(OFFSETS):
        diffs[k] = phi - padded[1 + p : 1 + p + h, 1 + q : 1 + q + w]
    return CliqueField(diffs)


def correct_channel_phase(channel: np.ndarray, smoothing: float = 6.0) -> np.ndarray:
    """Remove the slowly varying phase of one complex channel image.

    Divides out the phase of a Gaussian low-pass copy of the complex data
    (`smoothing` is the kernel sigma in pixels). Coil sensitivity phase and
    background field phase go; thin structures survive.
    """
    z = np.asarray(channel, dtype=np.complex128)
    low = ndimage.gaussian_filter(z.real, smoothing, mode="nearest") + 1j * ndimage.gaussian_filter(
        z.imag, smoothing, mode="nearest"
    )
    ref = np.exp(1j * np.angle(low))
    return z * np.conj(ref)
