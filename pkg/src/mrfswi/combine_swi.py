"""Coil combination, SWI phase masks, minimum intensity projection and PGM export."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from mrfswi.image_model import (
    ComplexImage,
    MultiChannelImage,
    RealField,
    write_bytes_atomic,
)

POLARITIES = ("positive", "negative")


def combine_channels(channels: MultiChannelImage) -> ComplexImage:
    """Sum of |I_j| exp(i phi_j) over channels."""
    return ComplexImage(np.asarray(channels).sum(axis=0))


def combine_weighted_baseline(channels: MultiChannelImage, weighting: str = "magnitude2") -> ComplexImage:
    """Weighted-average combination without any phase filtering.

    weighting="magnitude2": sum |I_j|^2 exp(i phi_j) / sum |I_j|
    weighting="magnitude":  sum |I_j| exp(i phi_j) / n_c
    """
    z = np.asarray(channels)
    mag = np.abs(z)
    if weighting == "magnitude2":
        norm = mag.sum(axis=0)
        num = (mag * z).sum(axis=0)
        out = np.divide(num, norm, out=np.zeros_like(num), where=norm > 0)
    elif weighting == "magnitude":
        out = z.mean(axis=0)
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    return ComplexImage(out)


@dataclass(frozen=True, eq=False)
class PhaseMask:
    m: RealField
    polarity: str
    power: int = 4


def phase_mask(hp_phase: RealField | np.ndarray, polarity: str = "positive", power: int = 4) -> PhaseMask:
    """Linear SWI mask of high-pass phase; 1 wherever the polarity condition fails."""
    if polarity not in POLARITIES:
        raise ValueError(f"polarity must be one of {POLARITIES}")
    if power < 1:
        raise ValueError("power must be >= 1")
    phi = np.clip(np.asarray(hp_phase, dtype=np.float64), -np.pi, np.pi)
    if polarity == "positive":
        m = np.where(phi > 0, (np.pi - phi) / np.pi, 1.0)
    else:
        m = np.where(phi < 0, (np.pi + phi) / np.pi, 1.0)
    return PhaseMask(RealField(m), polarity, power)


def apply_mask(mag: RealField | np.ndarray, mask: PhaseMask) -> RealField:
    m = np.asarray(mag, dtype=np.float64)
    if m.shape != mask.m.shape:
        raise ValueError(f"magnitude {m.shape} and mask {mask.m.shape} differ in size")
    return RealField(m * mask.m.data**mask.power)


def min_intensity_projection(slices: Sequence[RealField | np.ndarray], slab: int) -> list[RealField]:
    """Per-pixel minimum over every run of `slab` consecutive slices."""
    if slab < 1:
        raise ValueError("slab must be >= 1")
    if slab > len(slices):
        raise ValueError(f"slab {slab} exceeds the number of slices ({len(slices)})")
    stack = np.stack([np.asarray(s, dtype=np.float64) for s in slices])
    return [RealField(stack[i : i + slab].min(axis=0)) for i in range(len(slices) - slab + 1)]


def encode_pgm(image: RealField | np.ndarray) -> bytes:
    """16-bit binary PGM, min-max scaled to 0..65535, bounds kept in a comment."""
    a = np.asarray(image, dtype=np.float64)
    lo, hi = float(a.min()), float(a.max())
    span = hi - lo
    scaled = np.zeros_like(a) if span == 0 else (a - lo) / span
    pixels = np.rint(scaled * 65535).astype(">u2")
    h, w = a.shape
    header = f"P5\n# min={lo:.9g} max={hi:.9g}\n{w} {h}\n65535\n".encode("ascii")
    return header + pixels.tobytes()


def save_pgm(image: RealField | np.ndarray, path: str | os.PathLike) -> None:
    write_bytes_atomic(path, encode_pgm(image))


def decode_pgm(payload: bytes) -> tuple[np.ndarray, float, float]:
    """Inverse of `encode_pgm`: (uint16 pixels, min, max)."""
    lines = payload.split(b"\n", 4)
    if lines[0] != b"P5":
        raise ValueError("not a binary PGM")
    comment = lines[1].decode("ascii")
    bounds = dict(item.split("=") for item in comment.lstrip("# ").split())
    w, h = (int(v) for v in lines[2].split())
    if int(lines[3]) != 65535:
        raise ValueError("expected maxval 65535")
    pixels = np.frombuffer(lines[4][: 2 * w * h], dtype=">u2").reshape(h, w)
    return pixels, float(bounds["min"]), float(bounds["max"])
