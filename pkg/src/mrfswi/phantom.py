"""Synthetic multi-coil SWI data: vessel phantom, Biot-Savart loop coils, noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from mrfswi.image_model import ComplexImage, MultiChannelImage, quantize_float32

N_SEGMENTS = 64


@dataclass(frozen=True)
class CoilGeometry:
    """Loop coils on a ring around the field of view (all lengths in pixels).

    Each loop's axis lies in the image plane and points at the FOV centre; the
    loop centre sits `standoff` pixels above the image plane.
    """

    n_coils: int = 8
    loop_radius: float = 96.0
    ring_radius: float = 135.0
    standoff: float = 48.0

    def __post_init__(self):
        if self.n_coils < 1:
            raise ValueError("n_coils must be >= 1")
        if min(self.loop_radius, self.ring_radius, self.standoff) <= 0:
            raise ValueError("loop_radius, ring_radius and standoff must be > 0")

    @classmethod
    def for_size(cls, size: int, n_coils: int = 8) -> "CoilGeometry":
        """Default geometry scaled to a square FOV of `size` pixels."""
        return cls(
            n_coils=n_coils,
            loop_radius=0.75 * size,
            ring_radius=1.05 * size,
            standoff=0.375 * size,
        )


@dataclass(frozen=True)
class PhantomSpec:
    height: int = 128
    width: int = 128
    n_vessels: int = 12
    vessel_phase: float = 0.5
    edge_phase: float = -0.25
    background_poly_order: int = 2
    seed: int = 0
    tissue_magnitude: float = 0.9
    vessel_magnitude: float = 0.45
    background_scale: float = 0.02
    # per-vessel contrast factors are drawn uniformly from [min_contrast, 1]
    min_contrast: float = 0.25

    def __post_init__(self):
        if self.height < 3 or self.width < 3:
            raise ValueError("phantom must be at least 3x3 pixels")
        if self.n_vessels < 0:
            raise ValueError("n_vessels must be >= 0")
        if not abs(self.vessel_phase) < np.pi:
            raise ValueError("|vessel_phase| must be < pi")
        if self.n_vessels > 0 and self.vessel_phase * self.edge_phase >= 0:
            raise ValueError("vessel_phase and edge_phase must have opposite signs")
        if self.background_poly_order < 0:
            raise ValueError("background_poly_order must be >= 0")
        if not 0 <= self.vessel_magnitude <= 1 or not 0 < self.tissue_magnitude <= 1:
            raise ValueError("magnitudes must lie in [0, 1]")
        if not 0 < self.min_contrast <= 1:
            raise ValueError("min_contrast must lie in (0, 1]")


def _pixel_coords(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    return xx - (width - 1) / 2.0, yy - (height - 1) / 2.0


def loop_field(
    xx: np.ndarray,
    yy: np.ndarray,
    center: tuple[float, float],
    axis_angle: float,
    loop_radius: float,
    standoff: float,
    n_segments: int = N_SEGMENTS,
) -> np.ndarray:
    """Biot-Savart field (unit current, constants dropped) of a polygonal loop.

    Evaluated at the in-plane points (xx, yy, 0); returns shape xx.shape + (3,).
    """
    t = np.linspace(0.0, 2.0 * np.pi, n_segments + 1)
    u = np.array([-np.sin(axis_angle), np.cos(axis_angle), 0.0])
    v = np.array([0.0, 0.0, 1.0])
    c = np.array([center[0], center[1], standoff])
    wire = c + loop_radius * (np.cos(t)[:, None] * u + np.sin(t)[:, None] * v)
    dl = np.diff(wire, axis=0)
    mid = 0.5 * (wire[1:] + wire[:-1])

    pts = np.stack([xx, yy, np.zeros_like(xx)], axis=-1)
    field = np.zeros(pts.shape)
    for seg_mid, seg_dl in zip(mid, dl):
        r = pts - seg_mid
        dist3 = np.linalg.norm(r, axis=-1, keepdims=True) ** 3
        field += np.cross(seg_dl, r) / dist3
    return field


def coil_sensitivities(geom: CoilGeometry, height: int, width: int) -> MultiChannelImage:
    """Complex receive sensitivities of `geom.n_coils` loops equally spaced on a ring.

    Magnitude is the transverse (in-plane) field strength; phase is the in-plane
    field angle measured from the coil's own axis, so every channel is the first
    one rotated about the FOV centre. Normalised to a global peak magnitude of 1.
    """
    xx, yy = _pixel_coords(height, width)
    maps = []
    for k in range(geom.n_coils):
        theta = 2.0 * np.pi * k / geom.n_coils
        center = (geom.ring_radius * np.cos(theta), geom.ring_radius * np.sin(theta))
        # axis points from the coil toward the FOV centre
        axis = theta + np.pi
        b = loop_field(xx, yy, center, axis, geom.loop_radius, geom.standoff)
        maps.append((b[..., 0] + 1j * b[..., 1]) * np.exp(-1j * axis))
    sens = np.stack(maps)
    sens /= np.abs(sens).max()
    return MultiChannelImage(sens)


def _background_phase(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    xx, yy = _pixel_coords(spec.height, spec.width)
    xn = xx / max(spec.width / 2.0, 1.0)
    yn = yy / max(spec.height / 2.0, 1.0)
    phase = np.zeros((spec.height, spec.width))
    if spec.background_poly_order == 0:
        return phase + spec.background_scale * rng.uniform(-1, 1)
    for total in range(spec.background_poly_order + 1):
        for i in range(total + 1):
            phase += rng.uniform(-1, 1) * xn**i * yn ** (total - i)
    peak = np.abs(phase).max()
    if peak > 0:
        phase *= spec.background_scale / peak
    return phase


def _draw_vessel(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = spec.height, spec.width
    angle = rng.uniform(0.0, np.pi)
    half_width = rng.integers(1, 4) / 2.0
    cx = rng.uniform(0.15 * w, 0.85 * w)
    cy = rng.uniform(0.15 * h, 0.85 * h)
    half_len = rng.uniform(0.2, 0.45) * min(h, w)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    along = dx * np.cos(angle) + dy * np.sin(angle)
    across = -dx * np.sin(angle) + dy * np.cos(angle)
    return (np.abs(across) < half_width) & (np.abs(along) <= half_len)


def paint_vessels(spec: PhantomSpec, rng: np.random.Generator, max_retries: int = 200):
    """Place straight vessels; returns (vessel_mask, edge_mask, per-pixel contrast scale).

    A candidate tube is rejected when more than half of it already lies inside
    earlier vessels. Raises ValueError once `max_retries` consecutive candidates
    have been rejected.
    """
    h, w = spec.height, spec.width
    vessels = np.zeros((h, w), dtype=bool)
    contrast = np.zeros((h, w))
    placed = 0
    failures = 0
    while placed < spec.n_vessels:
        tube = _draw_vessel(spec, rng)
        if tube.sum() == 0 or (tube & vessels).sum() > 0.5 * tube.sum():
            failures += 1
            if failures >= max_retries:
                raise ValueError(
                    f"could only place {placed} of {spec.n_vessels} vessels "
                    f"after {max_retries} retries"
                )
            continue
        failures = 0
        scale = rng.uniform(spec.min_contrast, 1.0)
        new = tube & ~vessels
        contrast[new] = scale
        vessels |= tube
        placed += 1
    ring = ndimage.binary_dilation(vessels, structure=np.ones((3, 3), bool)) & ~vessels
    # edge pixels inherit the contrast of the vessel they border
    grown = ndimage.grey_dilation(contrast, size=(3, 3))
    contrast = np.where(ring, grown, contrast)
    return vessels, ring, contrast


def gen_reference_with_masks(spec: PhantomSpec):
    """Reference image plus the painted (vessel, edge) ground-truth masks."""
    rng = np.random.default_rng(spec.seed)
    background = _background_phase(spec, rng)
    vessels, edges, contrast = paint_vessels(spec, rng)
    phase = background.copy()
    phase[vessels] += spec.vessel_phase * contrast[vessels]
    phase[edges] += spec.edge_phase * contrast[edges]
    mag = np.full((spec.height, spec.width), spec.tissue_magnitude)
    mag[vessels] = spec.vessel_magnitude
    ref = ComplexImage(mag * np.exp(1j * phase))
    return ref, vessels, edges


def gen_reference(spec: PhantomSpec) -> ComplexImage:
    """Single-coil reference slice: dark tubular vessels on brighter tissue.

    Phase = low-order polynomial background + `vessel_phase` inside vessels +
    `edge_phase` on the one-pixel vessel boundary, each vessel scaled by its own
    random contrast factor in [min_contrast, 1].
    """
    return gen_reference_with_masks(spec)[0]


def make_dataset(
    ref: ComplexImage,
    sens: MultiChannelImage,
    sigma: float,
    seed: int,
) -> MultiChannelImage:
    """Multiply `ref` by each sensitivity, scale by the global peak, add complex noise.

    Noise is i.i.d. Gaussian with std `sigma` per real component; channel j draws
    from its own stream seeded by (seed, j). Output is rounded to float32.
    """
    r = np.asarray(ref)
    s = np.asarray(sens)
    if s.shape[1:] != r.shape:
        raise ValueError(f"reference {r.shape} and sensitivities {s.shape[1:]} differ in size")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    channels = r[None] * s
    peak = np.abs(channels).max()
    if peak == 0:
        raise ValueError("reference and sensitivities have zero overlap")
    channels = channels / peak
    if sigma > 0:
        noisy = np.empty_like(channels)
        for j in range(channels.shape[0]):
            rng = np.random.default_rng([seed, j])
            noise = rng.standard_normal(channels.shape[1:] + (2,))
            noisy[j] = channels[j] + sigma * (noise[..., 0] + 1j * noise[..., 1])
        channels = noisy
    return MultiChannelImage(quantize_float32(channels))


def vessel_masks(spec: PhantomSpec) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth (intravenous, edge) masks for `spec`."""
    _, vessels, edges = gen_reference_with_masks(spec)
    return vessels, edges
