"""Threshold-scale (K) calibration and the Monte Carlo noise experiment."""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from mrfswi.combine_swi import combine_channels, combine_weighted_baseline
from mrfswi.image_model import (
    ComplexImage,
    MultiChannelImage,
    build_histogram,
    magnitude_phase,
    write_bytes_atomic,
)
from mrfswi.mrf_filter import EnergyParams, channel_fit, expected_energies, icm_filter
from mrfswi.noise_model import NoiseModelFit, fit_noise_model, measure_cnr
from mrfswi.phantom import (
    CoilGeometry,
    PhantomSpec,
    coil_sensitivities,
    gen_reference,
    make_dataset,
)
from mrfswi.prep import correct_channel_phase, hp_filter

SMOOTHING_WINDOW = 5
# Gaussian sigma (pixels) of the per-channel background phase removal
DEFAULT_SMOOTHING = 6.0
DEFAULT_K_GRID = np.geomspace(5e-4, 5e-2, 20)
DEFAULT_SIGMAS = (0.003, 0.007, 0.011)
# combined-phase histogram: bins must be narrower than the filtered noise core (~0.0015 rad)
CNR_BINS = 4096

CALIBRATION_HEADER = ("K", "CNR", "smoothed_CNR")
EXPECTATION_HEADER = ("K", "E_noise", "E_tissue")
SUMMARY_HEADER = ("sigma", "opt_K", "opt_CNR", "baseline_CNR", "crossing_K")


def fmt(x) -> str:
    """9 significant digits; missing values are written as an empty field."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.9g}"


def csv_text(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    write_bytes_atomic(path, csv_text(header, rows).encode("ascii"))


def prepare_channels(channels: MultiChannelImage, smoothing: float | None = DEFAULT_SMOOTHING) -> MultiChannelImage:
    """Strip the slowly varying phase of every channel (None leaves the data as is)."""
    if smoothing is None:
        return channels
    return MultiChannelImage(np.stack([correct_channel_phase(c, smoothing) for c in channels.data]))


def combined_fit(image: ComplexImage, n_bins: int = CNR_BINS) -> tuple[float, NoiseModelFit]:
    """CNR of a combined image: high-pass its phase, histogram, fit, measure the tails."""
    _, phase = magnitude_phase(image)
    hist = build_histogram(hp_filter(phase, 1).data.ravel(), n_bins)
    fit = fit_noise_model(hist)
    return measure_cnr(hist, fit), fit


def combined_cnr(image: ComplexImage, n_bins: int = CNR_BINS) -> float:
    return combined_fit(image, n_bins)[0]


def baseline_cnr(channels: MultiChannelImage, weighting: str = "magnitude2") -> float:
    return combined_cnr(combine_weighted_baseline(channels, weighting))


def channel_fits(channels: MultiChannelImage) -> list[NoiseModelFit]:
    return [channel_fit(magnitude_phase(img)[1]) for img in channels]


def smooth_curve(values, window: int = SMOOTHING_WINDOW) -> np.ndarray:
    """Centred moving average ignoring NaNs; the window shrinks at the ends."""
    if window < 1 or window % 2 == 0:
        raise ValueError("smoothing window must be a positive odd integer")
    v = np.asarray(values, dtype=np.float64)
    half = window // 2
    out = np.full(v.shape, np.nan)
    for i in range(v.size):
        seg = v[max(0, i - half) : i + half + 1]
        seg = seg[np.isfinite(seg)]
        if seg.size:
            out[i] = seg.mean()
    return out


@dataclass(frozen=True, eq=False)
class CalibrationCurve:
    K_values: np.ndarray
    cnr_values: np.ndarray
    smoothed: np.ndarray
    optimum_K: float
    optimum_cnr: float
    smoothing_window: int = SMOOTHING_WINDOW

    @property
    def optimum_index(self) -> int:
        return int(np.nonzero(self.K_values == self.optimum_K)[0][0])

    def rows(self):
        return zip(self.K_values, self.cnr_values, self.smoothed)


def curve_from_values(K_grid, cnr_values, window: int = SMOOTHING_WINDOW) -> CalibrationCurve:
    """Smooth a raw CNR-vs-K curve and locate its optimum (missing points = NaN)."""
    K = np.asarray(K_grid, dtype=np.float64)
    cnr = np.asarray(cnr_values, dtype=np.float64)
    smoothed = smooth_curve(cnr, window)
    ok = np.isfinite(cnr) & np.isfinite(smoothed)
    if not ok.any():
        raise ValueError("every K point failed")
    i = int(np.argmax(np.where(ok, smoothed, -np.inf)))
    return CalibrationCurve(K, cnr, smoothed, float(K[i]), float(cnr[i]), window)


def _check_grid(K_grid) -> np.ndarray:
    K = np.asarray(K_grid, dtype=np.float64)
    if K.ndim != 1 or K.size < 5:
        raise ValueError("K grid needs at least 5 points")
    if np.any(K <= 0) or np.any(np.diff(K) <= 0):
        raise ValueError("K grid must be positive and strictly increasing")
    return K


def filtered_cnr(
    channels: MultiChannelImage,
    params: EnergyParams,
    fits: Sequence[NoiseModelFit] | None = None,
) -> float:
    """Filter at `params.K`, combine and return the combined-phase CNR."""
    fits = channel_fits(channels) if fits is None else fits
    out, _, _ = icm_filter(channels, params, fits)
    return combined_cnr(combine_channels(out))


def calibrate_k(
    channels: MultiChannelImage,
    K_grid=DEFAULT_K_GRID,
    params: EnergyParams | None = None,
    window: int = SMOOTHING_WINDOW,
) -> CalibrationCurve:
    """CNR of the MAP-MRF combination over a K grid; optimum is the smoothed argmax.

    Channel noise fits do not depend on K and are computed once. A K point
    whose filtering or fitting fails is kept as NaN and excluded.
    """
    K = _check_grid(K_grid)
    params = params or EnergyParams(K=float(K[0]))
    fits = channel_fits(channels)
    values = []
    for k in K:
        try:
            values.append(filtered_cnr(channels, params.with_K(float(k)), fits))
        except (ValueError, FloatingPointError):
            values.append(math.nan)
    return curve_from_values(K, values, window)


def iteration_cnr(channels: MultiChannelImage, params: EnergyParams):
    """Combined-phase CNR after every ICM sweep, plus the filter trace."""
    cnrs: list[float] = []

    def record(k, img):
        cnrs.append(combined_cnr(combine_channels(img)))

    _, _, trace = icm_filter(channels, params, channel_fits(channels), callback=record)
    return cnrs, trace


@dataclass
class SigmaResult:
    sigma: float
    curve: CalibrationCurve
    baseline_cnr: float
    e_noise: np.ndarray
    e_tissue: np.ndarray
    crossing_K: float | None

    def summary_row(self):
        return (self.sigma, self.curve.optimum_K, self.curve.optimum_cnr, self.baseline_cnr, self.crossing_K)


@dataclass
class ExperimentReport:
    K_grid: np.ndarray
    results: list[SigmaResult] = field(default_factory=list)

    def summary_rows(self):
        return [r.summary_row() for r in self.results]

    def write(self, out_dir) -> list[str]:
        """Write summary.csv plus per-sigma calibration_*.csv and expectations_*.csv."""
        os.makedirs(out_dir, exist_ok=True)
        paths = [os.path.join(out_dir, "summary.csv")]
        write_csv(paths[0], SUMMARY_HEADER, self.summary_rows())
        for r in self.results:
            tag = fmt(r.sigma)
            cal = os.path.join(out_dir, f"calibration_sigma{tag}.csv")
            exp = os.path.join(out_dir, f"expectations_sigma{tag}.csv")
            write_csv(cal, CALIBRATION_HEADER, r.curve.rows())
            write_csv(exp, EXPECTATION_HEADER, zip(self.K_grid, r.e_noise, r.e_tissue))
            paths += [cal, exp]
        return paths


def simulate(spec: PhantomSpec, geom: CoilGeometry, sigma: float, seed: int) -> MultiChannelImage:
    ref = gen_reference(spec)
    sens = coil_sensitivities(geom, spec.height, spec.width)
    return make_dataset(ref, sens, sigma, seed)


def run_sigma(
    channels: MultiChannelImage,
    sigma: float,
    K_grid,
    params: EnergyParams | None = None,
    smoothing: float | None = DEFAULT_SMOOTHING,
) -> SigmaResult:
    """Calibration curve, baseline CNR and expected energies for one dataset."""
    K = _check_grid(K_grid)
    prepared = prepare_channels(channels, smoothing)
    curve = calibrate_k(prepared, K, params)
    base = baseline_cnr(prepared)
    e_n, e_t, cross = expected_energies(K, sigma, np.abs(channels.data))
    return SigmaResult(sigma, curve, base, e_n, e_t, cross)


def monte_carlo_experiment(
    spec: PhantomSpec,
    geom: CoilGeometry,
    sigmas=DEFAULT_SIGMAS,
    K_grid=DEFAULT_K_GRID,
    seed: int = 0,
    params: EnergyParams | None = None,
    smoothing: float | None = DEFAULT_SMOOTHING,
) -> ExperimentReport:
    """Simulate one noisy dataset per sigma (same phantom) and calibrate each."""
    K = _check_grid(K_grid)
    report = ExperimentReport(K)
    for sigma in sigmas:
        if not sigma > 0:
            raise ValueError("sigmas must be > 0")
        channels = simulate(spec, geom, float(sigma), seed)
        report.results.append(run_sigma(channels, float(sigma), K, params, smoothing))
    return report
