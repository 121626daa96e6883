"""MAP-MRF channel phase filter: energies, potentials, posteriors and the ICM loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import integrate, special

from mrfswi.image_model import (
    MultiChannelImage,
    RealField,
    build_histogram,
    magnitude_phase,
)
from mrfswi.noise_model import (
    MixtureModel,
    NoiseModelFit,
    decompose_mixture,
    fit_noise_model,
)
from mrfswi.prep import CliqueField, clique_diffs

TISSUE_VARIANTS = ("sigmoid", "erf")
# "mass": density times bin width (per-bin probability, commensurate with the
# clique energies in [0, 1]); "density": raw density in 1/rad
LIKELIHOOD_SCALES = ("mass", "density")
N_HIST_BINS = 256


@dataclass(frozen=True)
class EnergyParams:
    K: float
    T: float = 1.0
    tissue_variant: str = "sigmoid"
    max_iter: int = 20
    tol: float = 1e-4
    # +1: potentials act as compatibility scores (softmax of +A/T); -1: Gibbs energies
    sign: int = 1
    likelihood: str = "mass"

    def __post_init__(self):
        if not self.K > 0:
            raise ValueError("K must be > 0")
        if not self.T > 0:
            raise ValueError("T must be > 0")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.tissue_variant not in TISSUE_VARIANTS:
            raise ValueError(f"tissue_variant must be one of {TISSUE_VARIANTS}")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        if self.likelihood not in LIKELIHOOD_SCALES:
            raise ValueError(f"likelihood must be one of {LIKELIHOOD_SCALES}")

    def with_K(self, K: float) -> "EnergyParams":
        return replace(self, K=K)


@dataclass(frozen=True, eq=False)
class ThresholdField:
    tr: RealField
    cap: float


@dataclass(frozen=True, eq=False)
class PosteriorField:
    p: RealField


def local_threshold(mag: RealField | np.ndarray, K: float, alpha_j: float) -> ThresholdField:
    """tr = K * max(mag) / mag, capped at 1/(sqrt(2) alpha_j); zero magnitude gets the cap."""
    m = np.asarray(mag, dtype=np.float64)
    if K <= 0 or alpha_j <= 0:
        raise ValueError("K and alpha_j must be > 0")
    peak = m.max()
    if peak <= 0:
        raise ValueError("magnitude image is identically zero")
    cap = 1.0 / (math.sqrt(2.0) * alpha_j)
    with np.errstate(divide="ignore"):
        tr = np.where(m > 0, K * peak / np.where(m > 0, m, 1.0), np.inf)
    return ThresholdField(RealField(np.minimum(tr, cap)), cap)


def energy_noise(dphi, tr):
    """Lorentzian noise energy 1/(1 + (dphi/tr)^2): 1 at zero, 0.5 at |dphi| = tr."""
    u = np.asarray(dphi, dtype=np.float64) / tr
    return 1.0 / (1.0 + u * u)


def energy_tissue(dphi, tr, variant: str = "sigmoid"):
    """Pair of switching functions shifted to -tr and +tr, summed over the real line.

    sigmoid: 1/(1+exp(dphi/tr + 1)) + 1/(1+exp(-dphi/tr + 1))
    erf:     [1 - erf(dphi + tr)]/2 + [1 + erf(dphi - tr)]/2
    """
    d = np.asarray(dphi, dtype=np.float64)
    if variant == "sigmoid":
        u = d / tr
        return special.expit(-(u + 1.0)) + special.expit(u - 1.0)
    if variant == "erf":
        return 0.5 * (1.0 - special.erf(d + tr)) + 0.5 * (1.0 + special.erf(d - tr))
    raise ValueError(f"unknown tissue variant {variant!r}")


def clique_potential(
    cliques: CliqueField,
    tr: ThresholdField | np.ndarray,
    which: str,
    variant: str = "sigmoid",
) -> RealField:
    """Sum of the clique energy over the 8 neighbours of every site."""
    t = np.asarray(tr.tr if isinstance(tr, ThresholdField) else tr, dtype=np.float64)
    if which == "noise":
        vals = energy_noise(cliques.diffs, t[None])
    elif which == "tissue":
        vals = energy_tissue(cliques.diffs, t[None], variant)
    else:
        raise ValueError("which must be 'tissue' or 'noise'")
    return RealField(vals.sum(axis=0))


def likelihood_potential(
    cliques: CliqueField,
    mixture: MixtureModel,
    which: str,
    scale: str = "density",
) -> RealField:
    """Sum of the tissue (f_t) or noise (f_c) component density over the 8 cliques.

    scale="mass" multiplies each density by the mean histogram bin width, so
    every term is a per-bin probability in [0, 1] like the clique energies.
    """
    if which == "noise":
        vals = mixture.f_c(cliques.diffs)
    elif which == "tissue":
        vals = mixture.f_t(cliques.diffs)
    else:
        raise ValueError("which must be 'tissue' or 'noise'")
    total = np.asarray(vals).sum(axis=0)
    if scale == "mass":
        total = total * float(np.diff(mixture.bin_edges).mean())
    elif scale != "density":
        raise ValueError(f"scale must be one of {LIKELIHOOD_SCALES}")
    return RealField(total)


_P_EPS = 1e-12


def tissue_posterior(U_t_total, U_c_total, T: float = 1.0, sign: int = 1) -> PosteriorField:
    """Two-hypothesis softmax exp(s A_t/T) / (exp(s A_t/T) + exp(s A_c/T)).

    The logistic form is the max-subtracted softmax; results are kept inside
    (0, 1) by a 1e-12 margin.
    """
    a_t = np.asarray(U_t_total, dtype=np.float64)
    a_c = np.asarray(U_c_total, dtype=np.float64)
    if T <= 0:
        raise ValueError("T must be > 0")
    p = special.expit(sign * (a_t - a_c) / T)
    return PosteriorField(RealField(np.clip(p, _P_EPS, 1.0 - _P_EPS)))


def channel_fit(phase: RealField | np.ndarray, n_bins: int = N_HIST_BINS) -> NoiseModelFit:
    """Noise model fitted to the clique-difference histogram of one phase image."""
    return fit_noise_model(build_histogram(clique_diffs(phase).values(), n_bins))


def channel_posterior(
    phase: np.ndarray,
    tr: np.ndarray,
    params: EnergyParams,
    n_bins: int = N_HIST_BINS,
) -> tuple[np.ndarray, MixtureModel]:
    """One ICM site update for a whole channel: refit mixture, potentials, posterior."""
    cliques = clique_diffs(phase)
    hist = build_histogram(cliques.values(), n_bins)
    mixture = decompose_mixture(hist, fit_noise_model(hist))
    a_t = (
        clique_potential(cliques, tr, "tissue", params.tissue_variant).data
        + likelihood_potential(cliques, mixture, "tissue", params.likelihood).data
    )
    a_c = (
        clique_potential(cliques, tr, "noise").data
        + likelihood_potential(cliques, mixture, "noise", params.likelihood).data
    )
    post = tissue_posterior(a_t, a_c, params.T, params.sign)
    return post.p.data, mixture


@dataclass
class FilterTrace:
    """Per-iteration change norms and noise weights, one list per channel.

    `change` is the relative L2 change used by the stop rule; `delta` is the
    absolute L2 change of the phase field.
    """

    change: list[list[float]] = field(default_factory=list)
    delta: list[list[float]] = field(default_factory=list)
    w_c: list[list[float]] = field(default_factory=list)

    def rows(self):
        for k, (ch, d, wc) in enumerate(zip(self.change, self.delta, self.w_c), start=1):
            yield k, ch, d, wc


def icm_filter(
    channels: MultiChannelImage,
    params: EnergyParams,
    fits: Sequence[NoiseModelFit],
    n_bins: int = N_HIST_BINS,
    callback=None,
) -> tuple[MultiChannelImage, int, FilterTrace]:
    """Shrink each channel's phase by its tissue posterior until it stops changing.

    Every iteration refits the mixture on the current clique differences and
    updates the whole field at once (phi <- phi * P). Stops when the largest
    relative L2 change over channels drops below `params.tol` or after
    `params.max_iter` iterations. Magnitudes are untouched. `callback`, when
    given, receives (iteration, filtered MultiChannelImage) after each sweep.
    """
    if len(fits) != channels.channels:
        raise ValueError(f"need one noise fit per channel ({channels.channels}), got {len(fits)}")
    mags, phases, thresholds = [], [], []
    for j, img in enumerate(channels):
        mag, phase = magnitude_phase(img)
        mags.append(mag.data)
        phases.append(phase.data.copy())
        thresholds.append(local_threshold(mag, params.K, fits[j].alpha).tr.data)
    mags_arr = np.stack(mags)

    trace = FilterTrace()
    iterations = 0
    for k in range(1, params.max_iter + 1):
        iterations = k
        changes, deltas, weights = [], [], []
        for j in range(channels.channels):
            p, mixture = channel_posterior(phases[j], thresholds[j], params, n_bins)
            new = phases[j] * p
            norm = np.linalg.norm(phases[j])
            delta = np.linalg.norm(new - phases[j])
            changes.append(float(delta / norm) if norm > 0 else 0.0)
            deltas.append(float(delta))
            weights.append(mixture.w_c)
            phases[j] = new
        trace.change.append(changes)
        trace.delta.append(deltas)
        trace.w_c.append(weights)
        if callback is not None:
            callback(k, MultiChannelImage(mags_arr * np.exp(1j * np.stack(phases))))
        if max(changes) < params.tol:
            break
    out = MultiChannelImage(mags_arr * np.exp(1j * np.stack(phases)))
    return out, iterations, trace


def _magnitude_summary(mag_samples, n_points: int = 32) -> np.ndarray:
    m = np.asarray(mag_samples, dtype=np.float64).ravel()
    m = m[m > 0]
    if m.size == 0:
        raise ValueError("magnitude summary needs positive samples")
    q = (np.arange(n_points) + 0.5) / n_points
    return np.quantile(m, q)


def _expect_noise(tr: float, s: float) -> float:
    def integrand(d):
        return math.exp(-0.5 * (d / s) ** 2) / (1.0 + (d / tr) ** 2)

    lim = 12.0 * s
    pts = [0.0] + [x for x in (tr, 3 * tr) if x < lim]
    val, _ = integrate.quad(integrand, 0.0, lim, points=pts[1:] or None, limit=200)
    return 2.0 * val / (math.sqrt(2.0 * math.pi) * s)


def _expect_tissue(tr: float, s: float, variant: str) -> float:
    def integrand(d):
        return math.exp(-0.5 * (d / s) ** 2) * float(energy_tissue(d, tr, variant))

    lim = 12.0 * s
    val, _ = integrate.quad(integrand, 0.0, lim, limit=200)
    return 2.0 * val / (math.sqrt(2.0 * math.pi) * s)


def expected_energies(
    K_grid,
    sigma: float,
    mag_hist,
    I_max: float = 1.0,
    variant: str = "erf",
) -> tuple[np.ndarray, np.ndarray, float | None]:
    """Noise-averaged clique energies as functions of the threshold scale K.

    Clique differences at a pixel of magnitude m are taken as N(0, (sigma/m)^2)
    and the threshold as K * I_max / m; both energies are integrated by adaptive
    quadrature and averaged over quantiles of `mag_hist` (magnitude samples).
    Returns (E_noise, E_tissue, crossing_K), crossing_K being the first grid
    point where E_noise >= E_tissue, or None.
    """
    K = np.asarray(K_grid, dtype=np.float64)
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    if K.ndim != 1 or np.any(np.diff(K) <= 0) or np.any(K <= 0):
        raise ValueError("K_grid must be positive and strictly increasing")
    mags = _magnitude_summary(mag_hist)
    e_noise = np.empty(K.size)
    e_tissue = np.empty(K.size)
    for i, k in enumerate(K):
        cn = ct = 0.0
        for m in mags:
            s = sigma / m
            tr = k * I_max / m
            cn += _expect_noise(tr, s)
            ct += _expect_tissue(tr, s, variant)
        e_noise[i] = cn / mags.size
        e_tissue[i] = ct / mags.size
    above = np.nonzero(e_noise >= e_tissue)[0]
    crossing = None
    if above.size and above[0] > 0:
        crossing = float(K[above[0]])
    return e_noise, e_tissue, crossing
