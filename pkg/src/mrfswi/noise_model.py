"""Phase-noise statistics: marginal phase PDF, minimum chi-square fit, mixture split, CNR."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

from mrfswi.image_model import Histogram

SNR_RANGE = (0.1, 1000.0)
N_SCAN = 200
# sub-samples per bin when averaging the model density over a histogram bin;
# scaled with the model width (~1/snr) relative to the bin width
MIN_SUB = 3
MAX_SUB = 33


def phase_pdf(dphi, snr: float):
    """Marginal phase density of a unit phasor in complex Gaussian noise.

    f(x) = exp(-a^2)/(2 pi) * [1 + sqrt(pi) b exp(b^2) (1 + erf(b))],
    a = snr / sqrt(2), b = a cos(x). Evaluated in a form that neither
    overflows nor cancels at high SNR.
    """
    x = np.asarray(dphi, dtype=np.float64)
    a = snr / math.sqrt(2.0)
    b = a * np.cos(x)
    e_a = math.exp(-a * a)
    pos = b >= 0
    term = np.empty_like(b)
    # b >= 0: exp(-a^2 + b^2) = exp(-a^2 sin^2 x)
    term[pos] = (
        math.sqrt(math.pi)
        * b[pos]
        * np.exp(-(a * np.sin(x[pos])) ** 2)
        * (1.0 + special.erf(b[pos]))
    )
    # b < 0: exp(b^2) (1 + erf(b)) = erfcx(-b)
    term[~pos] = math.sqrt(math.pi) * b[~pos] * e_a * special.erfcx(-b[~pos])
    out = np.maximum((e_a + term) / (2.0 * math.pi), 0.0)
    return out if out.ndim else float(out)


def binned_model(hist: Histogram, snr: float) -> np.ndarray:
    """Model density averaged over each histogram bin (midpoint sub-sampling)."""
    edges = hist.bin_edges
    n_sub = int(np.clip(math.ceil(4.0 * hist.widths.max() * snr), MIN_SUB, MAX_SUB))
    frac = (np.arange(n_sub) + 0.5) / n_sub
    pts = edges[:-1, None] + hist.widths[:, None] * frac[None, :]
    return phase_pdf(pts, snr).mean(axis=1)


def chi_square(observed: np.ndarray, model: np.ndarray, form: str = "symmetric") -> float:
    """Chi-square distance between an observed and a model density.

    form="pearson" divides by the model, "neyman" by the observation and
    "symmetric" by their sum. Pearson is dominated by tissue tails wherever the
    noise model decays to ~0, which drags the fit away from the noise core; the
    symmetric form bounds each tail bin's contribution by its own mass.
    Bins with a zero denominator are skipped.
    """
    if form == "pearson":
        denom = model
    elif form == "neyman":
        denom = observed
    elif form == "symmetric":
        denom = observed + model
    else:
        raise ValueError(f"unknown chi-square form {form!r}")
    ok = denom > 0
    with np.errstate(over="ignore"):
        return float(np.sum((observed[ok] - model[ok]) ** 2 / denom[ok]))


@dataclass(frozen=True)
class NoiseModelFit:
    snr: float
    chi2: float

    def __post_init__(self):
        if not self.snr > 0:
            raise ValueError("snr must be > 0")

    @property
    def alpha(self) -> float:
        return self.snr / math.sqrt(2.0)

    @property
    def sigma(self) -> float:
        return 1.0 / self.snr

    @property
    def noise_threshold(self) -> float:
        return 1.0 / (math.sqrt(2.0) * self.alpha)

    def as_row(self) -> dict[str, float]:
        return {
            "snr": self.snr,
            "alpha": self.alpha,
            "sigma": self.sigma,
            "chi2": self.chi2,
            "noise_threshold": self.noise_threshold,
        }


FIT_CSV_HEADER = ("snr", "alpha", "sigma", "chi2", "noise_threshold")


def golden_section(f: Callable[[float], float], a: float, b: float, tol: float = 1e-6) -> float:
    """Minimise a unimodal `f` on [a, b]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while abs(b - a) > tol * (abs(a) + abs(b) + 1e-12):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def fit_noise_model(hist: Histogram, form: str = "symmetric") -> NoiseModelFit:
    """Minimum chi-square SNR for the phase-noise model.

    Coarse log-spaced scan over SNR in [0.1, 1000], then golden-section search
    (in log SNR) between the neighbours of the best scan point. `form` selects
    the chi-square denominator, see `chi_square`.
    """
    observed = hist.normalized_density
    grid = np.geomspace(*SNR_RANGE, N_SCAN)
    scores = np.array([chi_square(observed, binned_model(hist, s), form) for s in grid])
    finite = np.isfinite(scores)
    if not finite.any():
        raise ValueError("chi-square is non-finite over the whole SNR range")
    scores[~finite] = np.inf
    i = int(np.argmin(scores))
    lo = math.log(grid[max(i - 1, 0)])
    hi = math.log(grid[min(i + 1, N_SCAN - 1)])

    def objective(log_snr: float) -> float:
        val = chi_square(observed, binned_model(hist, math.exp(log_snr)), form)
        return val if math.isfinite(val) else math.inf

    best = math.exp(golden_section(objective, lo, hi, tol=1e-7))
    chi2 = objective(math.log(best))
    if chi2 > scores[i]:
        best, chi2 = float(grid[i]), float(scores[i])
    return NoiseModelFit(snr=best, chi2=chi2)


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """Two-component split f = w_t f_t + w_c f_c of a clique-difference histogram.

    `f_t` is tabulated on the histogram bins; `f_c` is the fitted noise density.
    """

    w_c: float
    bin_edges: np.ndarray
    f_t_table: np.ndarray
    snr: float

    @property
    def w_t(self) -> float:
        return 1.0 - self.w_c

    def f_c(self, dphi):
        return phase_pdf(dphi, self.snr)

    def f_t(self, dphi):
        """Nearest-bin lookup; values beyond the support take the edge bin."""
        x = np.asarray(dphi, dtype=np.float64)
        idx = np.searchsorted(self.bin_edges, x, side="right") - 1
        idx = np.clip(idx, 0, len(self.f_t_table) - 1)
        out = self.f_t_table[idx]
        return out if out.ndim else float(out)


def _zero_bins(hist: Histogram) -> np.ndarray:
    """Index of the bin holding 0, or both bins sharing 0 as their common edge."""
    edges = hist.bin_edges
    i = int(np.clip(np.searchsorted(edges, 0.0, side="right") - 1, 0, hist.n_bins - 1))
    if edges[i] == 0.0 and i > 0:
        return np.array([i - 1, i])
    return np.array([i])


def decompose_mixture(hist: Histogram, fit: NoiseModelFit) -> MixtureModel:
    """Split the observed density into noise and tissue parts.

    w_c = f(0)/f_c(0) (clipped to [0, 1]) follows from requiring f_t(0) = 0;
    f_t = (f - w_c f_c)/(1 - w_c) with negative values clipped to zero.
    """
    observed = hist.normalized_density
    model = binned_model(hist, fit.snr)
    zero_bins = _zero_bins(hist)
    f0, m0 = observed[zero_bins].mean(), model[zero_bins].mean()
    w_c = float(np.clip(f0 / m0, 0.0, 1.0)) if m0 > 0 else 0.0
    if w_c < 1.0:
        f_t = np.clip((observed - w_c * model) / (1.0 - w_c), 0.0, None)
    else:
        f_t = np.zeros_like(observed)
    f_t[zero_bins] = 0.0
    return MixtureModel(w_c=w_c, bin_edges=hist.bin_edges.copy(), f_t_table=f_t, snr=fit.snr)


def measure_cnr(hist: Histogram, fit: NoiseModelFit) -> float:
    """Excess histogram mass above the fitted model in the tails |x| >= 1/(sqrt(2) alpha)."""
    observed = hist.normalized_density
    model = binned_model(hist, fit.snr)
    tails = np.abs(hist.centers) >= fit.noise_threshold
    excess = np.clip(observed - model, 0.0, None) * hist.widths
    return float(excess[tails].sum())
