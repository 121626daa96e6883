"""Command-line interface: phantom, fit, filter, calibrate, combine, swi, mip, experiment."""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from mrfswi import calibration as cal
from mrfswi.combine_swi import (
    POLARITIES,
    apply_mask,
    combine_channels,
    combine_weighted_baseline,
    min_intensity_projection,
    phase_mask,
    save_pgm,
)
from mrfswi.image_model import (
    DTYPE_REAL,
    MCFError,
    MultiChannelImage,
    RealField,
    StorageError,
    build_histogram,
    load_mcf,
    magnitude_phase,
    read_mcf,
    save_mcf,
)
from mrfswi.mrf_filter import LIKELIHOOD_SCALES, TISSUE_VARIANTS, EnergyParams, icm_filter
from mrfswi.noise_model import FIT_CSV_HEADER, fit_noise_model
from mrfswi.phantom import CoilGeometry, PhantomSpec, coil_sensitivities, gen_reference_with_masks, make_dataset
from mrfswi.prep import clique_diffs, hp_filter

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_INVALID = 3
EXIT_IO = 4
EXIT_FORMAT = 5

EXIT_CODES_HELP = """exit codes:
  0  success
  1  unexpected internal error
  2  bad command line (unknown flag, missing argument)
  3  invalid parameter or input violating a model invariant
  4  file could not be read or written
  5  input file is not a well-formed MCF file
"""


class _Formatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _k_grid(args) -> np.ndarray:
    if args.k_points < 5:
        raise ValueError("--k-points must be >= 5")
    if not 0 < args.k_min < args.k_max:
        raise ValueError("need 0 < --k-min < --k-max")
    return np.geomspace(args.k_min, args.k_max, args.k_points)


def _smoothing(args) -> float | None:
    return args.smoothing if args.smoothing > 0 else None


def _params(args, K: float | None = None) -> EnergyParams:
    return EnergyParams(
        K=args.k if K is None else K,
        T=args.temperature,
        tissue_variant=args.variant,
        max_iter=args.max_iter,
        tol=args.tol,
        sign=args.sign,
        likelihood=args.likelihood,
    )


def _add_energy_flags(p, with_k: bool = True) -> None:
    if with_k:
        p.add_argument("--k", type=float, default=0.004, help="threshold scaling parameter K (dimensionless)")
    p.add_argument("--temperature", type=float, default=1.0, help="posterior temperature T (dimensionless)")
    p.add_argument("--variant", choices=TISSUE_VARIANTS, default="sigmoid", help="tissue energy switching function")
    p.add_argument("--max-iter", type=int, default=20, help="maximum ICM sweeps")
    p.add_argument("--tol", type=float, default=1e-4, help="stop when the relative L2 phase change falls below this")
    p.add_argument(
        "--sign",
        type=int,
        choices=(1, -1),
        default=1,
        help="+1 treats potentials as compatibility scores, -1 as Gibbs energies",
    )
    p.add_argument(
        "--likelihood",
        choices=LIKELIHOOD_SCALES,
        default="mass",
        help="likelihood terms as per-bin probabilities (mass) or raw densities in 1/rad",
    )


def _add_smoothing_flag(p) -> None:
    p.add_argument(
        "--smoothing",
        type=float,
        default=cal.DEFAULT_SMOOTHING,
        help="Gaussian sigma (pixels) of the per-channel background phase removal; 0 disables it",
    )


def _add_grid_flags(p) -> None:
    p.add_argument("--k-min", type=float, default=5e-4, help="smallest K of the log-spaced grid")
    p.add_argument("--k-max", type=float, default=5e-2, help="largest K of the log-spaced grid")
    p.add_argument("--k-points", type=int, default=20, help="number of K grid points (>= 5)")


def _add_phantom_flags(p) -> None:
    d = PhantomSpec()
    p.add_argument("--size", type=int, default=128, help="image height and width (pixels)")
    p.add_argument("--channels", type=int, default=8, help="number of receive coils")
    p.add_argument("--vessels", type=int, default=d.n_vessels, help="number of straight vessels")
    p.add_argument("--vessel-phase", type=float, default=d.vessel_phase, help="intravenous phase (rad)")
    p.add_argument("--edge-phase", type=float, default=d.edge_phase, help="vessel boundary phase (rad)")
    p.add_argument("--poly-order", type=int, default=d.background_poly_order, help="background phase polynomial order")
    p.add_argument("--phantom-seed", type=int, default=0, help="seed of the vessel layout and background phase")
    p.add_argument("--seed", type=int, default=0, help="seed of the channel noise")
    p.add_argument("--min-contrast", type=float, default=d.min_contrast, help="lower bound of the per-vessel contrast factor")
    p.add_argument("--loop-radius", type=float, default=None, help="coil loop radius (pixels; default 0.75 x size)")
    p.add_argument("--ring-radius", type=float, default=None, help="distance of coil centres from the FOV centre (pixels; default 1.05 x size)")
    p.add_argument("--standoff", type=float, default=None, help="out-of-plane coil offset (pixels; default 0.375 x size)")


def _phantom_from_args(args) -> tuple[PhantomSpec, CoilGeometry]:
    spec = PhantomSpec(
        height=args.size,
        width=args.size,
        n_vessels=args.vessels,
        vessel_phase=args.vessel_phase,
        edge_phase=args.edge_phase,
        background_poly_order=args.poly_order,
        seed=args.phantom_seed,
        min_contrast=args.min_contrast,
    )
    geom = CoilGeometry.for_size(args.size, args.channels)
    overrides = {k: getattr(args, k) for k in ("loop_radius", "ring_radius", "standoff") if getattr(args, k) is not None}
    return spec, dataclasses.replace(geom, **overrides)


def _single_channel(path) -> MultiChannelImage:
    img = load_mcf(path)
    if img.channels != 1:
        raise ValueError(f"{path}: expected a single combined image, found {img.channels} channels")
    return img


def _load_slice(path) -> RealField:
    """Real MCF field as is; a 1-channel complex file contributes its magnitude."""
    dtype_code, data = read_mcf(path)
    if data.shape[0] != 1:
        raise ValueError(f"{path}: expected one slice, found {data.shape[0]} channels")
    if dtype_code == DTYPE_REAL:
        return RealField(data[0].real.astype(np.float64))
    return RealField(np.abs(data[0]).astype(np.float64))


def cmd_phantom(args) -> int:
    spec, geom = _phantom_from_args(args)
    if args.sigma < 0:
        raise ValueError("--sigma must be >= 0")
    ref, vessels, edges = gen_reference_with_masks(spec)
    data = make_dataset(ref, coil_sensitivities(geom, spec.height, spec.width), args.sigma, args.seed)
    save_mcf(data, args.out)
    if args.truth:
        # 1 = intravenous, -1 = vessel boundary, 0 = tissue
        save_mcf(RealField(vessels.astype(float) - edges.astype(float)), args.truth)
    print(f"wrote {args.out}: {data.channels} channels of {data.height}x{data.width}")
    return EXIT_OK


def cmd_fit(args) -> int:
    channels = load_mcf(args.input)
    rows = []
    for j, img in enumerate(channels):
        _, phase = magnitude_phase(img)
        hist = build_histogram(clique_diffs(phase).values(), args.bins)
        fit = fit_noise_model(hist, args.form)
        rows.append([str(j)] + [fit.as_row()[k] for k in FIT_CSV_HEADER])
        print(f"channel {j}: snr={fit.snr:.6g} sigma={fit.sigma:.6g} chi2={fit.chi2:.6g}")
    cal.write_csv(args.out, ("channel",) + FIT_CSV_HEADER, rows)
    return EXIT_OK


def cmd_filter(args) -> int:
    channels = cal.prepare_channels(load_mcf(args.input), _smoothing(args))
    out, iterations, trace = icm_filter(channels, _params(args), cal.channel_fits(channels))
    save_mcf(out, args.out)
    if args.trace:
        header = ["iteration"]
        header += [f"change_{j}" for j in range(channels.channels)]
        header += [f"delta_{j}" for j in range(channels.channels)]
        header += [f"w_c_{j}" for j in range(channels.channels)]
        rows = [[str(k)] + list(ch) + list(d) + list(wc) for k, ch, d, wc in trace.rows()]
        cal.write_csv(args.trace, header, rows)
    print(f"wrote {args.out} after {iterations} iterations")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    channels = cal.prepare_channels(load_mcf(args.input), _smoothing(args))
    K = _k_grid(args)
    curve = cal.calibrate_k(channels, K, _params(args, K=float(K[0])), args.window)
    cal.write_csv(args.out, cal.CALIBRATION_HEADER, curve.rows())
    print(f"optimum K={curve.optimum_K:.9g} CNR={curve.optimum_cnr:.9g}")
    return EXIT_OK


def cmd_combine(args) -> int:
    channels = cal.prepare_channels(load_mcf(args.input), _smoothing(args))
    if args.method == "weighted":
        combined = combine_weighted_baseline(channels, args.weighting)
    else:
        out, _, _ = icm_filter(channels, _params(args), cal.channel_fits(channels))
        combined = combine_channels(out)
    save_mcf(combined, args.out)
    print(f"CNR={cal.combined_cnr(combined):.9g}")
    return EXIT_OK


def cmd_swi(args) -> int:
    img = _single_channel(args.input)[0]
    mag, phase = magnitude_phase(img)
    hp = hp_filter(phase, args.radius, variable=args.variable)
    swi = apply_mask(mag, phase_mask(hp, args.polarity, args.power))
    save_mcf(swi, args.out)
    if args.pgm:
        save_pgm(swi, args.pgm)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_mip(args) -> int:
    slices = [_load_slice(p) for p in args.inputs]
    projections = min_intensity_projection(slices, args.slab)
    for i, proj in enumerate(projections):
        save_mcf(proj, f"{args.out_prefix}_{i:03d}.mcf")
        if args.pgm:
            save_pgm(proj, f"{args.out_prefix}_{i:03d}.pgm")
    print(f"wrote {len(projections)} projections")
    return EXIT_OK


def cmd_experiment(args) -> int:
    spec, geom = _phantom_from_args(args)
    if not args.sigmas or any(s <= 0 for s in args.sigmas):
        raise ValueError("--sigmas must be positive")
    K = _k_grid(args)
    report = cal.monte_carlo_experiment(
        spec, geom, args.sigmas, K, args.seed, _params(args, K=float(K[0])), _smoothing(args)
    )
    report.write(args.out_dir)
    sys.stdout.write(cal.csv_text(cal.SUMMARY_HEADER, report.summary_rows()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mrfswi",
        description="MAP-MRF filtering of multi-channel phase for SWI coil combination. "
        "Magnitudes and sigma are in units of the peak channel magnitude; phases in radians.",
        epilog=EXIT_CODES_HELP,
        formatter_class=_Formatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, helptext):
        return sub.add_parser(name, help=helptext, description=helptext, epilog=EXIT_CODES_HELP, formatter_class=_Formatter)

    p = add("phantom", "simulate a noisy multi-coil vessel phantom (MCF)")
    _add_phantom_flags(p)
    p.add_argument("--sigma", type=float, default=0.003, help="noise std per real component (peak-normalised units)")
    p.add_argument("--out", required=True, help="output MCF path")
    p.add_argument("--truth", default=None, help="optional MCF path for the ground-truth label field")
    p.set_defaults(func=cmd_phantom)

    p = add("fit", "fit the phase-noise model to each channel's clique differences (CSV)")
    p.add_argument("input", help="multi-channel MCF")
    p.add_argument("--bins", type=int, default=256, help="histogram bins over [-pi, pi]")
    p.add_argument("--form", choices=("symmetric", "pearson", "neyman"), default="symmetric", help="chi-square form")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_fit)

    p = add("filter", "run the ICM phase filter on every channel (MCF + optional trace CSV)")
    p.add_argument("input", help="multi-channel MCF")
    _add_energy_flags(p)
    _add_smoothing_flag(p)
    p.add_argument("--out", required=True, help="output MCF path")
    p.add_argument("--trace", default=None, help="optional CSV of per-iteration change norms and w_c")
    p.set_defaults(func=cmd_filter)

    p = add("calibrate", "sweep K and pick the CNR optimum (CSV)")
    p.add_argument("input", help="multi-channel MCF")
    _add_grid_flags(p)
    p.add_argument("--window", type=int, default=cal.SMOOTHING_WINDOW, help="moving-average window (odd)")
    _add_energy_flags(p, with_k=False)
    _add_smoothing_flag(p)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_calibrate)

    p = add("combine", "combine channels by MAP-MRF filtering or the weighted average (MCF)")
    p.add_argument("input", help="multi-channel MCF")
    p.add_argument("--method", choices=("mrf", "weighted"), default="mrf", help="combination method")
    p.add_argument(
        "--weighting",
        choices=("magnitude2", "magnitude"),
        default="magnitude2",
        help="weights of the weighted average",
    )
    _add_energy_flags(p)
    _add_smoothing_flag(p)
    p.add_argument("--out", required=True, help="output MCF path (one complex channel)")
    p.set_defaults(func=cmd_combine)

    p = add("swi", "high-pass the combined phase and apply an SWI phase mask (MCF, optional PGM)")
    p.add_argument("input", help="single-channel complex MCF")
    p.add_argument("--radius", type=int, default=1, help="high-pass neighbourhood radius (pixels)")
    p.add_argument("--variable", action="store_true", help="grow the radius from 1 at the centre to --radius at the corners")
    p.add_argument("--polarity", choices=POLARITIES, default="positive", help="phase mask polarity")
    p.add_argument("--power", type=int, default=4, help="number of mask multiplications")
    p.add_argument("--out", required=True, help="output MCF path (real field)")
    p.add_argument("--pgm", default=None, help="optional 16-bit PGM path")
    p.set_defaults(func=cmd_swi)

    p = add("mip", "sliding minimum intensity projection over slices (MCF, optional PGM)")
    p.add_argument("inputs", nargs="+", help="slice files in order (real MCF, or 1-channel complex for magnitude)")
    p.add_argument("--slab", type=int, default=4, help="slices per projection")
    p.add_argument("--out-prefix", required=True, help="outputs are PREFIX_000.mcf, PREFIX_001.mcf, ...")
    p.add_argument("--pgm", action="store_true", help="also write PREFIX_NNN.pgm")
    p.set_defaults(func=cmd_mip)

    p = add("experiment", "Monte Carlo noise experiment over several sigmas (CSV bundle)")
    _add_phantom_flags(p)
    p.add_argument(
        "--sigmas",
        type=_float_list,
        default=list(cal.DEFAULT_SIGMAS),
        help="comma-separated noise stds (peak-normalised units)",
    )
    _add_grid_flags(p)
    _add_energy_flags(p, with_k=False)
    _add_smoothing_flag(p)
    p.add_argument("--out-dir", required=True, help="directory for summary.csv and per-sigma curves")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StorageError as exc:
        code, msg = EXIT_IO, str(exc)
    except MCFError as exc:
        code, msg = EXIT_FORMAT, str(exc)
    except OSError as exc:
        code, msg = EXIT_IO, f"{exc.filename or ''}: {exc.strerror or exc}".lstrip(": ")
    except (ValueError, TypeError) as exc:
        code, msg = EXIT_INVALID, str(exc)
    except Exception as exc:  # noqa: BLE001
        code, msg = EXIT_INTERNAL, f"internal error: {type(exc).__name__}: {exc}"
    print(f"mrfswi {args.command}: error: {' '.join(msg.split())}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
