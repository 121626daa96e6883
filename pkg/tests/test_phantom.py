import numpy as np
import pytest
from scipy import ndimage

from mrfswi.image_model import ComplexImage, MultiChannelImage, magnitude_phase
from mrfswi.phantom import (
    CoilGeometry,
    PhantomSpec,
    coil_sensitivities,
    gen_reference,
    gen_reference_with_masks,
    loop_field,
    make_dataset,
    vessel_masks,
)


def test_far_coil_is_nearly_uniform():
    sens = coil_sensitivities(CoilGeometry(n_coils=1, loop_radius=20.0, ring_radius=5000.0, standoff=20.0), 32, 32)
    mag = np.abs(sens.data[0])
    assert (mag.max() - mag.min()) / mag.max() < 0.05


def test_far_coil_matches_direct_biot_savart_ratio():
    # direct evaluation at two extreme pixels of the FOV
    geom = CoilGeometry(n_coils=1, loop_radius=20.0, ring_radius=5000.0, standoff=20.0)
    sens = np.abs(coil_sensitivities(geom, 32, 32).data[0])
    xs = np.array([-15.5, 15.5])
    b = loop_field(xs, np.zeros(2), (5000.0, 0.0), np.pi, 20.0, 20.0)
    direct = np.hypot(b[:, 0], b[:, 1])
    assert sens[15, 0] / sens[15, 31] == pytest.approx(direct[0] / direct[1], rel=0.02)


def test_ring_of_coils_is_rotation_symmetric():
    n = 64
    sens = coil_sensitivities(CoilGeometry.for_size(n, 8), n, n).data
    # channel 2 is channel 0 rotated by 90 degrees about the FOV centre (rows point down)
    rotated = np.rot90(sens[0], k=-1)
    assert np.allclose(sens[2], rotated, atol=1e-9 * np.abs(sens).max())
    for k in range(8):
        ang = 2 * np.pi * k / 8
        peak = np.unravel_index(np.argmax(np.abs(sens[k])), (n, n))
        y, x = peak[0] - (n - 1) / 2, peak[1] - (n - 1) / 2
        # the peak sits on the side of the FOV facing coil k
        assert np.cos(np.arctan2(y, x) - ang) > 0.5


def test_sensitivities_positive_and_smooth():
    for geom in (CoilGeometry(), CoilGeometry.for_size(48, 3), CoilGeometry(n_coils=2, loop_radius=5, ring_radius=30, standoff=3)):
        sens = coil_sensitivities(geom, 48, 48).data
        assert np.all(np.abs(sens) > 0)
        assert np.abs(sens).max() == pytest.approx(1.0)
        ph = np.angle(sens)
        for axis in (1, 2):
            step = np.angle(np.exp(1j * np.diff(ph, axis=axis)))
            assert np.abs(step).max() < np.pi / 2


@pytest.mark.parametrize(
    "kwargs",
    [dict(n_coils=0), dict(loop_radius=0), dict(ring_radius=-1), dict(standoff=0)],
)
def test_bad_geometry(kwargs):
    with pytest.raises(ValueError):
        CoilGeometry(**kwargs)


@pytest.mark.parametrize(
    "kwargs",
    [dict(vessel_phase=3.2), dict(vessel_phase=0.5, edge_phase=0.2), dict(n_vessels=-1), dict(height=2)],
)
def test_bad_phantom_spec(kwargs):
    with pytest.raises(ValueError):
        PhantomSpec(**kwargs)


def test_empty_phantom_is_constant():
    ref = gen_reference(PhantomSpec(n_vessels=0, background_poly_order=0, height=16, width=16))
    mag, phase = magnitude_phase(ref)
    assert np.ptp(mag.data) == 0
    assert np.ptp(phase.data) == 0


def test_painted_area_matches_structure():
    spec = PhantomSpec()
    ref, vessels, edges = gen_reference_with_masks(spec)
    _, phase = magnitude_phase(ref)
    strong = np.abs(phase.data) > 3 * spec.background_scale
    expected = (vessels | edges).sum()
    assert 0.5 * expected <= strong.sum() <= 1.5 * expected


def test_reference_structure():
    spec = PhantomSpec(seed=5)
    ref, vessels, edges = gen_reference_with_masks(spec)
    mag, phase = magnitude_phase(ref)
    assert np.all((mag.data >= 0) & (mag.data <= 1))
    assert mag.data[vessels].max() < mag.data[~vessels].min()
    assert np.abs(phase.data).max() < np.pi
    assert not np.any(vessels & edges)
    # the edge ring is exactly the one-pixel boundary around the vessels
    ring = ndimage.binary_dilation(vessels, np.ones((3, 3), bool)) & ~vessels
    assert np.array_equal(edges, ring)
    assert phase.data[vessels].mean() > 0 > phase.data[edges].mean()


def test_reference_deterministic():
    assert gen_reference(PhantomSpec(seed=9)) == gen_reference(PhantomSpec(seed=9))
    assert gen_reference(PhantomSpec(seed=9)) != gen_reference(PhantomSpec(seed=10))
    v1, e1 = vessel_masks(PhantomSpec(seed=9))
    assert np.array_equal(v1, gen_reference_with_masks(PhantomSpec(seed=9))[1])


def test_too_many_vessels_fails():
    spec = PhantomSpec(height=8, width=8, n_vessels=200)
    with pytest.raises(ValueError, match="vessels"):
        gen_reference(spec)


def test_noise_free_dataset_scaling(small_phantom):
    data = make_dataset(small_phantom["ref"], small_phantom["sens"], 0.0, seed=0)
    assert np.abs(data.data).max() == pytest.approx(1.0, abs=1e-7)
    # phase = reference phase + sensitivity phase
    expected = np.angle(small_phantom["ref"].data[None] * small_phantom["sens"].data)
    err = np.angle(np.exp(1j * (np.angle(data.data) - expected)))
    assert np.abs(err).max() < 1e-6


def test_noise_statistics():
    ref = ComplexImage(np.full((4, 4), 0.5 + 0j))
    sens = MultiChannelImage(np.ones((1, 4, 4), complex))
    samples = np.stack([make_dataset(ref, sens, 0.003, seed=s).data[0, 0, 0] for s in range(10_000)])
    assert np.std(samples.real) == pytest.approx(0.003, rel=0.02)
    assert np.std(samples.imag) == pytest.approx(0.003, rel=0.02)


def test_dataset_deterministic_and_channel_streams_independent(small_phantom):
    a = make_dataset(small_phantom["ref"], small_phantom["sens"], 0.003, seed=4)
    b = make_dataset(small_phantom["ref"], small_phantom["sens"], 0.003, seed=4)
    assert a == b
    clean = make_dataset(small_phantom["ref"], small_phantom["sens"], 0.0, seed=4).data
    noise = a.data - clean
    assert abs(np.corrcoef(noise[0].real.ravel(), noise[1].real.ravel())[0, 1]) < 0.05


def test_dataset_dimension_mismatch(small_phantom):
    with pytest.raises(ValueError):
        make_dataset(ComplexImage(np.ones((8, 8), complex)), small_phantom["sens"], 0.003, 0)
    with pytest.raises(ValueError):
        make_dataset(small_phantom["ref"], small_phantom["sens"], -1.0, 0)


def test_higher_noise_gives_lower_channel_snr(small_phantom):
    from mrfswi.mrf_filter import channel_fit

    snrs = []
    for sigma in (0.003, 0.007, 0.011):
        data = make_dataset(small_phantom["ref"], small_phantom["sens"], sigma, seed=2)
        snrs.append(channel_fit(magnitude_phase(data[0])[1]).snr)
    assert snrs[0] > snrs[1] > snrs[2]


def test_min_contrast_bounds_vessel_phase():
    spec = PhantomSpec(background_poly_order=0, min_contrast=1.0)
    ref, vessels, edges = gen_reference_with_masks(spec)
    phase = np.angle(np.asarray(ref))
    tissue = phase[~(vessels | edges)][0]
    assert np.allclose(phase[vessels] - tissue, spec.vessel_phase, atol=1e-9)
    low = PhantomSpec(background_poly_order=0, min_contrast=0.05)
    ref, vessels, edges = gen_reference_with_masks(low)
    phase = np.angle(np.asarray(ref))
    vp = phase[vessels] - phase[~(vessels | edges)][0]
    assert vp.min() >= 0.05 * low.vessel_phase - 1e-9 and vp.max() <= low.vessel_phase + 1e-9
    with pytest.raises(ValueError):
        PhantomSpec(min_contrast=1.5)
