import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pairqed.lattice import (
    ATOM_COUNTS,
    BACKGROUND_COUNTS,
    AmbiguousAssignmentError,
    AtomImage,
    CalibrationError,
    LatticeGeometry,
    OverlapError,
    SiteDifference,
    assign_site,
    assign_sites,
    calibrate_angles,
    default_psf_fwhm,
    deskew,
    fit_psf,
    phase_from_sites,
    projected_widths,
    read_image,
    reskew,
    synth_image,
    synth_pairs,
    write_centroids,
    write_image,
)

GEOM = LatticeGeometry.measured()
ints = st.integers(-40, 40)


# phase


@pytest.mark.parametrize(
    "d, phi",
    [((0, 1), np.pi), ((0, 2), 0.0), ((1, 0), 2 * np.pi * 532 / 780), ((2, 1), (4 * np.pi * 532 / 780 + np.pi) % (2 * np.pi))],
)
def test_phase_examples(d, phi):
    assert phase_from_sites(SiteDifference(*d)) == pytest.approx(phi, abs=1e-12)


def test_phase_example_value():
    assert phase_from_sites(SiteDifference(1, 0)) == pytest.approx(4.2854, abs=1e-4)


def test_same_site_is_not_a_pair():
    with pytest.raises(ValueError):
        SiteDifference(0, 0)


@given(ints, ints)
def test_phase_in_range_and_period_two_along_y(dnx, dny):
    if (dnx, dny) == (0, 0) or (dnx, dny + 2) == (0, 0):
        return
    a = phase_from_sites(SiteDifference(dnx, dny))
    assert 0 <= a < 2 * np.pi
    assert phase_from_sites(SiteDifference(dnx, dny + 2)) == a


@given(ints, ints)
def test_phase_is_odd(dnx, dny):
    if (dnx, dny) == (0, 0):
        return
    d = SiteDifference(dnx, dny)
    a, b = phase_from_sites(d), phase_from_sites(-d)
    assert np.angle(np.exp(1j * (a + b))) == pytest.approx(0.0, abs=1e-9)


# geometry


def test_geometry_invariants():
    with pytest.raises(ValueError):
        LatticeGeometry(period_x=0.0)
    with pytest.raises(ValueError):
        LatticeGeometry(alpha=np.deg2rad(10))


def test_deskew_identity_without_angles():
    x, y = np.array([0.3, -1.2]), np.array([2.0, 0.1])
    xd, yd = deskew(x, y, LatticeGeometry())
    np.testing.assert_array_equal(xd, x)
    np.testing.assert_array_equal(yd, y)


def test_deskew_matches_rotation_then_shear():
    a, b = GEOM.alpha, GEOM.beta
    rot = np.array([[np.cos(a), np.sin(a)], [-np.sin(a), np.cos(a)]])
    shear = np.array([[np.cos(b), -np.sin(b)], [0, 1]])
    xd, yd = deskew(1.3, -0.7, GEOM)
    np.testing.assert_allclose([xd, yd], shear @ rot @ [1.3, -0.7], atol=1e-15)
    assert np.linalg.det(GEOM.transform()) == pytest.approx(np.cos(b), abs=1e-12)


@settings(max_examples=50)
@given(st.floats(-50, 50), st.floats(-50, 50))
def test_deskew_round_trip(x, y):
    xr, yr = reskew(*deskew(x, y, GEOM), GEOM)
    assert abs(xr - x) < 1e-12 * max(1, abs(x) + abs(y)) and abs(yr - y) < 1e-12 * max(1, abs(x) + abs(y))


@settings(max_examples=50)
@given(st.floats(-5, 5), st.floats(-5, 5), st.tuples(*[st.floats(-20, 20)] * 4))
def test_deskew_is_linear(a, b, pts):
    x1, y1, x2, y2 = pts
    lhs = np.array(deskew(a * x1 + b * x2, a * y1 + b * y2, GEOM))
    rhs = a * np.array(deskew(x1, y1, GEOM)) + b * np.array(deskew(x2, y2, GEOM))
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * (1 + 20 * (abs(a) + abs(b))))


# site assignment


@given(ints, ints, st.floats(-5, 5), st.floats(-5, 5))
def test_exact_positions_assign_exactly(dnx, dny, x0, y0):
    if (dnx, dny) == (0, 0):
        return
    p1 = (x0, y0)
    p2 = (x0 + dnx * GEOM.period_x, y0 + dny * GEOM.period_y)
    d, residual = assign_site(p1, p2, GEOM)
    assert (d.dnx, d.dny) == (dnx, dny)
    assert residual < 1e-9


def test_ambiguous_pair_raises_or_is_flagged():
    p1, p2 = (0.0, 0.0), (0.5 * GEOM.period_x, GEOM.period_y)
    with pytest.raises(AmbiguousAssignmentError):
        assign_site(p1, p2, GEOM)
    (res,) = assign_sites([(p1, p2)], GEOM)
    assert res.ambiguous and res.difference is None
    with pytest.raises(AmbiguousAssignmentError):
        assign_sites([(p1, p2)], GEOM, discard=False)


def _deskewed(cam):
    x, y = deskew(cam[..., 0], cam[..., 1], GEOM)
    return np.stack([x, y], axis=-1)


def test_misassignment_rate_at_reference_precision():
    truth, cam = synth_pairs(10_000, GEOM, sigma=0.030, seed=1)
    res = assign_sites(_deskewed(cam), GEOM)
    wrong = sum(
        r.difference is not None and (r.difference.dnx, r.difference.dny) != (t.dnx, t.dny)
        for r, t in zip(res, truth)
    )
    assert wrong / len(truth) < 1e-3


def test_difference_histogram_peak_width():
    _, cam = synth_pairs(10_000, GEOM, sigma=0.030, seed=2)
    pts = _deskewed(cam)
    diffs = pts[:, 1] - pts[:, 0]
    wx, wy = projected_widths(diffs, 0.0, GEOM)
    assert wx == pytest.approx(0.100, rel=0.1)
    assert wy == pytest.approx(0.100, rel=0.1)


# images


def test_zero_amplitude_is_background():
    img = synth_image([(16, 16)], amplitude=0.0, noise_seed=3, shape=(64, 64))
    assert img.counts.mean() == pytest.approx(BACKGROUND_COUNTS, rel=0.01)


def test_integrated_counts_per_atom():
    img = synth_image([(16.3, 15.8)])
    assert (img.counts - BACKGROUND_COUNTS).sum() == pytest.approx(ATOM_COUNTS, rel=0.02)


def test_default_psf_width():
    assert default_psf_fwhm() == pytest.approx((1.5 * 1.23, 1.5 * 1.78))


def test_synth_image_is_seeded_and_validated():
    a = synth_image([(10, 12)], noise_seed=7).counts
    b = synth_image([(10, 12)], noise_seed=7).counts
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        synth_image([(40, 3)])
    with pytest.raises(ValueError):
        AtomImage(np.array([[-1.0]]))


def test_noiseless_fit_recovers_centroid():
    (fit,) = fit_psf(synth_image([(15.37, 16.81)]))
    assert abs(fit.x - 15.37) < 0.01 and abs(fit.y - 16.81) < 0.01
    assert fit.amplitude == pytest.approx(ATOM_COUNTS, rel=1e-3)
    assert fit.background == pytest.approx(BACKGROUND_COUNTS, rel=1e-3)


def test_noisy_fit_precision_and_width():
    rng = np.random.default_rng(11)
    err, fx, fy = [], [], []
    for k in range(60):
        x0, y0 = rng.uniform(12, 20, 2)
        (fit,) = fit_psf(synth_image([(x0, y0)], noise_seed=100 + k))
        err += [fit.x - x0, fit.y - y0]
        fx.append(fit.fwhm_x)
        fy.append(fit.fwhm_y)
    assert np.std(err) < 0.15
    tx, ty = default_psf_fwhm()
    assert np.median(fx) == pytest.approx(tx, rel=0.05)
    assert np.median(fy) == pytest.approx(ty, rel=0.05)


def test_two_atom_fit_and_overlap():
    fits = fit_psf(synth_image([(10.2, 14.0), (19.6, 17.3)], noise_seed=5), n_atoms=2)
    np.testing.assert_allclose([(f.x, f.y) for f in fits], [(10.2, 14.0), (19.6, 17.3)], atol=0.1)
    with pytest.raises(OverlapError):
        fit_psf(synth_image([(15.0, 15.0), (15.8, 15.4)]), n_atoms=2)


# calibration


def test_calibration_recovers_reference_angles():
    _, cam = synth_pairs(20_000, GEOM, seed=4)
    alpha, beta = calibrate_angles(cam, GEOM)
    assert abs(np.rad2deg(alpha) - 0.64) < 0.1
    assert abs(np.rad2deg(beta) - 1.6) < 0.1


def test_calibration_of_aligned_lattice():
    geom = LatticeGeometry()
    _, cam = synth_pairs(20_000, geom, seed=5)
    alpha, beta = calibrate_angles(cam, geom)
    assert abs(np.rad2deg(alpha)) < 0.05 and abs(np.rad2deg(beta)) < 0.05


def test_calibration_is_translation_invariant():
    _, cam = synth_pairs(5_000, GEOM, seed=6)
    assert calibrate_angles(cam, GEOM) == calibrate_angles(cam + np.array([3.7, -1.1]), GEOM)


def test_calibration_needs_data():
    _, cam = synth_pairs(100, GEOM, seed=7)
    with pytest.raises(CalibrationError):
        calibrate_angles(cam, GEOM)
    with pytest.raises(ValueError):
        calibrate_angles(np.zeros((2000, 3)), GEOM)


# full pipeline


def test_pipeline_round_trip_through_images():
    truth, cam = synth_pairs(400, GEOM, sigma=0.030, seed=8)
    scale = GEOM.pixel_scale
    shape = (48, 48)
    wrong = used = 0
    for k, (t, pair) in enumerate(zip(truth, cam)):
        px = pair / scale
        px = px - px.mean(axis=0) + np.array([shape[1], shape[0]]) / 2
        if np.hypot(*(px[1] - px[0])) < 2.5 or np.any(px < 3) or np.any(px > shape[0] - 3):
            continue
        img = synth_image(px, shape=shape, noise_seed=k)
        try:
            fits = fit_psf(img, n_atoms=2)
        except OverlapError:
            continue
        # match fits to atoms by proximity, then undo the recentering
        got = np.array([(f.x, f.y) for f in fits])
        if np.linalg.norm(got[0] - px[0]) > np.linalg.norm(got[0] - px[1]):
            got = got[::-1]
        got_um = (got - px + pair / scale) * scale
        (res,) = assign_sites([_deskewed(got_um)], GEOM)
        if res.ambiguous:
            continue
        used += 1
        wrong += (res.difference.dnx, res.difference.dny) != (t.dnx, t.dny)
    assert used > 300
    assert wrong / used < 1e-3


# I/O


def test_image_round_trip(tmp_path):
    img = synth_image([(8, 9)], shape=(16, 20), noise_seed=1)
    pgm, side = write_image(tmp_path / "frame.pgm", img)
    assert pgm.read_bytes().startswith(b"P5\n20 16\n65535\n")
    back = read_image(pgm)
    np.testing.assert_array_equal(back.counts, img.counts)
    assert back.pixel_scale == img.pixel_scale and back.background == img.background


def test_centroid_csv(tmp_path):
    fits = fit_psf(synth_image([(10.0, 11.0)]))
    path = tmp_path / "c.csv"
    write_centroids(path, fits, frame=0)
    write_centroids(path, fits, frame=1, append=True)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("frame,x_px,y_px")
    assert len(lines) == 3 and lines[2].startswith("1,10.0000")
