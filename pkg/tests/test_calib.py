import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pednav.calib import (
    CalibrationError,
    CalibrationModel,
    CameraPlacement,
    DegenerateSampleError,
    DisplacementSample,
    GridSpec,
    IllConditionedFitError,
    PlanarMap,
    TooFewDotsError,
    axial_distance,
    detect_grid_dots,
    elevation_angle,
    estimate_focal,
    fit_planar_map,
    map_point,
    pixel_distance,
    pixels_to_world,
    unmap_point,
)
from pednav.synth import render_grid

from .refdata import (
    B_F_FROM_PRINTED_RATIOS,
    B_F_FROM_RAW,
    B_H,
    B_V,
    TRIALS_A,
    TRIALS_B,
)


class TestAxialDistance:
    def test_recorded_trial_row(self):
        assert axial_distance(59.0, 62.6) == pytest.approx(86.0, abs=0.1)

    def test_fixed_placement(self):
        assert axial_distance(56.0, 77.0) == pytest.approx(95.2, abs=0.1)

    def test_axis_aligned(self):
        assert axial_distance(0.0, 12.5) == 12.5

    def test_both_zero_rejected(self):
        with pytest.raises(CalibrationError):
            axial_distance(0.0, 0.0)


class TestElevationAngle:
    def test_recorded_trial_rows(self):
        assert elevation_angle(59.0, 62.6) == pytest.approx(43.3, abs=0.1)
        assert elevation_angle(59.0, 86.0) == pytest.approx(34.5, abs=0.1)

    def test_symmetry(self):
        assert elevation_angle(1.0, 1.0) == pytest.approx(45.0)

    def test_both_zero_rejected(self):
        with pytest.raises(CalibrationError):
            elevation_angle(0.0, 0.0)


class TestPixelDistance:
    def test_recorded_rows(self):
        assert pixel_distance((325, 224), (335, 209)) == pytest.approx(18.0, abs=0.1)
        assert pixel_distance((422, 429), (406, 441)) == pytest.approx(20.0, abs=0.1)

    def test_coincident(self):
        assert pixel_distance((7.5, -2.0), (7.5, -2.0)) == 0.0

    coords = st.floats(-1e6, 1e6)
    points = st.tuples(coords, coords)

    @given(points, points)
    def test_symmetry(self, p, q):
        assert pixel_distance(p, q) == pixel_distance(q, p)

    @given(points, points, points)
    @settings(max_examples=200)
    def test_triangle_inequality(self, p, q, r):
        assert pixel_distance(p, r) <= pixel_distance(p, q) + pixel_distance(q, r) + 1e-6


class TestEstimateFocal:
    def test_single_printed_ratio(self):
        est = estimate_focal([10.8], CameraPlacement(v=56.0, h=77.0))
        assert est.f == pytest.approx(1028.2, abs=1.0)

    def test_three_four_five(self):
        est = estimate_focal([1.0], CameraPlacement(v=3.0, h=4.0))
        assert est.f == pytest.approx(5.0)

    def test_joint_trials_raw_arithmetic(self):
        # Oracle: per-row Pd/Rd by direct arithmetic on the raw coordinates,
        # averaged. The printed ratio column disagrees with its own raw
        # coordinates, so this differs from averaging the printed ratios.
        samples = [
            DisplacementSample(world_a=wa, world_b=wb, pixel_a=pa, pixel_b=pb)
            for wa, wb, pa, pb, *_ in TRIALS_B
        ]
        placement = CameraPlacement(v=B_V, h=B_H)
        ratios = [s.pd / s.rd for s in samples]
        oracle_f = float(np.mean(ratios)) * math.hypot(B_V, B_H)
        assert oracle_f == pytest.approx(B_F_FROM_RAW, abs=1e-9)
        est = estimate_focal(samples, placement)
        assert est.f == pytest.approx(oracle_f, abs=1e-9)
        # The printed per-row ratios land where the recorded f column does.
        printed = estimate_focal([row[6] for row in TRIALS_B], placement)
        assert printed.f == pytest.approx(B_F_FROM_PRINTED_RATIOS, abs=1e-9)
        assert 1024.0 <= printed.f <= 1035.0

    def test_spread_reported(self):
        est = estimate_focal([10.0, 11.0, 10.5], CameraPlacement(v=3.0, h=4.0))
        assert est.ratio_spread == pytest.approx(1.0)
        assert len(est.per_sample_f) == 3

    def test_degenerate_sample_rejected(self):
        bad = DisplacementSample(world_a=(1.0, 1.0), world_b=(1.0, 1.0), pixel_a=(0, 0), pixel_b=(5, 5))
        with pytest.raises(DegenerateSampleError):
            estimate_focal([bad], CameraPlacement(v=3.0, h=4.0))

    def test_no_samples_rejected(self):
        with pytest.raises(CalibrationError):
            estimate_focal([], CameraPlacement(v=3.0, h=4.0))


class TestPixelsToWorld:
    def _calib(self, f=1028.2, v=56.0, h=77.0):
        placement = CameraPlacement(v=v, h=h)
        return CalibrationModel(placement=placement, f=f, map=PlanarMap.from_scale(f / placement.d))

    def test_recorded_row(self):
        assert pixels_to_world(20.0, self._calib()) == pytest.approx(1.85, abs=0.01)

    def test_zero(self):
        assert pixels_to_world(0.0, self._calib()) == 0.0

    def test_inconsistent_printed_row(self):
        # Direct arithmetic; the recorded sheet prints 1.91 and 1.92 for this
        # same input, documented as rounding errata.
        assert pixels_to_world(20.6, self._calib()) == pytest.approx(1.907, abs=0.005)

    def test_linearity(self):
        calib = self._calib()
        rng = np.random.default_rng(3)
        for a, b in rng.uniform(0, 500, (50, 2)):
            assert pixels_to_world(a + b, calib) == pytest.approx(
                pixels_to_world(a, calib) + pixels_to_world(b, calib), rel=1e-12
            )

    def test_camera_constant_identity(self):
        for v, h, *_ in TRIALS_A:
            calib = CalibrationModel.from_samples([9.0], CameraPlacement(v=v, h=h))
            assert abs(calib.f - calib.px_per_cm * calib.placement.d) / calib.f < 1e-9


class TestTableReproduction:
    """Recompute every derived column from the raw coordinates."""

    def test_trials_a(self):
        for v, h, printed_d, printed_theta, rd, p1, p2, printed_pd, printed_ratio in TRIALS_A:
            assert axial_distance(v, h) == pytest.approx(printed_d, abs=0.15)
            assert elevation_angle(v, h) == pytest.approx(printed_theta, abs=0.15)
            pd = pixel_distance(p1, p2)
            assert pd == pytest.approx(printed_pd, abs=0.15)
            assert pd / rd == pytest.approx(printed_ratio, abs=0.4)

    def test_trials_b(self):
        d = axial_distance(B_V, B_H)
        for wa, wb, pa, pb, printed_rd, printed_pd, printed_ratio, printed_f, printed_calc in TRIALS_B:
            s = DisplacementSample(world_a=wa, world_b=wb, pixel_a=pa, pixel_b=pb)
            assert s.pd == pytest.approx(printed_pd, abs=0.15)
            assert s.ratio == pytest.approx(printed_ratio, abs=0.4)
            assert printed_ratio * d == pytest.approx(printed_f, abs=5.0)


def _tilted_map(px_per_cm=10.0, tilt_deg=0.0, rot_deg=0.0):
    """World->pixel ground truth as a pixel->world PlanarMap: scale, in-plane
    rotation, and a perspective row emulating a camera tilt."""
    s = px_per_cm
    a = math.radians(rot_deg)
    h_wp = np.array(
        [
            [s * math.cos(a), -s * math.sin(a), 60.0],
            [s * math.sin(a), s * math.cos(a), 40.0],
            [0.0, math.tan(math.radians(tilt_deg)) * 1e-3, 1.0],
        ]
    )
    return PlanarMap(h=np.linalg.inv(h_wp))


class TestGridFit:
    def test_fronto_parallel_scale(self):
        spec = GridSpec(nx=9, ny=7, pitch_cm=3.0, dot_radius_cm=0.5)
        truth = _tilted_map(px_per_cm=10.0)
        frame = render_grid(spec, truth, size=(640, 480))
        fitted = fit_planar_map(frame, spec)
        assert fitted.rms_px < 0.1
        center_px = fitted.to_pixel(np.array((12.0, 9.0)))
        assert fitted.px_per_cm_at(center_px) == pytest.approx(10.0, abs=0.05)

    def test_identity_scale_homography(self):
        spec = GridSpec(nx=8, ny=6, pitch_cm=5.0, dot_radius_cm=0.8)
        truth = _tilted_map(px_per_cm=10.0)
        frame = render_grid(spec, truth, size=(640, 480))
        fitted = fit_planar_map(frame, spec)
        # Up to normalization the fitted homography matches scale/offset.
        h = fitted.h / fitted.h[2, 2]
        expect = truth.h / truth.h[2, 2]
        assert np.allclose(h, expect, atol=2e-3)

    def test_perspective_tilt_round_trip(self):
        spec = GridSpec(nx=9, ny=7, pitch_cm=3.0, dot_radius_cm=0.5)
        truth = _tilted_map(px_per_cm=10.0, tilt_deg=20.0, rot_deg=8.0)
        frame = render_grid(spec, truth, size=(640, 480))
        fitted = fit_planar_map(frame, spec)
        dots = detect_grid_dots(frame)
        err = np.linalg.norm(fitted.to_pixel(fitted.to_world(dots)) - dots, axis=1)
        assert err.max() < 0.25
        # And against the generating map on the grid nodes.
        nodes = spec.world_points()
        assert np.linalg.norm(fitted.to_pixel(nodes) - truth.to_pixel(nodes), axis=1).max() < 0.35

    def test_noise_residual_budget(self):
        spec = GridSpec(nx=9, ny=7, pitch_cm=3.0, dot_radius_cm=0.5)
        truth = _tilted_map(px_per_cm=10.0, tilt_deg=25.0)
        frame = render_grid(spec, truth, size=(640, 480), noise_sigma=2.0, seed=5)
        fitted = fit_planar_map(frame, spec)
        dots = detect_grid_dots(frame)
        err = np.linalg.norm(fitted.to_pixel(fitted.to_world(dots)) - dots, axis=1)
        assert err.max() < 0.25

    def test_too_few_dots(self):
        spec = GridSpec(nx=9, ny=7, pitch_cm=3.0)
        from pednav.frames import Frame

        blank = Frame(np.full((480, 640), 230, dtype=np.uint8))
        with pytest.raises(TooFewDotsError):
            fit_planar_map(blank, spec)

    def test_radial_term_recovery(self):
        # Distort dot positions with the map's own radial convention and make
        # sure the radial fit brings the residual back down.
        spec = GridSpec(nx=9, ny=7, pitch_cm=3.0, dot_radius_cm=0.5)
        base = _tilted_map(px_per_cm=10.0)
        truth = PlanarMap(h=base.h, k1=0.02)
        frame = render_grid(spec, truth, size=(640, 480))
        plain = fit_planar_map(frame, spec, radial=False)
        radial = fit_planar_map(frame, spec, radial=True)
        assert radial.rms_px < plain.rms_px
        assert radial.rms_px < 0.15
        assert radial.k1 == pytest.approx(0.02, abs=5e-3)


class TestMapPoint:
    def test_grid_dots_map_to_nodes(self):
        spec = GridSpec(nx=9, ny=7, pitch_cm=3.0, dot_radius_cm=0.5)
        truth = _tilted_map(px_per_cm=10.0, tilt_deg=12.0)
        frame = render_grid(spec, truth, size=(640, 480))
        fitted = fit_planar_map(frame, spec)
        dots = detect_grid_dots(frame)
        world = fitted.to_world(dots)
        nodes = spec.world_points()
        # Every detected dot lands on its nearest node within the rms bound.
        for w in world:
            d = np.linalg.norm(nodes - w, axis=1).min()
            assert d < 0.05

    def test_round_trip_identity(self):
        pmap = _tilted_map(px_per_cm=10.0, tilt_deg=18.0, rot_deg=-11.0)
        rng = np.random.default_rng(11)
        pts = rng.uniform((50, 50), (590, 430), (1000, 2))
        back = pmap.to_pixel(pmap.to_world(pts))
        assert np.abs(back - pts).max() < 0.1

    def test_pure_scale(self):
        pmap = PlanarMap.from_scale(10.0)
        assert np.allclose(pmap.to_world((10.0, 0.0)), (1.0, 0.0))

    def test_extrapolation_flagged(self):
        pmap = PlanarMap(h=np.diag((0.1, 0.1, 1.0)), region=(100, 100, 200, 200))
        assert not map_point(pmap, (150, 150)).extrapolated
        assert map_point(pmap, (50, 50)).extrapolated
        assert np.allclose(unmap_point(pmap, map_point(pmap, (50, 50)).xy), (50, 50))

    def test_degenerate_homography_rejected(self):
        with pytest.raises(CalibrationError):
            PlanarMap(h=np.zeros((3, 3)))


class TestPersistence:
    def test_exact_round_trip(self, tmp_path):
        placement = CameraPlacement(v=59.0, h=62.6)
        pmap = PlanarMap(h=_tilted_map(px_per_cm=10.8, tilt_deg=7.0).h, k1=0.0123456789012345)
        calib = CalibrationModel(placement=placement, f=1028.1234567890123, map=pmap)
        path = tmp_path / "cam.calib"
        calib.save(path)
        loaded = CalibrationModel.load(path)
        assert loaded.placement.v == calib.placement.v
        assert loaded.placement.h == calib.placement.h
        assert loaded.f == calib.f
        assert np.array_equal(loaded.map.h, calib.map.h)
        assert loaded.map.k1 == calib.map.k1

    def test_header_line(self, tmp_path):
        calib = CalibrationModel.from_samples([10.8], CameraPlacement(v=56.0, h=77.0))
        path = tmp_path / "cam.calib"
        calib.save(path)
        assert path.read_text().splitlines()[0] == "pednav-calib v1"

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "cam.calib"
        path.write_text("something else\nV=1\n")
        with pytest.raises(CalibrationError):
            CalibrationModel.load(path)


class TestIllConditioned:
    def test_collinear_dots_rejected(self):
        from pednav.calib import _homography_dlt

        src = np.column_stack((np.linspace(0, 100, 20), np.linspace(0, 50, 20)))
        dst = src * 0.1
        with pytest.raises((IllConditionedFitError, CalibrationError)):
            h, cond = _homography_dlt(src, dst)
            if cond > 1e8:
                raise IllConditionedFitError(str(cond))
