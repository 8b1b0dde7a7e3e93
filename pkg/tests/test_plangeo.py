import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pednav.calib import CalibrationModel, CameraPlacement, GridSpec, PlanarMap, fit_planar_map
from pednav.matcher import Match
from pednav.plangeo import (
    Cylinder,
    PlanError,
    SurgicalPlan,
    UnregisteredError,
    alignment_residual,
    axis_from_angle,
    build_cylinder,
    clearance,
    drill_axis,
    finalize_registration,
    register,
)
from pednav.synth import render_grid


def make_plan(**overrides):
    base = dict(
        line_x=(26.0, 29.6, 33.2),
        entry_point=(29.6, 37.0),
        axis_angle_deg=15.0,
        canal_min_width_cm=0.7,
        canal_length_cm=4.0,
        tip_offset_cm=3.0,
    )
    base.update(overrides)
    return SurgicalPlan(**base)


def scale_calib(px_per_cm=10.8):
    return CalibrationModel.from_samples([px_per_cm], CameraPlacement(v=56.0, h=77.0))


class TestAlignmentResidual:
    def test_exact_coincidence(self):
        plan = make_plan()
        calib = scale_calib()
        needles = [(x * 10.8, 150.0 + 10 * i) for i, x in enumerate(plan.line_x)]
        assert alignment_residual(needles, plan, calib) == pytest.approx(0.0, abs=1e-9)

    def test_single_offset(self):
        plan = make_plan()
        calib = scale_calib()
        needles = [((plan.line_x[0] + 0.3) * 10.8, 100.0),
                   (plan.line_x[1] * 10.8, 120.0),
                   (plan.line_x[2] * 10.8, 140.0)]
        assert alignment_residual(needles, plan, calib) == pytest.approx(0.3, abs=0.01)

    def test_grid_calibrated_scene(self):
        # A registration scene via a fitted grid map: needles placed by the
        # generating map at known world offsets; the fitted map carries the
        # rendering tolerance.
        spec = GridSpec(nx=9, ny=7, pitch_cm=3.0, dot_radius_cm=0.5)
        s = 10.0
        truth = PlanarMap(h=np.linalg.inv(np.array([[s, 0, 60.0], [0, s, 40.0], [0, 0, 1.0]])))
        frame = render_grid(spec, truth, size=(640, 480))
        fitted = fit_planar_map(frame, spec)
        plan = make_plan(line_x=(6.0, 12.0, 18.0))
        offsets = (0.05, 0.10, 0.20)
        needles = [truth.to_pixel(np.array((x + o, 9.0))) for x, o in zip(plan.line_x, offsets)]
        calib = CalibrationModel.from_grid_map(fitted, CameraPlacement(v=56.0, h=77.0))
        assert alignment_residual(needles, plan, calib) == pytest.approx(0.20, abs=0.02)

    def test_duplicate_needles_rejected(self):
        with pytest.raises(PlanError):
            alignment_residual([(1, 1), (1, 1), (2, 2)], make_plan(), scale_calib())

    def test_common_offset_invariance(self):
        calib = scale_calib()
        rng = np.random.default_rng(8)
        for _ in range(20):
            shift = rng.uniform(-5, 5)
            lx = np.sort(rng.uniform(5, 40, 3))
            if lx[0] == lx[1] or lx[1] == lx[2]:
                continue
            needles = [(v * 10.8 + rng.uniform(-3, 3), 100.0 + i) for i, v in enumerate(lx)]
            plan_a = make_plan(line_x=tuple(lx))
            plan_b = make_plan(line_x=tuple(lx + shift))
            shifted = [(u + shift * 10.8, v) for u, v in needles]
            ra = alignment_residual(needles, plan_a, calib)
            rb = alignment_residual(shifted, plan_b, calib)
            assert ra == pytest.approx(rb, abs=1e-9)


class TestFinalizeRegistration:
    def test_within_tolerance(self):
        assert finalize_registration(0.05, 0.1).finalized

    def test_above_tolerance(self):
        assert not finalize_registration(0.2, 0.1).finalized

    def test_closed_boundary(self):
        assert finalize_registration(0.1, 0.1).finalized

    def test_register_convenience(self):
        plan = make_plan()
        calib = scale_calib()
        needles = [(x * 10.8, 100.0 + i) for i, x in enumerate(plan.line_x)]
        reg = register(needles, plan, calib)
        assert reg.finalized and reg.residual == pytest.approx(0.0, abs=1e-9)
        assert reg.needle_points is not None


class TestBuildCylinder:
    def test_fifteen_degrees(self):
        cyl = build_cylinder(make_plan(axis_angle_deg=15.0))
        assert cyl.radius == pytest.approx(0.35)
        assert cyl.height == pytest.approx(4.0)
        want = (math.sin(math.radians(15)), -math.cos(math.radians(15)), 0.0)
        assert np.allclose(cyl.axis_dir, want)

    def test_zero_degrees_vertical(self):
        cyl = build_cylinder(make_plan(axis_angle_deg=0.0))
        assert np.allclose(cyl.axis_dir, (0.0, -1.0, 0.0))

    def test_axis_parametrization_round_trip(self):
        cyl = build_cylinder(make_plan())
        for t in np.linspace(0.0, cyl.height, 9):
            p = cyl.base_center + t * cyl.axis_dir
            _, depth, inside = clearance(p, cyl)
            assert depth == pytest.approx(t, abs=1e-12)
            assert inside

    def test_invalid_plans(self):
        with pytest.raises(PlanError):
            make_plan(canal_min_width_cm=0.0)
        with pytest.raises(PlanError):
            make_plan(line_x=(3.0, 2.0, 1.0))


def brute_clearance(p, cyl, n=10001):
    """Brute-force oracle: nearest-point scan along a dense axis grid (two
    refinement stages), independent of the projection formula."""
    p = np.asarray(p, dtype=float)
    lo, hi = -3.0 * cyl.height - 10.0, 4.0 * cyl.height + 10.0
    t = np.linspace(lo, hi, n)
    for _ in range(3):
        pts = cyl.base_center + t[:, None] * cyl.axis_dir
        d2 = ((p - pts) ** 2).sum(axis=1)
        i = int(np.argmin(d2))
        span = t[1] - t[0]
        t = np.linspace(t[i] - span, t[i] + span, n)
    pts = cyl.base_center + t[:, None] * cyl.axis_dir
    d2 = ((p - pts) ** 2).sum(axis=1)
    i = int(np.argmin(d2))
    depth = float(t[i])
    radial = math.sqrt(float(d2[i]))
    inside = radial <= cyl.radius and 0.0 <= depth <= cyl.height
    return cyl.radius - radial, depth, inside


class TestClearance:
    def test_base_point(self):
        cyl = build_cylinder(make_plan())
        rc, depth, inside = clearance(cyl.base_center, cyl)
        assert depth == 0.0
        assert rc == pytest.approx(cyl.radius)
        assert inside

    def test_just_outside_wall_at_top(self):
        cyl = build_cylinder(make_plan())
        normal = np.array((-cyl.axis_dir[1], cyl.axis_dir[0], 0.0))
        p = cyl.base_center + cyl.height * cyl.axis_dir + (cyl.radius + 0.1) * normal
        rc, depth, inside = clearance(p, cyl)
        assert not inside
        assert rc == pytest.approx(-0.1, abs=1e-9)
        assert depth == pytest.approx(cyl.height, abs=1e-9)

    def test_monte_carlo_oracle(self):
        rng = np.random.default_rng(42)
        agree = 0
        total = 0
        for _ in range(100):
            axis = rng.normal(size=3)
            cyl = Cylinder(
                base_center=rng.uniform(-5, 5, 3),
                axis_dir=axis,
                radius=rng.uniform(0.2, 2.0),
                height=rng.uniform(0.5, 6.0),
            )
            for _ in range(10):
                p = cyl.base_center + rng.uniform(-1.5, 1.5, 3) * (cyl.height + cyl.radius)
                rc, depth, inside = clearance(p, cyl)
                rc_o, depth_o, inside_o = brute_clearance(p, cyl)
                if abs(rc) < 1e-6 or min(abs(depth), abs(depth - cyl.height)) < 1e-6:
                    continue  # boundary exclusion
                total += 1
                assert abs(rc - rc_o) < 1e-3
                assert abs(depth - depth_o) < 1e-3
                agree += inside == inside_o
        assert total > 900
        assert agree == total

    def test_depth_linearity(self):
        cyl = build_cylinder(make_plan())
        normal = np.array((-cyl.axis_dir[1], cyl.axis_dir[0], 0.0))
        offset = 0.2 * normal
        for t in np.linspace(-1.0, 5.0, 13):
            _, depth, _ = clearance(cyl.base_center + t * cyl.axis_dir + offset, cyl)
            assert depth == pytest.approx(t, abs=1e-12)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_rigid_invariance(self, seed):
        rng = np.random.default_rng(seed)
        cyl = Cylinder(
            base_center=rng.uniform(-3, 3, 3),
            axis_dir=rng.normal(size=3),
            radius=rng.uniform(0.2, 2.0),
            height=rng.uniform(0.5, 6.0),
        )
        p = rng.uniform(-6, 6, 3)
        # random rotation from a quaternion plus a random translation
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        w, x, y, z = q
        rot = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )
        t = rng.uniform(-10, 10, 3)
        cyl2 = Cylinder(
            base_center=rot @ cyl.base_center + t,
            axis_dir=rot @ cyl.axis_dir,
            radius=cyl.radius,
            height=cyl.height,
        )
        rc1, d1, in1 = clearance(p, cyl)
        rc2, d2, in2 = clearance(rot @ p + t, cyl2)
        scale = max(1.0, abs(rc1), abs(d1))
        assert abs(rc1 - rc2) / scale < 1e-9
        assert abs(d1 - d2) / scale < 1e-9
        if min(abs(rc1), abs(d1), abs(d1 - cyl.height)) > 1e-8:
            assert in1 == in2


def fake_match(cx, cy, angle):
    return Match(
        centroid=np.array((cx, cy)), angle=angle, score=95.0, target_score=90.0,
        fit_error=0.1, model_coverage=96.0, target_coverage=92.0, n_common=150,
    )


class TestDrillAxis:
    def test_aligned_with_cylinder_axis(self):
        plan = make_plan(axis_angle_deg=15.0)
        calib = scale_calib()
        cyl = build_cylinder(plan)
        reg = finalize_registration(0.0, 0.1)
        line = drill_axis(fake_match(320.0, 240.0, 15.0), calib, plan, reg)
        dot = float(line.direction @ cyl.axis_dir)
        assert math.degrees(math.acos(min(1.0, dot))) <= 0.5
        assert np.allclose(line.point[:2], np.array((320.0, 240.0)) / 10.8)

    def test_rotated_marker_deviates_by_ten_degrees(self):
        plan = make_plan(axis_angle_deg=15.0)
        calib = scale_calib()
        cyl = build_cylinder(plan)
        reg = finalize_registration(0.0, 0.1)
        line = drill_axis(fake_match(320.0, 240.0, 25.0), calib, plan, reg)
        dot = float(np.clip(line.direction @ cyl.axis_dir, -1, 1))
        assert math.degrees(math.acos(dot)) == pytest.approx(10.0, abs=0.5)

    def test_unregistered_rejected(self):
        plan = make_plan()
        reg = finalize_registration(0.5, 0.1)
        with pytest.raises(UnregisteredError):
            drill_axis(fake_match(320.0, 240.0, 0.0), scale_calib(), plan, reg)


class TestPlanFile:
    def test_round_trip(self, tmp_path):
        plan = make_plan()
        path = tmp_path / "v1.plan"
        plan.save(path)
        assert path.read_text().splitlines()[0] == "pednav-plan v1"
        back = SurgicalPlan.load(path)
        assert back == plan

    def test_missing_key(self, tmp_path):
        path = tmp_path / "bad.plan"
        path.write_text("pednav-plan v1\nline_x = 1,2,3\n")
        with pytest.raises(PlanError):
            SurgicalPlan.load(path)

    def test_axis_helper(self):
        assert np.allclose(axis_from_angle(90.0), (1.0, 0.0, 0.0), atol=1e-12)
