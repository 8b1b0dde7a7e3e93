"""Registration against the pre-operative reference lines and the pedicle
corridor geometry: cylinder construction, clearance/depth queries, and the
drill axis recovered from a marker match.

The plan plane is the calibrated world plane embedded at z = 0; the corridor
axis lies in that plane. The plan vertical is the -y direction, so an axis
inclined by ``a`` degrees is (sin a, -cos a, 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .calib import CalibrationModel

PLAN_HEADER = "pednav-plan v1"
DEFAULT_REGISTRATION_TOL_CM = 0.1


class PlanError(ValueError):
    """Invalid plan input."""


class UnregisteredError(RuntimeError):
    """A navigation query was made before registration was finalized."""


@dataclass(frozen=True)
class SurgicalPlan:
    """Numeric outputs of pre-operative planning, in world centimeters."""

    line_x: tuple[float, float, float]   # reference-line x positions, increasing
    entry_point: tuple[float, float]     # drill entry in the plan plane
    axis_angle_deg: float                # canal axis inclination vs the plan vertical
    canal_min_width_cm: float
    canal_length_cm: float
    tip_offset_cm: float = 0.0           # marker centroid to drill tip, along the axis

    def __post_init__(self) -> None:
        if len(self.line_x) != 3 or not (self.line_x[0] < self.line_x[1] < self.line_x[2]):
            raise PlanError("line_x must be three strictly increasing positions")
        if self.canal_min_width_cm <= 0 or self.canal_length_cm <= 0:
            raise PlanError("canal width and length must be positive")

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            "\n".join(
                [
                    PLAN_HEADER,
                    "line_x = " + ",".join(f"{x:.17g}" for x in self.line_x),
                    f"entry = {self.entry_point[0]:.17g},{self.entry_point[1]:.17g}",
                    f"axis_angle_deg = {self.axis_angle_deg:.17g}",
                    f"canal_min_width_cm = {self.canal_min_width_cm:.17g}",
                    f"canal_length_cm = {self.canal_length_cm:.17g}",
                    f"tip_offset_cm = {self.tip_offset_cm:.17g}",
                ]
            )
            + "\n"
        )

    @classmethod
    def load(cls, path: str | Path) -> "SurgicalPlan":
        lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
        if not lines or lines[0] != PLAN_HEADER:
            raise PlanError(f"{path}: missing '{PLAN_HEADER}' header")
        kv: dict[str, str] = {}
        for ln in lines[1:]:
            if "=" not in ln:
                raise PlanError(f"{path}: bad line {ln!r}")
            key, val = ln.split("=", 1)
            kv[key.strip()] = val.strip()
        try:
            lx = tuple(float(t) for t in kv["line_x"].split(","))
            entry = tuple(float(t) for t in kv["entry"].split(","))
            return cls(
                line_x=lx,  # type: ignore[arg-type]
                entry_point=entry,  # type: ignore[arg-type]
                axis_angle_deg=float(kv["axis_angle_deg"]),
                canal_min_width_cm=float(kv["canal_min_width_cm"]),
                canal_length_cm=float(kv["canal_length_cm"]),
                tip_offset_cm=float(kv.get("tip_offset_cm", "0")),
            )
        except KeyError as exc:
            raise PlanError(f"{path}: missing key {exc}") from exc


@dataclass(frozen=True)
class Cylinder:
    """The drill corridor: base disk center, unit axis, radius, height (cm)."""

    base_center: np.ndarray
    axis_dir: np.ndarray
    radius: float
    height: float

    def __post_init__(self) -> None:
        base = np.asarray(self.base_center, dtype=float).reshape(3)
        axis = np.asarray(self.axis_dir, dtype=float).reshape(3)
        norm = float(np.linalg.norm(axis))
        if norm < 1e-12:
            raise PlanError("axis direction must be nonzero")
        if self.radius <= 0 or self.height <= 0:
            raise PlanError("radius and height must be positive")
        object.__setattr__(self, "base_center", base)
        object.__setattr__(self, "axis_dir", axis / norm)


@dataclass(frozen=True)
class Registration:
    """Outcome of aligning the live view to the reference lines. Built through
    finalize_registration, which enforces finalized => residual within tolerance."""

    needle_points: tuple[tuple[float, float], ...] | None
    residual: float
    finalized: bool


@dataclass(frozen=True)
class Line:
    """A world line: a point on it and a unit direction."""

    point: np.ndarray
    direction: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.point, dtype=float).reshape(3)
        d = np.asarray(self.direction, dtype=float).reshape(3)
        n = float(np.linalg.norm(d))
        if n < 1e-12:
            raise PlanError("line direction must be nonzero")
        # Leave already-unit vectors untouched so serialization round-trips
        # reproduce them bit for bit.
        object.__setattr__(self, "point", p)
        object.__setattr__(self, "direction", d if abs(n - 1.0) < 1e-12 else d / n)


def plan_vertical() -> np.ndarray:
    """Unit direction of the plan's vertical reference (toward decreasing y)."""
    return np.array((0.0, -1.0, 0.0))


def axis_from_angle(angle_deg: float) -> np.ndarray:
    """In-plane unit axis at ``angle_deg`` from the plan vertical."""
    a = math.radians(angle_deg)
    return np.array((math.sin(a), -math.cos(a), 0.0))


def alignment_residual(
    needles,
    plan: SurgicalPlan,
    calib: CalibrationModel,
) -> float:
    """Worst horizontal world deviation between the three marked needles and
    the three reference lines (matched left to right)."""
    pts = np.asarray(needles, dtype=float).reshape(3, 2)
    if len({tuple(p) for p in pts.tolist()}) != 3:
        raise PlanError("three distinct needle points required")
    world = calib.map.to_world(pts)
    return float(np.max(np.abs(world[:, 0] - np.asarray(plan.line_x))))


def finalize_registration(
    residual: float,
    tol: float = DEFAULT_REGISTRATION_TOL_CM,
    needles=None,
) -> Registration:
    """Registration is finalized exactly when the residual is within tolerance
    (closed bound)."""
    pts = None
    if needles is not None:
        pts = tuple((float(u), float(v)) for u, v in np.asarray(needles, dtype=float).reshape(3, 2))
    return Registration(needle_points=pts, residual=float(residual), finalized=residual <= tol)


def register(
    needles,
    plan: SurgicalPlan,
    calib: CalibrationModel,
    tol: float = DEFAULT_REGISTRATION_TOL_CM,
) -> Registration:
    """Convenience: residual plus finalization in one step."""
    return finalize_registration(alignment_residual(needles, plan, calib), tol, needles=needles)


def build_cylinder(plan: SurgicalPlan) -> Cylinder:
    """The corridor cylinder: base at the entry point, axis inclined by the
    plan angle, radius half the minimum canal width, height the canal length."""
    base = np.array((plan.entry_point[0], plan.entry_point[1], 0.0))
    return Cylinder(
        base_center=base,
        axis_dir=axis_from_angle(plan.axis_angle_deg),
        radius=plan.canal_min_width_cm / 2.0,
        height=plan.canal_length_cm,
    )


def clearance(p, cyl: Cylinder) -> tuple[float, float, bool]:
    """(radial_clearance, axial_depth, inside) of a world point vs the corridor.

    Depth is the signed projection on the axis from the base; radial clearance
    is radius minus the off-axis distance (negative outside the wall). Inside
    requires both the radial bound and 0 <= depth <= height.
    """
    p = np.asarray(p, dtype=float).reshape(3)
    rel = p - cyl.base_center
    depth = float(rel @ cyl.axis_dir)
    radial = float(np.linalg.norm(rel - depth * cyl.axis_dir))
    inside = radial <= cyl.radius and 0.0 <= depth <= cyl.height
    return cyl.radius - radial, depth, inside


def drill_axis(
    match,
    calib: CalibrationModel,
    plan: SurgicalPlan,
    registration: Registration,
) -> Line:
    """World line of the drill: through the marker centroid mapped to world,
    along the match angle taken through the calibration map.

    The marker is mounted so the drill axis passes through its centroid; at
    match angle zero the axis points along the image's -y direction.
    """
    if not registration.finalized:
        raise UnregisteredError("registration has not been finalized")
    c = np.asarray(match.centroid, dtype=float)
    a = math.radians(match.angle)
    dir_px = np.array((math.sin(a), -math.cos(a)))
    w0 = calib.map.to_world(c)
    w1 = calib.map.to_world(c + dir_px)
    d = w1 - w0
    return Line(point=np.array((w0[0], w0[1], 0.0)), direction=np.array((d[0], d[1], 0.0)))
