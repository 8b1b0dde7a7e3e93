"""Deterministic synthetic scene generation standing in for the camera at
desk scale: the canonical marker figure, dot calibration grids, registration
needles, and scripted drill-insertion sequences with exact ground truth.

Rendering is signed-distance based: the intensity ramps linearly across a
+-AA_HALF_WIDTH band around each outline, so the 50% crossing sits exactly
on the vector outline. Every render is a pure function of (spec, pose, seed).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import plangeo
from .frames import Frame, write_seq
from .plangeo import SurgicalPlan, build_cylinder

AA_HALF_WIDTH = 0.75  # px; half-width of the linear intensity ramp at outlines
BG_LEVEL = 230
FG_LEVEL = 25

SCENARIO_HEADER = "pednav-scenario v1"


class RenderError(ValueError):
    """Scene content does not fit the requested frame."""


@dataclass(frozen=True)
class MarkerSpec:
    """The marker's printed figure, in marker coordinates (cm, center origin,
    y down): the square border band with an L-shaped notch bitten out of its
    top-left corner, plus an off-center filled dot. The bite and the dot kill
    every quarter-turn self-symmetry.
    """

    side: float = 2.5
    band_cm: float = 0.30
    notch_along_top_cm: float = 1.6
    notch_along_left_cm: float = 1.2
    dot_center: tuple[float, float] = (0.45, 0.30)
    dot_radius_cm: float = 0.30

    def outline_polygon(self) -> np.ndarray:
        """The notched band as one closed polygon (the bite opens the band's
        hole to the outside, so a single ring suffices)."""
        s = self.side / 2.5
        o = self.side / 2.0
        i = o - self.band_cm * s
        nw = self.notch_along_top_cm * s
        nh = self.notch_along_left_cm * s
        return np.array(
            [
                (-o + nw, -o),
                (o, -o),
                (o, o),
                (-o, o),
                (-o, -o + nh),
                (-i, -o + nh),
                (-i, i),
                (i, i),
                (i, -i),
                (-o + nw, -i),
            ]
        )

    def dot(self) -> tuple[np.ndarray, float]:
        s = self.side / 2.5
        return np.asarray(self.dot_center, dtype=float) * s, self.dot_radius_cm * s

    def outline_points(self, step_cm: float = 0.02) -> np.ndarray:
        """Dense samples along every outline, for length and symmetry checks."""
        pts: list[np.ndarray] = []
        poly = self.outline_polygon()
        for a, b in zip(poly, np.roll(poly, -1, axis=0)):
            seg = np.linalg.norm(b - a)
            n = max(2, int(math.ceil(seg / step_cm)))
            t = np.linspace(0.0, 1.0, n, endpoint=False)[:, None]
            pts.append(a + t * (b - a))
        c, r = self.dot()
        n = max(8, int(math.ceil(2 * math.pi * r / step_cm)))
        ang = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
        pts.append(c + r * np.column_stack((np.cos(ang), np.sin(ang))))
        return np.concatenate(pts)

    def contour_length(self) -> float:
        """Total outline length in cm (band polygon perimeter plus dot circumference)."""
        poly = self.outline_polygon()
        per = float(np.linalg.norm(np.roll(poly, -1, axis=0) - poly, axis=1).sum())
        _, r = self.dot()
        return per + 2 * math.pi * r

    def contour_centroid(self) -> np.ndarray:
        """Length-weighted centroid of the figure outline, in marker cm.

        This is the point the edge tracker localizes; the simulated drill is
        mounted so its axis passes through it.
        """
        poly = self.outline_polygon()
        nxt = np.roll(poly, -1, axis=0)
        seg = np.linalg.norm(nxt - poly, axis=1)
        mom = ((poly + nxt) / 2.0 * seg[:, None]).sum(axis=0)
        c, r = self.dot()
        circ = 2 * math.pi * r
        return (mom + c * circ) / (seg.sum() + circ)


def rotational_self_similarity(spec: MarkerSpec, angle_deg: float, tol_cm: float = 0.08) -> float:
    """Percentage of the figure outline that lands back on itself when rotated
    about the marker center. Used to assert the figure has no quarter-turn
    self-symmetry."""
    from scipy.spatial import cKDTree

    pts = spec.outline_points()
    a = math.radians(angle_deg)
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    rotated = pts @ rot.T
    d, _ = cKDTree(pts).query(rotated)
    return 100.0 * float(np.mean(d <= tol_cm))


@dataclass(frozen=True)
class ScenePose:
    """Ground-truth placement of the marker in one frame."""

    center: tuple[float, float]      # pixel point, subpixel
    angle: float                     # degrees
    px_per_cm: float = 10.8
    noise_sigma: float = 0.0         # additive Gaussian, intensity units
    clutter_seed: int = 0
    visible: bool = True             # hidden poses render background only

    def __post_init__(self) -> None:
        if self.px_per_cm <= 0:
            raise ValueError("px_per_cm must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")


def _rot2(angle_deg: float) -> np.ndarray:
    a = math.radians(angle_deg)
    return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])


def _point_in_polygon(px: np.ndarray, py: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd point-in-polygon test, vectorized over sample points."""
    inside = np.zeros(px.shape, dtype=bool)
    n = len(poly)
    for k in range(n):
        x0, y0 = poly[k]
        x1, y1 = poly[(k + 1) % n]
        crosses = (y0 > py) != (y1 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (px < xint)
    return inside


def _dist_to_polygon(px: np.ndarray, py: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Unsigned distance from sample points to the polygon outline."""
    best = np.full(px.shape, np.inf)
    n = len(poly)
    for k in range(n):
        a = poly[k]
        b = poly[(k + 1) % n]
        ab = b - a
        denom = float(ab @ ab)
        if denom < 1e-18:
            continue
        t = np.clip(((px - a[0]) * ab[0] + (py - a[1]) * ab[1]) / denom, 0.0, 1.0)
        dx = px - (a[0] + t * ab[0])
        dy = py - (a[1] + t * ab[1])
        best = np.minimum(best, np.hypot(dx, dy))
    return best


def _paint_sdf(canvas: np.ndarray, d_signed: np.ndarray, x0: int, y0: int, level: float) -> None:
    """Blend a region given its signed distance field (negative inside)."""
    cov = np.clip(0.5 - d_signed / (2.0 * AA_HALF_WIDTH), 0.0, 1.0)
    h, w = d_signed.shape
    patch = canvas[y0 : y0 + h, x0 : x0 + w]
    patch += cov * (level - patch)


def _paint_polygon(canvas: np.ndarray, poly_px: np.ndarray, level: float) -> None:
    x0 = max(0, int(math.floor(poly_px[:, 0].min() - 3)))
    y0 = max(0, int(math.floor(poly_px[:, 1].min() - 3)))
    x1 = min(canvas.shape[1], int(math.ceil(poly_px[:, 0].max() + 4)))
    y1 = min(canvas.shape[0], int(math.ceil(poly_px[:, 1].max() + 4)))
    if x1 <= x0 or y1 <= y0:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    xs = xs.astype(float)
    ys = ys.astype(float)
    d = _dist_to_polygon(xs, ys, poly_px)
    sign = np.where(_point_in_polygon(xs, ys, poly_px), -1.0, 1.0)
    _paint_sdf(canvas, d * sign, x0, y0, level)


def _paint_disk(canvas: np.ndarray, center_px: np.ndarray, radius_px: float, level: float) -> None:
    x0 = max(0, int(math.floor(center_px[0] - radius_px - 3)))
    y0 = max(0, int(math.floor(center_px[1] - radius_px - 3)))
    x1 = min(canvas.shape[1], int(math.ceil(center_px[0] + radius_px + 4)))
    y1 = min(canvas.shape[0], int(math.ceil(center_px[1] + radius_px + 4)))
    if x1 <= x0 or y1 <= y0:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    d = np.hypot(xs - center_px[0], ys - center_px[1]) - radius_px
    _paint_sdf(canvas, d, x0, y0, level)


def marker_bbox_px(spec: MarkerSpec, pose: ScenePose) -> tuple[float, float, float, float]:
    """Axis-aligned pixel bounds of the posed figure."""
    c, r = spec.dot()
    pts = np.vstack((spec.outline_polygon(), c + (r, r), c - (r, r)))
    px = pts @ _rot2(pose.angle).T * pose.px_per_cm + np.asarray(pose.center)
    return float(px[:, 0].min()), float(px[:, 1].min()), float(px[:, 0].max()), float(px[:, 1].max())


def render_marker(
    spec: MarkerSpec,
    pose: ScenePose,
    size: tuple[int, int] = (640, 480),
    n_clutter: int = 0,
    bg: int = BG_LEVEL,
    fg: int = FG_LEVEL,
) -> Frame:
    """Render the marker figure at a pose with optional clutter and noise.

    Clutter consists of dark random polygons kept outside the marker's
    bounding box. Raises when the posed figure does not fit in the frame.
    """
    w, h = size
    canvas = np.full((h, w), float(bg))
    rng = np.random.default_rng(pose.clutter_seed)

    if pose.visible:
        x0, y0, x1, y1 = marker_bbox_px(spec, pose)
        if x0 < 0 or y0 < 0 or x1 > w - 1 or y1 > h - 1:
            raise RenderError(f"marker bbox ({x0:.1f},{y0:.1f})-({x1:.1f},{y1:.1f}) leaves the {w}x{h} frame")
        rot = _rot2(pose.angle)
        scale = pose.px_per_cm
        center = np.asarray(pose.center, dtype=float)
        poly_px = spec.outline_polygon() @ rot.T * scale + center
        dot_c, dot_r = spec.dot()
        _paint_polygon(canvas, poly_px, float(fg))
        _paint_disk(canvas, dot_c @ rot.T * scale + center, dot_r * scale, float(fg))
        keepout = (x0 - 8, y0 - 8, x1 + 8, y1 + 8)
    else:
        keepout = None

    for _ in range(n_clutter):
        for _attempt in range(50):
            cx = rng.uniform(10, w - 10)
            cy = rng.uniform(10, h - 10)
            r = rng.uniform(4, 18)
            if keepout and keepout[0] - r <= cx <= keepout[2] + r and keepout[1] - r <= cy <= keepout[3] + r:
                continue
            nv = int(rng.integers(3, 7))
            ang = np.sort(rng.uniform(0, 2 * math.pi, nv))
            rad = rng.uniform(0.4 * r, r, nv)
            poly = np.column_stack((cx + rad * np.cos(ang), cy + rad * np.sin(ang)))
            _paint_polygon(canvas, poly, float(rng.uniform(30, 110)))
            break

    if pose.noise_sigma > 0:
        canvas += rng.normal(0.0, pose.noise_sigma, canvas.shape)
    return Frame(np.clip(np.rint(canvas), 0, 255).astype(np.uint8))


def render_grid(
    grid_spec,
    pmap,
    size: tuple[int, int] = (640, 480),
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> Frame:
    """Render the dot calibration grid under a known pixel-to-world map.

    Dot centers are placed at ``pmap.to_pixel(world node)``; the map itself is
    the ground truth a fitted calibration is checked against.
    """
    w, h = size
    canvas = np.full((h, w), float(BG_LEVEL))
    nodes = grid_spec.world_points()
    centers = pmap.to_pixel(nodes)
    if centers.min() < 4 or centers[:, 0].max() > w - 5 or centers[:, 1].max() > h - 5:
        raise RenderError("grid does not fit in the frame under this map")
    for node, c in zip(nodes, centers):
        r_px = grid_spec.dot_radius_cm * pmap.px_per_cm_at(c)
        _paint_disk(canvas, c, r_px, float(FG_LEVEL))
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        canvas += rng.normal(0.0, noise_sigma, canvas.shape)
    return Frame(np.clip(np.rint(canvas), 0, 255).astype(np.uint8))


def render_needles(
    needles_px,
    size: tuple[int, int] = (640, 480),
    length_px: float = 40.0,
    width_px: float = 2.0,
) -> Frame:
    """A registration scene: three dark vertical needle strokes."""
    w, h = size
    canvas = np.full((h, w), float(BG_LEVEL))
    for u, v in np.asarray(needles_px, dtype=float).reshape(-1, 2):
        half_w = width_px / 2.0
        half_l = length_px / 2.0
        poly = np.array(
            [(u - half_w, v - half_l), (u + half_w, v - half_l), (u + half_w, v + half_l), (u - half_w, v + half_l)]
        )
        _paint_polygon(canvas, poly, float(FG_LEVEL))
    return Frame(np.clip(np.rint(canvas), 0, 255).astype(np.uint8))


# ---------------------------------------------------------------------------
# Scripted scenarios


@dataclass(frozen=True)
class TruthRow:
    """Exact per-frame ground truth for a scripted sequence.

    cx/cy give the figure's contour centroid (the point the tracker
    estimates), not the marker card center.
    """

    frame: int
    cx_px: float
    cy_px: float
    angle_deg: float
    tip_x_cm: float
    tip_y_cm: float
    depth_cm: float
    radial_clearance_cm: float
    inside: bool
    visible: bool


@dataclass(frozen=True)
class ScenarioScript:
    """Parsed scenario description: plan, scale, and per-frame marker poses."""

    name: str
    width: int
    height: int
    px_per_cm: float
    noise_sigma: float
    seed: int
    plan: SurgicalPlan
    poses: list[tuple[float, float, float, bool]]  # cx, cy, angle, visible
    marker: MarkerSpec = field(default_factory=MarkerSpec)
    n_clutter: int = 0


@dataclass(frozen=True)
class Scenario:
    """Rendered scripted sequence plus its exact ground truth."""

    name: str
    script: ScenarioScript
    frames: list[Frame]
    truth: list[TruthRow]


def drill_direction(angle_deg: float) -> np.ndarray:
    """Unit drill direction for a marker angle (angle 0 points along -y)."""
    a = math.radians(angle_deg)
    return np.array((math.sin(a), -math.cos(a)))


def figure_centroid_px(spec: MarkerSpec, center, angle_deg: float, px_per_cm: float) -> np.ndarray:
    """Pixel position of the figure's contour centroid for a posed marker."""
    return np.asarray(center, dtype=float) + spec.contour_centroid() @ _rot2(angle_deg).T * px_per_cm


def scenario_truth(script: ScenarioScript) -> list[TruthRow]:
    """Ground truth recomputed through the corridor geometry, so stored truth
    and the geometry module can never disagree. The drill axis runs through
    the figure's contour centroid."""
    cyl = build_cylinder(script.plan)
    rows = []
    s = script.px_per_cm
    for i, (cx, cy, ang, visible) in enumerate(script.poses):
        anchor = figure_centroid_px(script.marker, (cx, cy), ang, s)
        centroid = anchor / s
        tip = centroid + script.plan.tip_offset_cm * drill_direction(ang)
        rc, depth, inside = plangeo.clearance((tip[0], tip[1], 0.0), cyl)
        rows.append(
            TruthRow(
                frame=i, cx_px=float(anchor[0]), cy_px=float(anchor[1]), angle_deg=ang,
                tip_x_cm=float(tip[0]), tip_y_cm=float(tip[1]),
                depth_cm=depth, radial_clearance_cm=rc, inside=inside, visible=visible,
            )
        )
    return rows


def render_scenario(script: ScenarioScript) -> Scenario:
    """Render every scripted frame and attach the exact truth table."""
    frames = []
    for i, (cx, cy, ang, visible) in enumerate(script.poses):
        pose = ScenePose(
            center=(cx, cy), angle=ang, px_per_cm=script.px_per_cm,
            noise_sigma=script.noise_sigma, clutter_seed=script.seed + i, visible=visible,
        )
        frames.append(render_marker(script.marker, pose, (script.width, script.height),
                                    n_clutter=script.n_clutter))
    return Scenario(name=script.name, script=script, frames=frames, truth=scenario_truth(script))


TRUTH_CSV_HEADER = "frame,cx_px,cy_px,angle_deg,tip_x_cm,tip_y_cm,depth_cm,radial_clearance_cm,inside,visible"


def truth_csv(rows: list[TruthRow]) -> str:
    out = [TRUTH_CSV_HEADER]
    for r in rows:
        out.append(
            f"{r.frame},{r.cx_px!r},{r.cy_px!r},{r.angle_deg!r},{r.tip_x_cm!r},"
            f"{r.tip_y_cm!r},{r.depth_cm!r},{r.radial_clearance_cm!r},{int(r.inside)},{int(r.visible)}"
        )
    return "\n".join(out) + "\n"


def write_scenario(scenario: Scenario, out_dir: str | Path) -> tuple[Path, Path]:
    """Write the frames as a .seq container and the truth table as CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seq_path = out / f"{scenario.name}.seq"
    truth_path = out / f"{scenario.name}_truth.csv"
    write_seq(scenario.frames, seq_path)
    truth_path.write_text(truth_csv(scenario.truth))
    return seq_path, truth_path


def format_script(script: ScenarioScript) -> str:
    lines = [
        SCENARIO_HEADER,
        f"name = {script.name}",
        f"width = {script.width}",
        f"height = {script.height}",
        f"px_per_cm = {script.px_per_cm!r}",
        f"noise_sigma = {script.noise_sigma!r}",
        f"seed = {script.seed}",
        f"n_clutter = {script.n_clutter}",
        f"marker_side_cm = {script.marker.side!r}",
        "line_x = " + ",".join(f"{x!r}" for x in script.plan.line_x),
        f"entry = {script.plan.entry_point[0]!r},{script.plan.entry_point[1]!r}",
        f"axis_angle_deg = {script.plan.axis_angle_deg!r}",
        f"canal_min_width_cm = {script.plan.canal_min_width_cm!r}",
        f"canal_length_cm = {script.plan.canal_length_cm!r}",
        f"tip_offset_cm = {script.plan.tip_offset_cm!r}",
    ]
    for cx, cy, ang, visible in script.poses:
        lines.append(f"pose {cx!r} {cy!r} {ang!r}" + ("" if visible else " hidden"))
    return "\n".join(lines) + "\n"


def parse_script(text: str) -> ScenarioScript:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.strip().startswith("#")]
    if not lines or lines[0] != SCENARIO_HEADER:
        raise ValueError(f"scenario script must start with '{SCENARIO_HEADER}'")
    kv: dict[str, str] = {}
    poses: list[tuple[float, float, float, bool]] = []
    for ln in lines[1:]:
        if ln.startswith("pose "):
            toks = ln.split()
            visible = not (len(toks) > 4 and toks[4] == "hidden")
            poses.append((float(toks[1]), float(toks[2]), float(toks[3]), visible))
        elif "=" in ln:
            key, val = ln.split("=", 1)
            kv[key.strip()] = val.strip()
        else:
            raise ValueError(f"bad scenario line: {ln!r}")
    plan = SurgicalPlan(
        line_x=tuple(float(t) for t in kv["line_x"].split(",")),  # type: ignore[arg-type]
        entry_point=tuple(float(t) for t in kv["entry"].split(",")),  # type: ignore[arg-type]
        axis_angle_deg=float(kv["axis_angle_deg"]),
        canal_min_width_cm=float(kv["canal_min_width_cm"]),
        canal_length_cm=float(kv["canal_length_cm"]),
        tip_offset_cm=float(kv.get("tip_offset_cm", "0")),
    )
    return ScenarioScript(
        name=kv["name"],
        width=int(kv["width"]),
        height=int(kv["height"]),
        px_per_cm=float(kv["px_per_cm"]),
        noise_sigma=float(kv.get("noise_sigma", "0")),
        seed=int(kv.get("seed", "0")),
        plan=plan,
        poses=poses,
        marker=MarkerSpec(side=float(kv.get("marker_side_cm", "2.5"))),
        n_clutter=int(kv.get("n_clutter", "0")),
    )


def default_plan() -> SurgicalPlan:
    """Plan used by the built-in scenarios (640x480 at 10.8 px/cm)."""
    return SurgicalPlan(
        line_x=(26.0, 29.6, 33.2),
        entry_point=(29.6, 37.0),
        axis_angle_deg=0.0,
        canal_min_width_cm=0.7,
        canal_length_cm=4.0,
        tip_offset_cm=3.0,
    )


def _poses_for_depths(
    plan: SurgicalPlan,
    depths: np.ndarray,
    lateral: np.ndarray,
    px_per_cm: float,
    marker: MarkerSpec | None = None,
) -> list[tuple[float, float, float, bool]]:
    marker = marker or MarkerSpec()
    axis = drill_direction(plan.axis_angle_deg)
    normal = np.array((-axis[1], axis[0]))
    entry = np.asarray(plan.entry_point)
    # The axis runs through the figure centroid; solve for the render center.
    gamma = marker.contour_centroid() @ _rot2(plan.axis_angle_deg).T
    poses = []
    for d, lat in zip(depths, lateral):
        tip = entry + d * axis + lat * normal
        anchor = tip - plan.tip_offset_cm * axis  # marker stays aligned with the axis
        px = (anchor - gamma) * px_per_cm
        poses.append((float(px[0]), float(px[1]), plan.axis_angle_deg, True))
    return poses


def make_straight_script(
    n_frames: int = 120,
    noise_sigma: float = 0.0,
    seed: int = 7,
    px_per_cm: float = 10.8,
    final_depth: float = 3.8,
) -> ScenarioScript:
    """Clean insertion straight down the corridor axis."""
    plan = default_plan()
    depths = np.linspace(-0.5, final_depth, n_frames)
    lateral = np.zeros(n_frames)
    return ScenarioScript(
        name="straight", width=640, height=480, px_per_cm=px_per_cm,
        noise_sigma=noise_sigma, seed=seed, plan=plan,
        poses=_poses_for_depths(plan, depths, lateral, px_per_cm),
    )


def make_veering_script(
    n_frames: int = 120,
    noise_sigma: float = 0.0,
    seed: int = 11,
    px_per_cm: float = 10.8,
    veer_start: int = 40,
    veer_rate_cm: float = 0.01,
) -> ScenarioScript:
    """Insertion that drifts sideways mid-run and exits the corridor wall."""
    plan = default_plan()
    depths = np.linspace(-0.5, 3.8, n_frames)
    idx = np.arange(n_frames)
    lateral = np.maximum(0, idx - veer_start) * veer_rate_cm
    return ScenarioScript(
        name="veering", width=640, height=480, px_per_cm=px_per_cm,
        noise_sigma=noise_sigma, seed=seed, plan=plan,
        poses=_poses_for_depths(plan, depths, lateral, px_per_cm),
    )
