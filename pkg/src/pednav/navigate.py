"""Per-frame navigation: run edge extraction and the model search on each
frame, convert the best match to a world drill pose, evaluate corridor depth
and clearance, and emit overlay primitives, alerts, and timing.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .calib import CalibrationModel
from .edgemap import EdgeParams, edge_map
from .frames import Frame
from .matcher import GeometricModel, Match, SearchParams, find
from .plangeo import (
    Cylinder,
    Line,
    Registration,
    SurgicalPlan,
    UnregisteredError,
    build_cylinder,
    clearance,
    drill_axis,
)

OVERLAY_CLIP_MARGIN = 8.0


class Track(Enum):
    TRACKING = "TRACKING"
    LOST = "LOST"
    UNREGISTERED = "UNREGISTERED"


class OverlayKind(Enum):
    CYLINDER_OUTLINE = "CYLINDER_OUTLINE"
    DRILL_LINE = "DRILL_LINE"
    ALERT_BANNER = "ALERT_BANNER"
    SCORE_TEXT = "SCORE_TEXT"


@dataclass(frozen=True)
class OverlayPrimitive:
    """One drawing instruction for the console; geometry is pixel points."""

    kind: OverlayKind
    points: np.ndarray
    style: str

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        if len(pts) == 0:
            raise ValueError("overlay primitive needs at least one point")
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class NavState:
    """Everything the console needs about one processed frame."""

    frame_index: int
    match: Match | None
    drill_line: Line | None
    depth: float | None           # cm, tip projection on the corridor axis
    radial_clearance: float | None
    violation: bool
    track: Track
    search_ms: float
    overlay: list[OverlayPrimitive]


@dataclass(frozen=True)
class NavParams:
    """Tracking-loop policy: seeded search window, loss and alert debounce."""

    window_px: float = 32.0
    angle_window_deg: float = 80.0  # full width of the seeded angle sweep
    n_lost: int = 3                 # consecutive misses before LOST
    debounce_frames: int = 2        # frames a violation state must persist


@dataclass
class Session:
    """Streaming navigation over one frame sequence; single consumer."""

    calib: CalibrationModel
    model: GeometricModel
    plan: SurgicalPlan
    registration: Registration
    search: SearchParams = field(default_factory=SearchParams)
    edge: EdgeParams = field(default_factory=EdgeParams)
    nav: NavParams = field(default_factory=NavParams)

    def __post_init__(self) -> None:
        self.cylinder: Cylinder = build_cylinder(self.plan)
        self.states: list[NavState] = []
        self._last_match: Match | None = None
        self._last_geometry: tuple[Line, float, float] | None = None
        self._miss_count = 0
        # LOST doubles as "not yet acquired": full-frame searches until the
        # first accepted match.
        self._track = Track.LOST if self.registration.finalized else Track.UNREGISTERED
        self._violation = False
        self._pending_violation: bool | None = None
        self._pending_count = 0

    def step(self, frame: Frame) -> NavState:
        return step(frame, self)


def _seeded_roi(frame: Frame, session: Session) -> tuple[Frame, np.ndarray] | None:
    """Crop around the last centroid, or None for a full-frame search."""
    last = session._last_match
    if last is None:
        return None
    half = session.nav.window_px + session.model.radius + 4
    x0 = int(math.floor(last.centroid[0] - half))
    y0 = int(math.floor(last.centroid[1] - half))
    x1 = int(math.ceil(last.centroid[0] + half))
    y1 = int(math.ceil(last.centroid[1] + half))
    try:
        roi = frame.crop(x0, y0, x1, y1)
    except ValueError:
        return None
    return roi, np.array((max(0, x0), max(0, y0)), dtype=float)


def _search(frame: Frame, session: Session) -> tuple[Match | None, float]:
    """Run the per-frame search; returns the best accepted match and the
    wall-clock search time in milliseconds."""
    t0 = time.perf_counter()
    roi = _seeded_roi(frame, session)
    if roi is not None:
        # Seeded search only; a miss here is a miss (full-frame retries
        # happen once the track is declared LOST).
        sub, offset = roi
        params = replace(
            session.search,
            angle_center=session._last_match.angle,
            angle_range=min(session.search.angle_range, session.nav.angle_window_deg),
        )
        matches = [replace(m, centroid=m.centroid + offset)
                   for m in find(session.model, edge_map(sub, session.edge), params)]
    else:
        matches = find(session.model, edge_map(frame, session.edge), session.search)
    ms = (time.perf_counter() - t0) * 1e3
    return (matches[0] if matches else None), ms


def _debounced_violation(session: Session, raw: bool) -> bool:
    """Flip the violation flag only after the raw condition persists."""
    if raw == session._violation:
        session._pending_violation = None
        session._pending_count = 0
        return session._violation
    if session._pending_violation == raw:
        session._pending_count += 1
    else:
        session._pending_violation = raw
        session._pending_count = 1
    if session._pending_count >= session.nav.debounce_frames:
        session._violation = raw
        session._pending_violation = None
        session._pending_count = 0
    return session._violation


def _clip_points(points: np.ndarray, frame: Frame) -> np.ndarray:
    lo = np.array((-OVERLAY_CLIP_MARGIN, -OVERLAY_CLIP_MARGIN))
    hi = np.array((frame.width + OVERLAY_CLIP_MARGIN, frame.height + OVERLAY_CLIP_MARGIN))
    return np.clip(points, lo, hi)


def _cylinder_outline_px(session: Session) -> np.ndarray:
    cyl = session.cylinder
    axis2 = cyl.axis_dir[:2]
    normal2 = np.array((-axis2[1], axis2[0]))
    base2 = cyl.base_center[:2]
    corners_world = np.array(
        [
            base2 - cyl.radius * normal2,
            base2 + cyl.radius * normal2,
            base2 + cyl.radius * normal2 + cyl.height * axis2,
            base2 - cyl.radius * normal2 + cyl.height * axis2,
            base2 - cyl.radius * normal2,
        ]
    )
    return session.calib.map.to_pixel(corners_world)


def _overlay(session: Session, frame: Frame, state_fields: dict) -> list[OverlayPrimitive]:
    prims: list[OverlayPrimitive] = [
        OverlayPrimitive(
            kind=OverlayKind.CYLINDER_OUTLINE,
            points=_clip_points(_cylinder_outline_px(session), frame),
            style="corridor",
        )
    ]
    match = state_fields["match"]
    line = state_fields["drill_line"]
    if line is not None and state_fields["track"] is Track.TRACKING:
        start_w = line.point[:2]
        tip_w = (line.point + session.plan.tip_offset_cm * line.direction)[:2]
        pts = session.calib.map.to_pixel(np.vstack((start_w, tip_w)))
        prims.append(OverlayPrimitive(kind=OverlayKind.DRILL_LINE, points=_clip_points(pts, frame), style="drill"))
    if match is not None:
        text = (
            f"score={match.score:.1f}% target={match.target_score:.1f}% "
            f"depth={state_fields['depth']:.2f}cm clear={state_fields['radial_clearance']:.2f}cm"
        )
        prims.append(OverlayPrimitive(kind=OverlayKind.SCORE_TEXT, points=np.array([(8.0, 14.0)]), style=text))
    if state_fields["violation"]:
        pts = np.array([(8.0, 8.0), (frame.width - 8.0, 28.0)])
        prims.append(OverlayPrimitive(kind=OverlayKind.ALERT_BANNER, points=pts, style="BOUNDARY VIOLATION"))
    return prims


def step(frame: Frame, session: Session) -> NavState:
    """Process one frame and append the resulting NavState to the session."""
    if not session.registration.finalized:
        raise UnregisteredError("session registration is not finalized")

    match, search_ms = _search(frame, session)

    if match is not None:
        session._miss_count = 0
        session._track = Track.TRACKING
        session._last_match = match
        line = drill_axis(match, session.calib, session.plan, session.registration)
        tip = line.point + session.plan.tip_offset_cm * line.direction
        rc, depth, inside = clearance(tip, session.cylinder)
        session._last_geometry = (line, depth, rc)
        raw_violation = (not inside) and (0.0 < depth <= session.cylinder.height)
    else:
        session._miss_count += 1
        if session._miss_count >= session.nav.n_lost:
            session._track = Track.LOST
            session._last_match = None
            session._last_geometry = None
        raw_violation = False
        if session._track is Track.TRACKING and session._last_geometry is not None:
            # Brief miss: coast on the last geometry, re-evaluating nothing.
            line, depth, rc = session._last_geometry
        else:
            line, depth, rc = None, None, None

    violation = _debounced_violation(session, raw_violation) if session._track is Track.TRACKING else False
    if session._track is not Track.TRACKING:
        session._violation = False

    fields = {
        "match": match,
        "drill_line": line if session._track is Track.TRACKING else None,
        "depth": depth if session._track is Track.TRACKING else None,
        "radial_clearance": rc if session._track is Track.TRACKING else None,
        "violation": violation,
        "track": session._track,
    }
    state = NavState(
        frame_index=len(session.states),
        match=fields["match"],
        drill_line=fields["drill_line"],
        depth=fields["depth"],
        radial_clearance=fields["radial_clearance"],
        violation=fields["violation"],
        track=fields["track"],
        search_ms=search_ms,
        overlay=_overlay(session, frame, fields),
    )
    session.states.append(state)
    return state


REPORT_HEADER = "frame,cx,cy,angle,score,target_score,fit_error,depth_cm,clearance_cm,violation,track,search_ms"


def track_report(session: Session, include_timing: bool = True) -> str:
    """Per-frame CSV of pose, scoring, corridor geometry, and timing.

    Float columns use repr so the report parses back to the exact values.
    With include_timing=False the search_ms column is written as 0.0, which
    makes reports from different runs over the same input byte-comparable.
    """
    if not session.states:
        raise ValueError("no processed frames to report")
    rows = [REPORT_HEADER]
    for s in session.states:
        m = s.match
        rows.append(
            ",".join(
                [
                    str(s.frame_index),
                    repr(float(m.centroid[0])) if m else "",
                    repr(float(m.centroid[1])) if m else "",
                    repr(float(m.angle)) if m else "",
                    repr(float(m.score)) if m else "",
                    repr(float(m.target_score)) if m else "",
                    repr(float(m.fit_error)) if m else "",
                    repr(float(s.depth)) if s.depth is not None else "",
                    repr(float(s.radial_clearance)) if s.radial_clearance is not None else "",
                    str(int(s.violation)),
                    s.track.value,
                    repr(float(s.search_ms)) if include_timing else "0.0",
                ]
            )
        )
    return "\n".join(rows) + "\n"
