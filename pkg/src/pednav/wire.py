"""Wire format between the processing service and the operator console:
line-delimited JSON messages with a per-connection sequence counter.

Numeric fields round-trip losslessly: floats are emitted via repr, and the
parser rebuilds NavState values bit for bit. Non-finite fit errors travel as
null (JSON has no Infinity) and come back as +inf.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .matcher import Match
from .navigate import NavState, OverlayKind, OverlayPrimitive, Track
from .plangeo import Line


class WireType(Enum):
    STATE = "STATE"
    ALERT = "ALERT"
    REGISTRATION = "REGISTRATION"
    COMMAND_ACK = "COMMAND_ACK"


@dataclass(frozen=True)
class WireMessage:
    type: WireType
    seq: int
    payload: dict

    def to_line(self) -> str:
        return json.dumps(
            {"type": self.type.value, "seq": self.seq, "payload": self.payload},
            allow_nan=False,
            separators=(",", ":"),
        )


class WireError(ValueError):
    """Malformed wire input."""


def parse_line(line: str) -> WireMessage:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise WireError(f"not valid JSON: {exc}") from exc
    try:
        return WireMessage(type=WireType(obj["type"]), seq=int(obj["seq"]), payload=obj["payload"])
    except (KeyError, ValueError, TypeError) as exc:
        raise WireError(f"bad wire message: {exc}") from exc


def _finite_or_none(x: float) -> float | None:
    return float(x) if math.isfinite(x) else None


def match_payload(m: Match) -> dict:
    return {
        "cx": float(m.centroid[0]),
        "cy": float(m.centroid[1]),
        "angle": float(m.angle),
        "score": float(m.score),
        "target_score": float(m.target_score),
        "fit_error": _finite_or_none(m.fit_error),
        "model_coverage": float(m.model_coverage),
        "target_coverage": float(m.target_coverage),
        "n_common": int(m.n_common),
    }


def match_from_payload(p: dict) -> Match:
    return Match(
        centroid=np.array((p["cx"], p["cy"]), dtype=float),
        angle=float(p["angle"]),
        score=float(p["score"]),
        target_score=float(p["target_score"]),
        fit_error=float("inf") if p["fit_error"] is None else float(p["fit_error"]),
        model_coverage=float(p["model_coverage"]),
        target_coverage=float(p["target_coverage"]),
        n_common=int(p["n_common"]),
    )


def navstate_payload(state: NavState) -> dict:
    return {
        "frame_index": state.frame_index,
        "track": state.track.value,
        "violation": bool(state.violation),
        "depth_cm": state.depth,
        "radial_clearance_cm": state.radial_clearance,
        "search_ms": float(state.search_ms),
        "match": match_payload(state.match) if state.match else None,
        "drill_line": (
            {"point": [float(v) for v in state.drill_line.point],
             "direction": [float(v) for v in state.drill_line.direction]}
            if state.drill_line
            else None
        ),
        "overlay": [
            {"kind": o.kind.value, "points": [[float(x), float(y)] for x, y in o.points], "style": o.style}
            for o in state.overlay
        ],
    }


def navstate_from_payload(p: dict) -> NavState:
    return NavState(
        frame_index=int(p["frame_index"]),
        match=match_from_payload(p["match"]) if p["match"] else None,
        drill_line=(
            Line(point=np.array(p["drill_line"]["point"]), direction=np.array(p["drill_line"]["direction"]))
            if p["drill_line"]
            else None
        ),
        depth=None if p["depth_cm"] is None else float(p["depth_cm"]),
        radial_clearance=None if p["radial_clearance_cm"] is None else float(p["radial_clearance_cm"]),
        violation=bool(p["violation"]),
        track=Track(p["track"]),
        search_ms=float(p["search_ms"]),
        overlay=[
            OverlayPrimitive(kind=OverlayKind(o["kind"]), points=np.array(o["points"]), style=o["style"])
            for o in p["overlay"]
        ],
    )


# Commands travel client -> service as bare JSON objects, one per line.


def parse_command(line: str) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise WireError(f"not valid JSON: {exc}") from exc
    if not isinstance(obj, dict) or "command" not in obj:
        raise WireError("command object needs a 'command' field")
    return obj
