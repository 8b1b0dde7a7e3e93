"""pednav: marker-based drill navigation against synthetic or recorded frames.

The pipeline: calibrate the camera (``calib``), extract edge maps from frames
(``edgemap``), search them for the marker model (``matcher``), register the
view against the surgical plan and evaluate the corridor (``plangeo``), and
run the per-frame navigation loop (``navigate``). ``synth`` generates
deterministic scenes with exact ground truth; ``service`` streams navigation
states to an operator console over line-delimited JSON.
"""

__version__ = "0.1.0"

from .calib import (
    CalibrationModel,
    CameraPlacement,
    DisplacementSample,
    GridSpec,
    PlanarMap,
    axial_distance,
    elevation_angle,
    estimate_focal,
    fit_planar_map,
    map_point,
    pixel_distance,
    pixels_to_world,
    unmap_point,
)
from .edgemap import EdgeChain, Edgel, EdgeMap, EdgeParams, GradientField, chain, edge_map, extract_edgels, gradient
from .frames import Frame, iter_seq, read_pgm, read_seq, write_pgm, write_seq
from .matcher import (
    GeometricModel,
    Match,
    SearchParams,
    build_model,
    find,
    fit_error,
    grade,
    load_model,
    save_model,
)
from .navigate import NavParams, NavState, OverlayKind, OverlayPrimitive, Session, Track, step, track_report
from .plangeo import (
    Cylinder,
    Line,
    Registration,
    SurgicalPlan,
    alignment_residual,
    build_cylinder,
    clearance,
    drill_axis,
    finalize_registration,
    register,
)
from .synth import (
    MarkerSpec,
    Scenario,
    ScenarioScript,
    ScenePose,
    make_straight_script,
    make_veering_script,
    render_grid,
    render_marker,
    render_scenario,
)

__all__ = [name for name in dir() if not name.startswith("_")]
