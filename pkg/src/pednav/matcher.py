"""Edge-based geometric model search: build a model from the marker's active
edges, find its occurrences in a frame's edge map through a coarse-to-fine
chamfer scan with least-squares pose refinement, and grade each occurrence
with coverage, score, target score, and fit error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.ndimage as ndi
from scipy.spatial import cKDTree

from .edgemap import EdgeChain, Edgel, EdgeMap, EdgeParams, edge_map
from .frames import Frame

MODEL_HEADER = "pednav-model v1"
MIN_MODEL_EDGE_PX = 100.0
MIN_LEVEL_EDGELS = 16
# Mean squared pixel errors below this are numerical noise from the pose
# solve; report them as an exact perfect fit.
FIT_ERROR_FLOOR = 1e-12


class MatchError(ValueError):
    """Unusable matcher input."""


class InsufficientEdgesError(MatchError):
    """Marker image yields too little edge content to form a model."""


@dataclass(frozen=True)
class SearchParams:
    """Knobs for the occurrence search and its scoring.

    ``scale`` is fixed at 1.0: the camera-to-marker geometry is frozen at
    registration time, so the search is rigid (translation + rotation only).
    """

    angle_center: float = 0.0
    angle_range: float = 360.0
    angle_step_coarse: float | None = None  # degrees; derived from model radius when None
    scale: float = 1.0
    acceptance: float = 70.0
    target_acceptance: float = 0.0
    fit_error_weight: float = 1.0           # dimensionless, 0..100
    max_fit_error: float = 2.0              # px; correspondence gate and fit normalizer
    max_candidates: int = 16
    coarse_gate_ratio: float = 0.6          # fraction of acceptance required at the top level

    def __post_init__(self) -> None:
        if not (0.0 <= self.acceptance <= 100.0 and 0.0 <= self.target_acceptance <= 100.0):
            raise MatchError("acceptance levels must be percentages in [0, 100]")
        if not 0.0 <= self.fit_error_weight <= 100.0:
            raise MatchError("fit error weighing factor must be in [0, 100]")
        if self.scale != 1.0:
            raise MatchError("only scale 1.0 searches are supported")
        if self.max_fit_error <= 0:
            raise MatchError("max_fit_error must be positive")


@dataclass(frozen=True)
class Match:
    """One found occurrence of the model in a target edge map."""

    centroid: np.ndarray      # (x, y) subpixel, position of the model origin
    angle: float              # degrees in [0, 360)
    score: float              # %
    target_score: float       # %
    fit_error: float          # px^2, mean squared correspondence error
    model_coverage: float     # %
    target_coverage: float    # %
    n_common: int


@dataclass(frozen=True)
class ModelLevel:
    factor: int               # subsampling factor, power of two
    positions: np.ndarray     # (n, 2) model coordinates divided by factor


@dataclass(frozen=True)
class GeometricModel:
    """The marker's active edges in model coordinates (origin at the edgel
    centroid), with a coarse-to-fine pyramid of subsampled copies."""

    chains: list[EdgeChain]
    positions: np.ndarray           # (n, 2), centered
    directions: np.ndarray          # (n,), gradient directions
    magnitudes: np.ndarray          # (n,)
    weights: np.ndarray             # (n,), arc-length share of each edgel
    total_active_length: float
    bounding_box: tuple[float, float, float, float]
    radius: float                   # max edgel distance from the origin
    levels: list[ModelLevel] = field(default_factory=list)

    @property
    def width(self) -> float:
        x0, _, x1, _ = self.bounding_box
        return x1 - x0


def _build_levels(positions: np.ndarray) -> list[ModelLevel]:
    levels = [ModelLevel(factor=1, positions=positions)]
    k = 1
    while len(positions) // (2**k) >= MIN_LEVEL_EDGELS and k <= 5:
        levels.append(ModelLevel(factor=2**k, positions=positions[:: 2**k] / float(2**k)))
        k += 1
    return levels


def _model_from_chains(chains: list[EdgeChain]) -> GeometricModel:
    if not chains:
        raise InsufficientEdgesError("no edge chains in marker image")
    pos = np.concatenate([c.positions() for c in chains])
    total = float(sum(c.length for c in chains))
    if total < MIN_MODEL_EDGE_PX:
        raise InsufficientEdgesError(
            f"marker edges total {total:.1f} px, need at least {MIN_MODEL_EDGE_PX:.0f}"
        )
    centroid = pos.mean(axis=0)
    centered_chains = []
    for c in chains:
        moved = [Edgel(position=e.position - centroid, direction=e.direction, magnitude=e.magnitude)
                 for e in c.edgels]
        centered_chains.append(EdgeChain(edgels=moved, closed=c.closed, length=c.length))
    from .edgemap import _arc_weights

    pos_c = pos - centroid
    weights = np.concatenate([_arc_weights(c) for c in centered_chains])
    dirs = np.concatenate([[e.direction for e in c.edgels] for c in centered_chains])
    mags = np.concatenate([[e.magnitude for e in c.edgels] for c in centered_chains])
    bbox = (float(pos_c[:, 0].min()), float(pos_c[:, 1].min()),
            float(pos_c[:, 0].max()), float(pos_c[:, 1].max()))
    return GeometricModel(
        chains=centered_chains,
        positions=pos_c,
        directions=dirs,
        magnitudes=mags,
        weights=weights,
        total_active_length=float(np.sum(weights)),
        bounding_box=bbox,
        radius=float(np.linalg.norm(pos_c, axis=1).max()),
        levels=_build_levels(pos_c),
    )


def build_model(marker_image: Frame, edge_params: EdgeParams | None = None) -> GeometricModel:
    """Extract the marker's edge map and recenter it into a search model."""
    emap = edge_map(marker_image, edge_params)
    return _model_from_chains(emap.chains)


def save_model(model: GeometricModel, path: str | Path) -> None:
    lines = [MODEL_HEADER]
    for c in model.chains:
        lines.append(f"chain n={len(c.edgels)} closed={int(c.closed)}")
        for e in c.edgels:
            lines.append(f"{e.position[0]:.17g} {e.position[1]:.17g} {e.direction:.17g} {e.magnitude:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path: str | Path) -> GeometricModel:
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or lines[0] != MODEL_HEADER:
        raise MatchError(f"{path}: missing '{MODEL_HEADER}' header")
    chains: list[EdgeChain] = []
    i = 1
    while i < len(lines):
        if not lines[i].startswith("chain "):
            raise MatchError(f"{path}: expected chain record at line {i + 1}")
        fields = dict(tok.split("=") for tok in lines[i].split()[1:])
        n = int(fields["n"])
        closed = bool(int(fields["closed"]))
        edgels = []
        for ln in lines[i + 1 : i + 1 + n]:
            x, y, d, m = (float(t) for t in ln.split())
            edgels.append(Edgel(position=np.array((x, y)), direction=d, magnitude=m))
        pos = np.array([e.position for e in edgels])
        length = float(np.linalg.norm(np.diff(pos, axis=0), axis=1).sum()) if n > 1 else 0.0
        if closed and n > 1:
            length += float(np.linalg.norm(pos[0] - pos[-1]))
        chains.append(EdgeChain(edgels=edgels, closed=closed, length=length))
        i += 1 + n
    # Positions in the file are already centered; rebuilding recenters on the
    # same centroid (a no-op up to rounding).
    return _model_from_chains(chains)


# ---------------------------------------------------------------------------
# Scoring


def fit_error(pairs) -> float:
    """Mean squared distance over corresponding (occurrence, model) edgel pairs."""
    pts = []
    for a, b in pairs:
        pa = np.asarray(getattr(a, "position", a), dtype=float)
        pb = np.asarray(getattr(b, "position", b), dtype=float)
        pts.append((pa, pb))
    if not pts:
        raise MatchError("fit error needs at least one pair")
    err = np.array([p - q for p, q in pts])
    return float(np.mean(np.sum(err * err, axis=1)))


def _rot(angle_deg: float) -> np.ndarray:
    a = math.radians(angle_deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Grade:
    score: float
    target_score: float
    model_coverage: float
    target_coverage: float
    fit_error: float
    n_common: int


def _grade_pose(
    model: GeometricModel,
    pose: tuple[float, float, float],
    tpos: np.ndarray,
    tweights: np.ndarray,
    tree: cKDTree,
    params: SearchParams,
) -> Grade:
    tx, ty, ang = pose
    r = _rot(ang)
    p = model.positions @ r.T + (tx, ty)
    # A model edgel is found when a target edgel lies within the gate along
    # the model edgel's normal (the gradient direction); the nearest-neighbor
    # search allows one extra pixel tangentially for contour sampling.
    d, j = tree.query(p, distance_upper_bound=params.max_fit_error + 1.0)
    near = np.isfinite(d)
    normals = np.column_stack((np.cos(model.directions), np.sin(model.directions))) @ r.T
    err_n = np.full(len(p), np.inf)
    if near.any():
        disp = tpos[j[near]] - p[near]
        err_n[near] = np.abs(np.sum(disp * normals[near], axis=1))
    found = near & (err_n <= params.max_fit_error)
    n_common = int(found.sum())
    if n_common == 0:
        return Grade(0.0, 0.0, 0.0, 0.0, float("inf"), 0)

    fe = float(np.mean(err_n[found] ** 2))
    if fe < FIT_ERROR_FLOOR:
        fe = 0.0
    nfe = min(1.0, fe / (params.max_fit_error**2))
    attenuation = 1.0 - params.fit_error_weight * nfe

    found_len = float(np.sum(model.weights[found]))
    model_cov = 100.0 * (found_len / model.total_active_length)
    score = min(100.0, max(0.0, model_cov * attenuation))

    # Occurrence bounding box: the transformed model box, padded by the gate.
    x0, y0, x1, y1 = model.bounding_box
    corners = np.array([(x0, y0), (x1, y0), (x1, y1), (x0, y1)]) @ _rot(ang).T + (tx, ty)
    pad = params.max_fit_error
    bx0, by0 = corners.min(axis=0) - pad
    bx1, by1 = corners.max(axis=0) + pad
    in_box = (tpos[:, 0] >= bx0) & (tpos[:, 0] <= bx1) & (tpos[:, 1] >= by0) & (tpos[:, 1] <= by1)
    box_len = float(np.sum(tweights[in_box]))
    target_cov = 100.0 * min(1.0, found_len / box_len) if box_len > 0 else 0.0
    target_score = min(100.0, max(0.0, target_cov * attenuation))
    return Grade(score, target_score, model_cov, target_cov, fe, n_common)


def grade(
    model: GeometricModel,
    target: EdgeMap,
    pose: tuple[float, float, float],
    params: SearchParams | None = None,
) -> Grade:
    """Grade the model at a (x, y, angle_deg) pose against a target edge map."""
    params = params or SearchParams()
    tpos = target.chain_positions()
    if len(tpos) == 0:
        return Grade(0.0, 0.0, 0.0, 0.0, float("inf"), 0)
    return _grade_pose(model, pose, tpos, target.chain_weights(), cKDTree(tpos), params)


# ---------------------------------------------------------------------------
# Search


def _coarse_angles(model: GeometricModel, params: SearchParams, factor: int) -> np.ndarray:
    if params.angle_step_coarse is not None:
        step = max(1.0, params.angle_step_coarse)
    else:
        r_level = max(1.0, model.radius / factor)
        step = max(1.0, math.degrees(math.atan(2.0 / r_level)))
    span = min(360.0, params.angle_range)
    count = max(1, int(math.ceil(span / step)))
    offs = (np.arange(count) - (count - 1) / 2.0) * step if span < 360.0 else np.arange(count) * step - 180.0
    return params.angle_center + offs


def _level_hit_mask(tpos: np.ndarray, shape: tuple[int, int], factor: int) -> np.ndarray:
    """Binary 'within one cell of a target edge' map at a pyramid level.

    The 3x3 dilation equals thresholding a distance transform at 1.5 cells
    and is much cheaper to build.
    """
    th = max(2, (shape[0] + factor - 1) // factor)
    tw = max(2, (shape[1] + factor - 1) // factor)
    mask = np.zeros((th, tw), dtype=bool)
    ij = np.rint(tpos / factor).astype(np.intp)
    ok = (ij[:, 0] >= 0) & (ij[:, 0] < tw) & (ij[:, 1] >= 0) & (ij[:, 1] < th)
    mask[ij[ok, 1], ij[ok, 0]] = True
    return ndi.maximum_filter(mask, size=3, mode="constant")


def _scan_coarse(
    model: GeometricModel,
    level: ModelLevel,
    hit: np.ndarray,
    angles: np.ndarray,
    gate_fraction: float,
) -> list[tuple[float, float, float, float]]:
    """Translation x angle sweep at the scan pyramid level.

    Returns (coarse_score, x, y, angle) tuples in full-resolution pixels for
    every per-angle local maximum above the coarse gate, best first.
    """
    th, tw = hit.shape
    n = len(level.positions)
    pad = int(math.ceil(np.abs(level.positions).max())) + 2
    padded = np.zeros((th + 2 * pad, tw + 2 * pad), dtype=np.float32)
    padded[pad : pad + th, pad : pad + tw] = hit
    acc = np.empty((th, tw), dtype=np.float32)
    out: list[tuple[float, float, float, float]] = []
    for ang in angles:
        pts = level.positions @ _rot(ang).T
        ij = np.rint(pts).astype(int)
        offsets, counts = np.unique(ij, axis=0, return_counts=True)
        acc.fill(0.0)
        for (ox, oy), cnt in zip(offsets, counts):
            sl = padded[pad + oy : pad + oy + th, pad + ox : pad + ox + tw]
            if cnt == 1:
                np.add(acc, sl, out=acc)
            else:
                acc += np.float32(cnt) * sl
        local_max = ndi.maximum_filter(acc, size=3, mode="constant")
        thr = gate_fraction * n
        ys, xs = np.nonzero((acc >= thr) & (acc >= local_max))
        for y, x in zip(ys, xs):
            out.append((float(acc[y, x]) / n, float(x * level.factor), float(y * level.factor), float(ang)))
    out.sort(key=lambda t: (-t[0], t[1], t[2], t[3]))
    return out


def _cluster_candidates(
    cands: list[tuple[float, float, float, float]],
    radius_px: float,
    max_locations: int,
    angles_per_location: int = 3,
) -> list[tuple[float, float, float]]:
    """Group coarse candidates into distinct locations, keeping the few best
    angle hypotheses at each; wrong angles die later in grading."""
    r2 = radius_px * radius_px
    locations: list[tuple[float, float]] = []
    per_loc_angles: list[list[float]] = []
    kept: list[tuple[float, float, float]] = []
    for _score, x, y, ang in cands:
        loc = next(
            (i for i, (lx, ly) in enumerate(locations) if (x - lx) ** 2 + (y - ly) ** 2 <= r2),
            None,
        )
        if loc is None:
            if len(locations) >= max_locations:
                continue
            locations.append((x, y))
            per_loc_angles.append([])
            loc = len(locations) - 1
        angs = per_loc_angles[loc]
        if len(angs) >= angles_per_location:
            continue
        if any(abs((ang - a + 180.0) % 360.0 - 180.0) < 5.0 for a in angs):
            continue
        angs.append(ang)
        kept.append((x, y, ang))
    return kept


def _descend(
    model: GeometricModel,
    cand: tuple[float, float, float],
    levels: list[ModelLevel],
    hits: dict[int, np.ndarray],
    top_step_deg: float,
) -> tuple[float, float, float, float]:
    """Refine a candidate down the pyramid with small local sweeps; returns
    the pose plus the hit fraction at the finest swept level."""
    x, y, ang = cand
    step = top_step_deg / 2.0
    best_fraction = 0.0
    for level in levels:
        f = level.factor
        hit = hits[f]
        th, tw = hit.shape
        pts_all = []
        combos = []
        for da in (-step, -step / 2, 0.0, step / 2, step):
            base = level.positions @ _rot(ang + da).T
            for dy in (-f, 0, f):
                for dx in (-f, 0, f):
                    combos.append((dx, dy, da))
                    pts_all.append(base + ((x + dx) / f, (y + dy) / f))
        pts = np.rint(np.stack(pts_all)).astype(int)  # (n_combo, n_pts, 2)
        px = np.clip(pts[..., 0], 0, tw - 1)
        py = np.clip(pts[..., 1], 0, th - 1)
        inb = (pts[..., 0] >= 0) & (pts[..., 0] < tw) & (pts[..., 1] >= 0) & (pts[..., 1] < th)
        scores = (hit[py, px] & inb).mean(axis=1)
        best = int(np.argmax(scores))
        best_fraction = float(scores[best])
        dx, dy, da = combos[best]
        x, y, ang = x + dx, y + dy, ang + da
        step /= 2.0
    return x, y, ang, best_fraction


def _refine_ls(
    model: GeometricModel,
    pose: tuple[float, float, float],
    tree: cKDTree,
    tpos: np.ndarray,
    tnormals: np.ndarray,
    params: SearchParams,
    iters: int = 8,
    tol_px: float = 0.01,
) -> tuple[float, float, float]:
    """Iterative least-squares alignment of model edgels to the target contour.

    Each round pairs transformed model edgels with their nearest target
    edgels and minimizes the point-to-tangent-line residuals (projections on
    the target normals); tangential sliding along a contour then costs
    nothing, which is what makes the rotation estimate reliable on shapes
    dominated by straight runs.
    """
    x, y, ang = pose
    radius = max(3.0, 1.5 * params.max_fit_error)
    for _ in range(iters):
        r = _rot(ang)
        p = model.positions @ r.T + (x, y)
        d, j = tree.query(p, distance_upper_bound=radius)
        valid = np.isfinite(d)
        if int(valid.sum()) < 8:
            break
        pv = p[valid]
        qv = tpos[j[valid]]
        nv = tnormals[j[valid]]
        # Linearized rigid update: residual ((p + dt + dtheta x p') - q) . n
        rel = pv - (x, y)
        jrot = rel[:, 0] * nv[:, 1] - rel[:, 1] * nv[:, 0]
        a = np.column_stack((jrot, nv))
        b = np.sum((qv - pv) * nv, axis=1)
        ata = a.T @ a
        try:
            upd = np.linalg.solve(ata, a.T @ b)
        except np.linalg.LinAlgError:
            break
        dtheta, dx, dy = (float(u) for u in upd)
        dtheta = max(-0.35, min(0.35, dtheta))
        x, y, ang = x + dx, y + dy, ang + math.degrees(dtheta)
        delta = math.hypot(dx, dy) + model.radius * abs(dtheta)
        if delta < tol_px:
            break
    return x, y, ang


def find(
    model: GeometricModel,
    target: EdgeMap,
    params: SearchParams | None = None,
) -> list[Match]:
    """All accepted occurrences of the model in the target, best score first.

    Coarse stage: chamfer sweep over translations and coarse angles at the top
    pyramid level; survivors of the coarse gate descend the pyramid and get a
    final subpixel least-squares alignment, then grading and deduplication.
    """
    params = params or SearchParams()
    tpos = target.chain_positions()
    if len(tpos) == 0 or len(model.positions) == 0:
        return []
    tweights = target.chain_weights()
    tdirs = target.chain_directions()
    tnormals = np.column_stack((np.cos(tdirs), np.sin(tdirs)))
    tree = cKDTree(tpos)
    shape = target.field.shape

    # Scan at the coarsest level where the model still has shape: at least
    # 2.5 level-px of radius, and a target at least 24 level-px across.
    max_level = 0
    for li, level in enumerate(model.levels):
        if min(shape) / level.factor >= 24 and model.radius / level.factor >= 2.5:
            max_level = li
    top = model.levels[max_level]

    hits = {lvl.factor: _level_hit_mask(tpos, shape, lvl.factor)
            for lvl in model.levels[1 : max_level + 1]}
    if top.factor not in hits:
        hits[top.factor] = _level_hit_mask(tpos, shape, top.factor)

    angles = _coarse_angles(model, params, top.factor)
    top_step = float(angles[1] - angles[0]) if len(angles) > 1 else 30.0
    gate_fraction = params.coarse_gate_ratio * params.acceptance / 100.0
    maxima = _scan_coarse(model, top, hits[top.factor], angles, gate_fraction)
    cands = _cluster_candidates(maxima, max(4.0, 0.8 * model.radius), params.max_candidates)

    descent_levels = list(reversed(model.levels[1:max_level]))
    matches: list[Match] = []
    for x, y, ang in cands:
        if descent_levels:
            x, y, ang, frac = _descend(model, (x, y, ang), descent_levels, hits, top_step)
            if frac < gate_fraction:
                continue
        x, y, ang = _refine_ls(model, (x, y, ang), tree, tpos, tnormals, params)
        g = _grade_pose(model, (x, y, ang), tpos, tweights, tree, params)
        if g.score >= params.acceptance and g.target_score >= params.target_acceptance:
            matches.append(
                Match(
                    centroid=np.array((x, y)),
                    angle=float(ang % 360.0),
                    score=g.score,
                    target_score=g.target_score,
                    fit_error=g.fit_error,
                    model_coverage=g.model_coverage,
                    target_coverage=g.target_coverage,
                    n_common=g.n_common,
                )
            )

    # Deduplicate: no two matches closer than half the model width; higher
    # score wins, ties broken by position for determinism.
    matches.sort(key=lambda m: (-m.score, m.centroid[1], m.centroid[0], m.angle))
    dedup_r = model.width / 2.0
    kept: list[Match] = []
    for m in matches:
        if all(np.linalg.norm(m.centroid - k.centroid) >= dedup_r for k in kept):
            kept.append(m)
    return kept
