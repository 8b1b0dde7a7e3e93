"""Pinhole-style camera calibration: focal-constant estimation from marker
displacements, a pixel-to-world planar map fitted from a dot grid, and
first-order distortion correction.

World quantities are centimeters; angles are degrees at the API surface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.ndimage as ndi

from .frames import Frame

# Radial-term convention baked into the calibration file format: the single
# coefficient k1 acts on pixel coordinates about a fixed center and radius
# scale so that no extra parameters need persisting.
RADIAL_CENTER = np.array((320.0, 240.0))
RADIAL_SCALE = 400.0

MIN_GRID_DOTS = 16
CONDITION_LIMIT = 1e8
CALIB_HEADER = "pednav-calib v1"


class CalibrationError(ValueError):
    """Invalid calibration input or an unusable fit."""


class DegenerateSampleError(CalibrationError):
    """A displacement sample with (near-)zero world motion."""


class TooFewDotsError(CalibrationError):
    """Grid image did not yield enough detectable dots."""


class IllConditionedFitError(CalibrationError):
    """Planar map fit is numerically unreliable."""


def axial_distance(v: float, h: float) -> float:
    """Camera-to-object axial distance from the vertical and horizontal offsets."""
    if v < 0 or h < 0:
        raise CalibrationError("offsets must be nonnegative")
    if v == 0 and h == 0:
        raise CalibrationError("V and H cannot both be zero")
    return math.hypot(v, h)


def elevation_angle(v: float, h: float) -> float:
    """Angle between the horizontal axis and the camera axis, degrees."""
    if v < 0 or h < 0:
        raise CalibrationError("offsets must be nonnegative")
    if v == 0 and h == 0:
        raise CalibrationError("V and H cannot both be zero")
    return math.degrees(math.atan2(v, h))


def pixel_distance(p1, p2) -> float:
    """Euclidean distance between two pixel positions."""
    p1 = np.asarray(p1, dtype=float)
    p2 = np.asarray(p2, dtype=float)
    return float(np.hypot(p1[0] - p2[0], p1[1] - p2[1]))


@dataclass(frozen=True)
class CameraPlacement:
    """Fixed camera offsets relative to the tracked object, in centimeters."""

    v: float
    h: float

    def __post_init__(self) -> None:
        if self.v < 0 or self.h < 0 or (self.v == 0 and self.h == 0):
            raise CalibrationError("placement needs V >= 0, H >= 0, not both zero")

    @property
    def d(self) -> float:
        """Axial distance, cm."""
        return axial_distance(self.v, self.h)

    @property
    def theta_deg(self) -> float:
        """Elevation angle between horizontal axis and camera axis, degrees."""
        return elevation_angle(self.v, self.h)


@dataclass(frozen=True)
class DisplacementSample:
    """One marker displacement observed in world and image coordinates."""

    world_a: tuple[float, float]
    world_b: tuple[float, float]
    pixel_a: tuple[float, float]
    pixel_b: tuple[float, float]

    @property
    def rd(self) -> float:
        """World displacement, cm."""
        return float(math.dist(self.world_a, self.world_b))

    @property
    def pd(self) -> float:
        """Pixel displacement, px."""
        return pixel_distance(self.pixel_a, self.pixel_b)

    @property
    def ratio(self) -> float:
        """Pixel distance per unit of object displacement, px/cm."""
        rd = self.rd
        if rd < 1e-6:
            raise DegenerateSampleError(f"world displacement {rd} cm is below 1e-6")
        return self.pd / rd


@dataclass(frozen=True)
class FocalEstimate:
    """Camera constant estimate plus per-sample diagnostics."""

    f: float
    ratios: np.ndarray        # per-sample Pd/Rd
    ratio_spread: float       # max - min of the ratios
    per_sample_f: np.ndarray  # each ratio scaled by the axial distance


def estimate_focal(
    samples: list[DisplacementSample] | list[float],
    placement: CameraPlacement,
) -> FocalEstimate:
    """Camera constant from displacement samples: mean Pd/Rd times the axial
    distance. Samples may be given directly as precomputed Pd/Rd ratios."""
    if not samples:
        raise CalibrationError("need at least one displacement sample")
    ratios = np.array(
        [s.ratio if isinstance(s, DisplacementSample) else float(s) for s in samples]
    )
    if np.any(ratios <= 0):
        raise DegenerateSampleError("every Pd/Rd ratio must be positive")
    d = placement.d
    per_sample_f = ratios * d
    return FocalEstimate(
        f=float(ratios.mean() * d),
        ratios=ratios,
        ratio_spread=float(ratios.max() - ratios.min()),
        per_sample_f=per_sample_f,
    )


# ---------------------------------------------------------------------------
# Planar pixel->world map


@dataclass(frozen=True)
class MappedPoint:
    xy: np.ndarray
    extrapolated: bool


@dataclass(frozen=True)
class PlanarMap:
    """Projective map from pixel to world coordinates with an optional
    first-order radial correction applied to the pixel side first."""

    h: np.ndarray                 # 3x3 homography, pixel -> world (cm)
    k1: float = 0.0
    region: tuple[float, float, float, float] | None = None  # calibrated px bbox
    rms_px: float = 0.0
    n_dots: int = 0

    def __post_init__(self) -> None:
        hm = np.asarray(self.h, dtype=float).reshape(3, 3)
        if abs(np.linalg.det(hm)) < 1e-15:
            raise CalibrationError("homography is singular")
        object.__setattr__(self, "h", hm)

    @classmethod
    def from_scale(cls, px_per_cm: float) -> "PlanarMap":
        """Pure-scale map: world = pixel / px_per_cm."""
        if px_per_cm <= 0:
            raise CalibrationError("px_per_cm must be positive")
        s = 1.0 / px_per_cm
        return cls(h=np.diag((s, s, 1.0)))

    def _undistort_px(self, p: np.ndarray) -> np.ndarray:
        if self.k1 == 0.0:
            return p
        d = p - RADIAL_CENTER
        rho2 = (d * d).sum(axis=-1, keepdims=True) / (RADIAL_SCALE * RADIAL_SCALE)
        return RADIAL_CENTER + d * (1.0 + self.k1 * rho2)

    def _distort_px(self, p: np.ndarray) -> np.ndarray:
        if self.k1 == 0.0:
            return p
        # Invert the radial correction by fixed-point iteration.
        d_target = p - RADIAL_CENTER
        d = d_target.copy()
        for _ in range(30):
            rho2 = (d * d).sum(axis=-1, keepdims=True) / (RADIAL_SCALE * RADIAL_SCALE)
            d_new = d_target / (1.0 + self.k1 * rho2)
            if np.max(np.abs(d_new - d)) < 1e-12:
                d = d_new
                break
            d = d_new
        return RADIAL_CENTER + d

    def to_world(self, p) -> np.ndarray:
        """Map pixel point(s) to world cm. Accepts (2,) or (n, 2)."""
        p = np.asarray(p, dtype=float)
        single = p.ndim == 1
        pts = self._undistort_px(np.atleast_2d(p))
        q = np.column_stack((pts, np.ones(len(pts)))) @ self.h.T
        out = q[:, :2] / q[:, 2:3]
        return out[0] if single else out

    def to_pixel(self, w) -> np.ndarray:
        """Map world point(s) in cm back to pixels."""
        w = np.asarray(w, dtype=float)
        single = w.ndim == 1
        pts = np.atleast_2d(w)
        hinv = np.linalg.inv(self.h)
        q = np.column_stack((pts, np.ones(len(pts)))) @ hinv.T
        px = self._distort_px(q[:, :2] / q[:, 2:3])
        return px[0] if single else px

    def in_region(self, p) -> bool:
        if self.region is None:
            return True
        x0, y0, x1, y1 = self.region
        p = np.asarray(p, dtype=float)
        return bool(x0 <= p[0] <= x1 and y0 <= p[1] <= y1)

    def px_per_cm_at(self, p) -> float:
        """Local pixel-per-cm scale at a pixel point (sqrt of the inverse Jacobian determinant)."""
        p = np.asarray(p, dtype=float)
        eps = 1.0
        w0 = self.to_world(p)
        wx = self.to_world(p + (eps, 0.0))
        wy = self.to_world(p + (0.0, eps))
        jac = np.column_stack((wx - w0, wy - w0)) / eps   # d(world)/d(pixel)
        det = abs(float(np.linalg.det(jac)))
        if det <= 0:
            raise CalibrationError("map is not invertible at the probed point")
        return 1.0 / math.sqrt(det)


def map_point(pmap: PlanarMap, p) -> MappedPoint:
    """Pixel to world with an extrapolation flag when p leaves the calibrated region."""
    return MappedPoint(xy=pmap.to_world(p), extrapolated=not pmap.in_region(p))


def unmap_point(pmap: PlanarMap, w) -> np.ndarray:
    """World to pixel (inverse of map_point)."""
    return pmap.to_pixel(w)


# ---------------------------------------------------------------------------
# Grid fitting


@dataclass(frozen=True)
class GridSpec:
    """Dot calibration target: nx by ny dots at a known world pitch."""

    nx: int
    ny: int
    pitch_cm: float
    dot_radius_cm: float = 0.15

    def __post_init__(self) -> None:
        if self.nx < 4 or self.ny < 4:
            raise CalibrationError("grid needs at least 4x4 dots")
        if self.pitch_cm <= 0 or self.dot_radius_cm <= 0:
            raise CalibrationError("pitch and dot radius must be positive")

    def world_points(self) -> np.ndarray:
        xs, ys = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        return np.column_stack((xs.ravel(), ys.ravel())).astype(float) * self.pitch_cm


def _otsu_threshold(pixels: np.ndarray) -> float:
    hist = np.bincount(pixels.ravel(), minlength=256).astype(float)
    total = hist.sum()
    levels = np.arange(256, dtype=float)
    w0 = np.cumsum(hist)
    w1 = total - w0
    m0 = np.cumsum(hist * levels)
    mt = m0[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = m0 / w0
        mu1 = (mt - m0) / w1
        between = w0 * w1 * (mu0 - mu1) ** 2
    between[~np.isfinite(between)] = -1.0
    return float(np.argmax(between))


def detect_grid_dots(grid_image: Frame, min_area: int = 4) -> np.ndarray:
    """Centroids of dark dots: Otsu threshold, connected components,
    intensity-weighted centroiding. Returns (n, 2) pixel points."""
    px = grid_image.pixels
    thr = _otsu_threshold(px)
    mask = px < thr
    labels, nlab = ndi.label(mask)
    if nlab == 0:
        return np.empty((0, 2))
    weight = np.where(mask, thr - px.astype(float), 0.0)
    sizes = ndi.sum_labels(mask, labels, index=np.arange(1, nlab + 1))
    good = np.nonzero(sizes >= min_area)[0] + 1
    if good.size == 0:
        return np.empty((0, 2))
    coms = ndi.center_of_mass(weight, labels, index=good)
    pts = np.array(coms)[:, ::-1]  # (row, col) -> (x, y)
    return pts[np.lexsort((pts[:, 0], pts[:, 1]))]


def _homography_dlt(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, float]:
    """Least-squares homography src->dst with Hartley normalization.
    Returns the 3x3 matrix and the condition number of the design matrix."""

    def normalize(pts):
        mean = pts.mean(axis=0)
        scale = np.sqrt(2.0) / max(1e-12, np.mean(np.linalg.norm(pts - mean, axis=1)))
        t = np.array([[scale, 0, -scale * mean[0]], [0, scale, -scale * mean[1]], [0, 0, 1.0]])
        q = np.column_stack((pts, np.ones(len(pts)))) @ t.T
        return q[:, :2], t

    sn, ts = normalize(src)
    dn, td = normalize(dst)
    n = len(src)
    a = np.zeros((2 * n, 9))
    a[0::2, 0:2] = -sn
    a[0::2, 2] = -1.0
    a[0::2, 6:8] = dn[:, 0:1] * sn
    a[0::2, 8] = dn[:, 0]
    a[1::2, 3:5] = -sn
    a[1::2, 5] = -1.0
    a[1::2, 6:8] = dn[:, 1:2] * sn
    a[1::2, 8] = dn[:, 1]
    _, svals, vt = np.linalg.svd(a)
    cond = float(svals[0] / max(svals[-2], 1e-300))
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(td) @ hn @ ts
    if abs(h[2, 2]) > 1e-12:
        h = h / h[2, 2]
    return h, cond


def _coarse_grid_assignment(dots: np.ndarray, spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Match detected dots to grid nodes via a coarse similarity fit.

    Rotation and scale come from nearest-neighbor displacement vectors (one
    pitch along a grid axis for interior dots, folded mod 90 degrees); the
    fold leaves a quarter-turn ambiguity that is resolved by trying all four
    and keeping the assignment that places the most dots on distinct nodes.
    """
    from scipy.spatial import cKDTree

    tree = cKDTree(dots)
    dist, idx = tree.query(dots, k=2)
    vec = dots[idx[:, 1]] - dots
    ang = np.arctan2(vec[:, 1], vec[:, 0])
    folded = np.mod(ang + np.pi / 4, np.pi / 2) - np.pi / 4
    rot = float(np.median(folded))
    scale = float(np.median(dist[:, 1])) / spec.pitch_cm  # px per cm

    nodes = spec.world_points()
    node_center = nodes.mean(axis=0)
    dot_center = dots.mean(axis=0)

    best: tuple[int, np.ndarray, np.ndarray] | None = None
    for quarter in range(4):
        th = rot + quarter * math.pi / 2
        c, s = math.cos(-th), math.sin(-th)
        r = np.array([[c, -s], [s, c]])
        world_guess = (dots - dot_center) @ r.T / scale + node_center
        ij = np.rint(world_guess / spec.pitch_cm).astype(int)
        ok = (ij[:, 0] >= 0) & (ij[:, 0] < spec.nx) & (ij[:, 1] >= 0) & (ij[:, 1] < spec.ny)
        flat = ij[:, 1] * spec.nx + ij[:, 0]
        # count dots assigned to distinct nodes
        seen: dict[int, int] = {}
        for i in np.nonzero(ok)[0]:
            seen.setdefault(int(flat[i]), int(i))
        score = len(seen)
        if best is None or score > best[0]:
            pick = np.fromiter(seen.values(), dtype=int)
            best = (score, dots[pick], nodes[np.fromiter(seen.keys(), dtype=int)])
    assert best is not None
    return best[1], best[2]


def fit_planar_map(
    grid_image: Frame,
    grid_spec: GridSpec,
    radial: bool = False,
) -> PlanarMap:
    """Fit a pixel-to-world map from a dot grid image.

    Detects dot centroids, matches them to the grid, fits a projective
    homography by least squares, optionally estimates one radial
    coefficient, and reports the RMS pixel residual.
    """
    dots = detect_grid_dots(grid_image)
    if len(dots) < MIN_GRID_DOTS:
        raise TooFewDotsError(f"found {len(dots)} dots, need at least {MIN_GRID_DOTS}")
    src, dst = _coarse_grid_assignment(dots, grid_spec)
    if len(src) < MIN_GRID_DOTS:
        raise TooFewDotsError(f"only {len(src)} dots matched to grid nodes")

    k1 = 0.0
    for _ in range(3 if radial else 1):
        pmap_px = src if k1 == 0.0 else PlanarMap(h=np.eye(3), k1=k1)._undistort_px(src)
        h, cond = _homography_dlt(pmap_px, dst)
        if cond > CONDITION_LIMIT:
            raise IllConditionedFitError(f"design matrix condition {cond:.3g} exceeds {CONDITION_LIMIT:.0e}")
        if not radial:
            break
        # One radial coefficient by golden-section search on the RMS residual.
        k1 = _search_radial(src, dst, h)

    # Re-assign against the fitted map and refit once; fixes any rounding
    # misassignments from the coarse similarity stage under perspective.
    trial = PlanarMap(h=h, k1=k1)
    world = trial.to_world(dots)
    ij = np.rint(world / grid_spec.pitch_cm).astype(int)
    ok = (
        (ij[:, 0] >= 0) & (ij[:, 0] < grid_spec.nx)
        & (ij[:, 1] >= 0) & (ij[:, 1] < grid_spec.ny)
        & (np.linalg.norm(world - ij * grid_spec.pitch_cm, axis=1) < 0.35 * grid_spec.pitch_cm)
    )
    seen: dict[int, int] = {}
    for i in np.nonzero(ok)[0]:
        seen.setdefault(int(ij[i, 1] * grid_spec.nx + ij[i, 0]), int(i))
    if len(seen) < MIN_GRID_DOTS:
        raise TooFewDotsError(f"only {len(seen)} dots matched to grid nodes")
    src = dots[np.fromiter(seen.values(), dtype=int)]
    dst = grid_spec.world_points()[np.fromiter(seen.keys(), dtype=int)]
    src_c = src if k1 == 0.0 else PlanarMap(h=np.eye(3), k1=k1)._undistort_px(src)
    h, cond = _homography_dlt(src_c, dst)
    if cond > CONDITION_LIMIT:
        raise IllConditionedFitError(f"design matrix condition {cond:.3g} exceeds {CONDITION_LIMIT:.0e}")

    fitted = PlanarMap(h=h, k1=k1)
    resid = np.linalg.norm(fitted.to_pixel(dst) - src, axis=1)
    rms = float(np.sqrt(np.mean(resid**2)))
    x0, y0 = src.min(axis=0)
    x1, y1 = src.max(axis=0)
    return PlanarMap(h=h, k1=k1, region=(float(x0), float(y0), float(x1), float(y1)),
                     rms_px=rms, n_dots=len(src))


def _search_radial(src: np.ndarray, dst: np.ndarray, h0: np.ndarray) -> float:
    """Golden-section search for the radial coefficient minimizing pixel RMS."""

    def rms_for(k1: float) -> float:
        und = PlanarMap(h=np.eye(3), k1=k1)._undistort_px(src) if k1 != 0.0 else src
        h, _ = _homography_dlt(und, dst)
        m = PlanarMap(h=h, k1=k1)
        return float(np.sqrt(np.mean(np.sum((m.to_pixel(dst) - src) ** 2, axis=1))))

    lo, hi = -0.2, 0.2
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = hi - phi * (hi - lo), lo + phi * (hi - lo)
    fa, fb = rms_for(a), rms_for(b)
    for _ in range(40):
        if fa < fb:
            hi, b, fb = b, a, fa
            a = hi - phi * (hi - lo)
            fa = rms_for(a)
        else:
            lo, a, fa = a, b, fb
            b = lo + phi * (hi - lo)
            fb = rms_for(b)
    return (lo + hi) / 2.0


# ---------------------------------------------------------------------------
# The assembled calibration


@dataclass(frozen=True)
class CalibrationModel:
    """Camera placement, camera constant, and the planar pixel-to-world map.

    The identity f = px_per_cm * D is maintained by construction.
    """

    placement: CameraPlacement
    f: float
    map: PlanarMap
    px_per_cm: float = field(default=0.0)

    def __post_init__(self) -> None:
        if self.f <= 0:
            raise CalibrationError("camera constant must be positive")
        if self.px_per_cm == 0.0:
            object.__setattr__(self, "px_per_cm", self.f / self.placement.d)
        if self.px_per_cm <= 0:
            raise CalibrationError("px_per_cm must be positive")

    @classmethod
    def from_samples(
        cls,
        samples: list[DisplacementSample] | list[float],
        placement: CameraPlacement,
    ) -> "CalibrationModel":
        """Calibration from displacement samples only; the map is pure scale."""
        est = estimate_focal(samples, placement)
        px_per_cm = est.f / placement.d
        return cls(placement=placement, f=est.f, map=PlanarMap.from_scale(px_per_cm))

    @classmethod
    def from_grid_map(cls, pmap: PlanarMap, placement: CameraPlacement) -> "CalibrationModel":
        """Calibration from a fitted grid map; f derives from the map's scale
        at the center of the calibrated region."""
        if pmap.region is not None:
            cx = (pmap.region[0] + pmap.region[2]) / 2.0
            cy = (pmap.region[1] + pmap.region[3]) / 2.0
        else:
            cx = cy = 0.0
        px_per_cm = pmap.px_per_cm_at((cx, cy))
        return cls(placement=placement, f=px_per_cm * placement.d, map=pmap, px_per_cm=px_per_cm)

    def save(self, path: str | Path) -> None:
        lines = [
            CALIB_HEADER,
            f"V={self.placement.v:.17g}",
            f"H={self.placement.h:.17g}",
            f"f={self.f:.17g}",
            " ".join(f"{c:.17g}" for c in self.map.h.ravel()),
        ]
        if self.map.k1 != 0.0:
            lines.append(f"k1={self.map.k1:.17g}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "CalibrationModel":
        lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
        if not lines or lines[0] != CALIB_HEADER:
            raise CalibrationError(f"{path}: missing '{CALIB_HEADER}' header")
        kv: dict[str, float] = {}
        coeffs: list[float] | None = None
        for ln in lines[1:]:
            if "=" in ln:
                key, val = ln.split("=", 1)
                kv[key.strip()] = float(val)
            else:
                coeffs = [float(tok) for tok in ln.split()]
        if coeffs is None or len(coeffs) != 9:
            raise CalibrationError(f"{path}: expected 9 homography coefficients")
        for key in ("V", "H", "f"):
            if key not in kv:
                raise CalibrationError(f"{path}: missing '{key}='")
        pmap = PlanarMap(h=np.array(coeffs).reshape(3, 3), k1=kv.get("k1", 0.0))
        return cls(placement=CameraPlacement(v=kv["V"], h=kv["H"]), f=kv["f"], map=pmap)


def pixels_to_world(pd: float, calib: CalibrationModel) -> float:
    """Object displacement in cm corresponding to a measured pixel distance."""
    return pd * calib.placement.d / calib.f
