"""Gradient-based edge extraction: enhanced gradient image, edgel detection,
and chaining of neighboring edgels into contours.

Edges come out of three steps run in order: a derivative filter enhances the
contours, thresholding with non-maximum suppression keeps the pertinent edge
elements (edgels), and neighboring edgels are linked into edge chains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage as ndi

from .frames import Frame

# Edgels this close to the frame border are discarded; Sobel support plus the
# +-1 px direction probe make closer ones unreliable.
BORDER_MARGIN = 2

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class EdgeParams:
    """Tunables for edge extraction.

    Absolute thresholds win over the ratio defaults when given. The ratio
    defaults derive the high threshold from the frame's peak gradient
    magnitude and the low threshold from the high one.
    """

    high: float | None = None
    low: float | None = None
    high_ratio: float = 0.2     # high = high_ratio * max magnitude
    low_ratio: float = 0.4      # low = low_ratio * high
    min_chain_px: float = 5.0   # chains shorter than this are dropped
    max_turn_deg: float = 60.0  # direction continuity bound between neighbors
    chain_slack_px: float = 0.5  # subpixel slack on the sqrt(2) chaining radius

    def thresholds(self, max_mag: float) -> tuple[float, float]:
        high = self.high if self.high is not None else self.high_ratio * max_mag
        low = self.low if self.low is not None else self.low_ratio * high
        if not 0 <= low <= high:
            raise ValueError(f"thresholds must satisfy 0 <= low <= high, got {low}, {high}")
        return low, high


@dataclass(frozen=True)
class GradientField:
    """Per-pixel signed gradient components and magnitude.

    Components come from 3x3 Sobel kernels with replicate padding; dividing
    by 8 turns them into unit-spacing derivative estimates.
    """

    gx: np.ndarray
    gy: np.ndarray
    mag: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.mag.shape


@dataclass(frozen=True, slots=True)
class Edgel:
    """An edge element: subpixel point of locally maximal gradient magnitude
    along the gradient direction."""

    position: np.ndarray  # (x, y), subpixel
    direction: float      # gradient direction, radians in [0, 2*pi)
    magnitude: float


@dataclass(frozen=True)
class EdgeChain:
    """An ordered run of neighboring edgels forming one contour fragment."""

    edgels: list[Edgel]
    closed: bool
    length: float  # polyline length in pixels, including the closing segment

    def positions(self) -> np.ndarray:
        return np.array([e.position for e in self.edgels])


@dataclass(frozen=True)
class EdgeMap:
    """Everything edge extraction produces for one frame."""

    field: GradientField
    edgels: list[Edgel]
    chains: list[EdgeChain]
    params: EdgeParams = field(default_factory=EdgeParams)

    def chain_positions(self) -> np.ndarray:
        """Positions of all chained edgels, (n, 2)."""
        if not self.chains:
            return np.empty((0, 2))
        return np.concatenate([c.positions() for c in self.chains])

    def chain_weights(self) -> np.ndarray:
        """Arc-length share of each chained edgel, aligned with chain_positions."""
        if not self.chains:
            return np.empty(0)
        return np.concatenate([_arc_weights(c) for c in self.chains])

    def chain_directions(self) -> np.ndarray:
        if not self.chains:
            return np.empty(0)
        return np.concatenate([[e.direction for e in c.edgels] for c in self.chains])

    def total_length(self) -> float:
        return float(sum(c.length for c in self.chains))


def gradient(frame: Frame) -> GradientField:
    """Sobel gradient of a frame: gx, gy and the per-pixel magnitude.

    The convolution runs in int16 (exact for 8-bit input; responses stay
    within +-1020) and is widened to float64 afterwards.
    """
    img = frame.pixels.astype(np.int16)
    gx = ndi.sobel(img, axis=1, mode="nearest").astype(np.float64)
    gy = ndi.sobel(img, axis=0, mode="nearest").astype(np.float64)
    return GradientField(gx=gx, gy=gy, mag=np.sqrt(gx * gx + gy * gy))


def _bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear samples of img at float coordinates (callers keep them in range)."""
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    fx = x - x0
    fy = y - y0
    h, w = img.shape
    x0 = np.clip(x0, 0, w - 2)
    y0 = np.clip(y0, 0, h - 2)
    top = img[y0, x0] * (1 - fx) + img[y0, x0 + 1] * fx
    bot = img[y0 + 1, x0] * (1 - fx) + img[y0 + 1, x0 + 1] * fx
    return top * (1 - fy) + bot * fy


def extract_edgels(fld: GradientField, low: float, high: float) -> list[Edgel]:
    """Detect edgels: direction-true non-maximum suppression plus hysteresis.

    A pixel is a candidate when its magnitude is a local maximum along the
    gradient direction (neighbors sampled by bilinear interpolation +-1 px
    along that direction; ties resolved toward the ascending side so an
    ideal two-pixel plateau yields a single edgel). Hysteresis keeps the
    candidates at or above ``high`` plus any candidate at or above ``low``
    that is 8-connected to a kept one. Positions are refined by a parabolic
    fit of the magnitude along the direction.
    """
    if not 0 <= low <= high:
        raise ValueError(f"thresholds must satisfy 0 <= low <= high, got {low}, {high}")
    mag = fld.mag
    h, w = mag.shape
    active = mag >= max(low, 1e-12)
    active[:BORDER_MARGIN, :] = False
    active[-BORDER_MARGIN:, :] = False
    active[:, :BORDER_MARGIN] = False
    active[:, -BORDER_MARGIN:] = False
    ys, xs = np.nonzero(active)
    if ys.size == 0:
        return []

    m0 = mag[ys, xs]
    ux = fld.gx[ys, xs] / m0
    uy = fld.gy[ys, xs] / m0
    m_plus = _bilinear(mag, xs + ux, ys + uy)
    m_minus = _bilinear(mag, xs - ux, ys - uy)
    is_max = (m0 > m_plus) & (m0 >= m_minus)

    cand = np.zeros_like(active)
    cand[ys[is_max], xs[is_max]] = True

    # Hysteresis: keep 8-connected candidate groups that contain a strong pixel.
    labels, nlab = ndi.label(cand, structure=_EIGHT_CONNECTED)
    if nlab == 0:
        return []
    strong = cand & (mag >= high)
    strong_labels = np.zeros(nlab + 1, dtype=bool)
    strong_labels[np.unique(labels[strong])] = True
    strong_labels[0] = False
    keep = strong_labels[labels] & cand

    ks = keep[ys, xs]
    ys, xs = ys[ks], xs[ks]
    m0, ux, uy = m0[ks], ux[ks], uy[ks]
    m_plus, m_minus = m_plus[ks], m_minus[ks]

    # Parabolic subpixel refinement along the gradient direction.
    denom = m_minus - 2.0 * m0 + m_plus
    with np.errstate(divide="ignore", invalid="ignore"):
        off = 0.5 * (m_minus - m_plus) / denom
    off = np.where(np.abs(denom) < 1e-12, 0.0, off)
    off = np.clip(off, -0.5, 0.5)
    px = xs + off * ux
    py = ys + off * uy
    dirs = np.mod(np.arctan2(fld.gy[ys, xs], fld.gx[ys, xs]), 2.0 * math.pi)

    order = np.lexsort((xs, ys))
    return [
        Edgel(position=np.array((px[i], py[i])), direction=float(dirs[i]), magnitude=float(m0[i]))
        for i in order
    ]


def _arc_weights(chain: EdgeChain) -> np.ndarray:
    """Per-edgel share of the chain's polyline length (halves of the adjacent segments)."""
    pos = chain.positions()
    n = len(pos)
    if n == 1:
        return np.array([chain.length])
    seg = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    wts = np.zeros(n)
    wts[:-1] += seg / 2.0
    wts[1:] += seg / 2.0
    if chain.closed:
        closing = np.linalg.norm(pos[0] - pos[-1])
        wts[0] += closing / 2.0
        wts[-1] += closing / 2.0
    return wts


def chain(edgels: list[Edgel], params: EdgeParams | None = None) -> list[EdgeChain]:
    """Link 8-neighboring edgels with continuous direction into chains.

    Greedy: walks from each unvisited edgel in both directions, always taking
    the nearest unvisited neighbor whose gradient direction differs by less
    than the continuity bound. Edgels of chains shorter than the minimum
    length are dropped; every retained edgel belongs to exactly one chain.
    """
    params = params or EdgeParams()
    n = len(edgels)
    if n == 0:
        return []

    # NMS leaves at most one edgel per integer pixel, so a dense index grid
    # resolves neighbor lookups in O(1).
    pos = np.array([e.position for e in edgels])
    ix = np.rint(pos[:, 0]).astype(np.intp)
    iy = np.rint(pos[:, 1]).astype(np.intp)
    gw = int(ix.max()) + 2
    gh = int(iy.max()) + 2
    grid = np.full((gh, gw), -1, dtype=np.intp)
    grid[iy, ix] = np.arange(n)

    # Per-edgel candidate neighbor lists, precomputed vectorized then handed
    # to plain Python lists (the walk itself is sequential).
    neigh = np.full((n, 8), -1, dtype=np.intp)
    slot = 0
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            yy = iy + dy
            xx = ix + dx
            ok = (yy >= 0) & (yy < gh) & (xx >= 0) & (xx < gw)
            vals = np.full(n, -1, dtype=np.intp)
            vals[ok] = grid[yy[ok], xx[ok]]
            neigh[:, slot] = vals
            slot += 1

    neighbors = neigh.tolist()
    xlist = pos[:, 0].tolist()
    ylist = pos[:, 1].tolist()
    dirs = [e.direction for e in edgels]
    cosd = [math.cos(d) for d in dirs]
    sind = [math.sin(d) for d in dirs]
    min_dot = math.cos(math.radians(params.max_turn_deg))
    max_link = math.sqrt(2.0) + params.chain_slack_px
    max_link2 = max_link * max_link

    visited = [False] * n

    def best_link(i: int) -> int:
        """Nearest unvisited, direction-compatible neighbor of edgel i, or -1."""
        best = -1
        best_d2 = max_link2
        ci, si, xi, yi = cosd[i], sind[i], xlist[i], ylist[i]
        for j in neighbors[i]:
            if j < 0 or visited[j]:
                continue
            if ci * cosd[j] + si * sind[j] <= min_dot:
                continue
            dx = xlist[j] - xi
            dy = ylist[j] - yi
            d2 = dx * dx + dy * dy
            if d2 < best_d2 or (d2 == best_d2 and (best == -1 or j < best)):
                best = j
                best_d2 = d2
        return best

    chains: list[EdgeChain] = []
    for seed in range(n):
        if visited[seed]:
            continue
        visited[seed] = True
        forward = [seed]
        while (j := best_link(forward[-1])) >= 0:
            visited[j] = True
            forward.append(j)
        backward: list[int] = []
        while (j := best_link((backward or [seed])[-1])) >= 0:
            visited[j] = True
            backward.append(j)
        idx = backward[::-1] + forward

        members = [edgels[k] for k in idx]
        p = pos[idx]
        seg_len = float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum()) if len(idx) > 1 else 0.0
        closed = False
        if len(idx) >= 4:
            gap = p[0] - p[-1]
            gap2 = float(gap @ gap)
            a, b = idx[0], idx[-1]
            if gap2 <= max_link2 and cosd[a] * cosd[b] + sind[a] * sind[b] > min_dot:
                closed = True
                seg_len += math.sqrt(gap2)
        if seg_len >= params.min_chain_px:
            chains.append(EdgeChain(edgels=members, closed=closed, length=seg_len))
    return chains


def edge_map(frame: Frame, params: EdgeParams | None = None) -> EdgeMap:
    """Full edge extraction for one frame: gradient, edgels, chains."""
    params = params or EdgeParams()
    fld = gradient(frame)
    low, high = params.thresholds(float(fld.mag.max()))
    edgels = extract_edgels(fld, low, high)
    chains = chain(edgels, params)
    return EdgeMap(field=fld, edgels=edgels, chains=chains, params=params)
