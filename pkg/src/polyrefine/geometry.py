"""Non-learned geometry: boundary-aware distance maps and contourization.

Array conventions used throughout the package:

* Masks and probability maps are ``(H, W)`` arrays indexed ``[row, col]``.
* Polygons are ``(N, 2)`` float64 arrays of ``(x, y)`` points where ``x``
  runs along columns and ``y`` along rows.  Pixel ``(r, c)`` occupies the
  unit square ``[c, c+1] x [r, r+1]``; its center is ``(c+0.5, r+0.5)``.
  Traced contours therefore have integer (pixel-corner) coordinates.
* Canonical polygons are closed, have no consecutive duplicate points,
  positive shoelace area (counterclockwise with the y axis pointing up),
  and start at the topmost-then-leftmost vertex (minimal y, then x).

Adjacency is 4-connected wherever boundary semantics matter: a boundary
pixel is a foreground pixel with at least one background 4-neighbor, and
the erosion/dilation level peeling uses the 3x3 cross element so that the
first peel removes exactly those boundary pixels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import interpolate as sp_interpolate
from scipy import ndimage


# ---------------------------------------------------------------------------
# validation helpers


def check_mask(mask) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D (H, W), got shape {mask.shape}")
    return mask.astype(bool)


def check_prob_map(prob) -> np.ndarray:
    prob = np.asarray(prob, dtype=np.float64)
    if prob.ndim != 2:
        raise ValueError(f"probability map must be 2-D (H, W), got shape {prob.shape}")
    return prob


def check_polygon(points, min_points: int = 3) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise ValueError(f"polygon must be an (N, 2) array, got shape {points.shape}")
    if len(points) < min_points:
        raise ValueError(f"polygon needs >= {min_points} points, got {len(points)}")
    if not np.isfinite(points).all():
        raise ValueError("polygon contains non-finite coordinates")
    return points


# ---------------------------------------------------------------------------
# polygon utilities


def polygon_area(points: np.ndarray) -> float:
    """Signed shoelace area; positive for the canonical orientation."""
    points = check_polygon(points)
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def polygon_perimeter(points: np.ndarray) -> float:
    points = check_polygon(points)
    return float(np.sum(np.linalg.norm(np.roll(points, -1, axis=0) - points, axis=1)))


def dedupe_consecutive(points: np.ndarray) -> np.ndarray:
    """Drop consecutive duplicates, including a last point equal to the first."""
    points = np.asarray(points, dtype=np.float64)
    keep = np.ones(len(points), dtype=bool)
    keep[1:] = np.any(points[1:] != points[:-1], axis=1)
    points = points[keep]
    if len(points) > 1 and np.all(points[0] == points[-1]):
        points = points[:-1]
    return points


def canonicalize_polygon(points: np.ndarray) -> np.ndarray:
    """Return the canonical form: CCW, starting at the topmost-then-leftmost vertex."""
    points = dedupe_consecutive(check_polygon(points, min_points=1))
    if len(points) < 3:
        raise ValueError(f"polygon needs >= 3 distinct points, got {len(points)}")
    if polygon_area(points) < 0:
        points = points[::-1]
    start = np.lexsort((points[:, 0], points[:, 1]))[0]
    return np.roll(points, -start, axis=0)


def polygon_is_simple(points: np.ndarray, tol: float = 1e-9) -> bool:
    """True when no two non-adjacent edges of the closed polygon intersect."""
    points = check_polygon(points)
    n = len(points)
    a = points
    b = np.roll(points, -1, axis=0)
    d = b - a
    for i in range(n):
        # vectorized segment-pair test of edge i against edges i+2 .. n-1
        js = np.arange(i + 2, n if i > 0 else n - 1)
        if len(js) == 0:
            continue
        p, r = a[i], d[i]
        q, s = a[js], d[js]
        rxs = r[0] * s[:, 1] - r[1] * s[:, 0]
        qp = q - p
        qpxr = qp[:, 0] * r[1] - qp[:, 1] * r[0]
        nonpar = np.abs(rxs) > tol
        t = np.where(nonpar, (qp[:, 0] * s[:, 1] - qp[:, 1] * s[:, 0]) / np.where(nonpar, rxs, 1.0), np.inf)
        u = np.where(nonpar, qpxr / np.where(nonpar, rxs, 1.0), np.inf)
        hit = nonpar & (t > tol) & (t < 1 - tol) & (u > tol) & (u < 1 - tol)
        if hit.any():
            return False
        # collinear overlap
        par = (~nonpar) & (np.abs(qpxr) <= tol)
        if par.any():
            rr = float(r @ r)
            t0 = (qp[par] @ r) / rr
            t1 = t0 + (s[par] @ r) / rr
            lo = np.minimum(t0, t1)
            hi = np.maximum(t0, t1)
            if np.any((hi > tol) & (lo < 1 - tol)):
                return False
    return True


def resample_closed_polyline(points: np.ndarray, m: int) -> np.ndarray:
    """Sample ``m`` points at equal arc length along the closed polyline."""
    points = dedupe_consecutive(np.asarray(points, dtype=np.float64))
    closed = np.vstack([points, points[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 0:
        raise ValueError("degenerate polyline with zero perimeter")
    targets = np.arange(m) * (total / m)
    xs = np.interp(targets, cum, closed[:, 0])
    ys = np.interp(targets, cum, closed[:, 1])
    return np.column_stack([xs, ys])


def rasterize_polygon(points: np.ndarray, height: int, width: int) -> np.ndarray:
    """Even-odd fill: pixels whose center lies inside the closed polygon."""
    points = check_polygon(points)
    inside = np.zeros((height, width), dtype=bool)
    cx = np.arange(width) + 0.5
    cy = np.arange(height) + 0.5
    nxt = np.roll(points, -1, axis=0)
    for (x0, y0), (x1, y1) in zip(points, nxt):
        if y0 == y1:
            continue
        ylo, yhi = (y0, y1) if y0 < y1 else (y1, y0)
        r0 = max(0, int(np.ceil(ylo - 0.5)))
        r1 = min(height, int(np.floor(yhi - 0.5)) + 1)
        if r0 >= r1:
            continue
        rows = cy[r0:r1]
        crossing = (y0 > rows) != (y1 > rows)
        xint = x0 + (rows - y0) * (x1 - x0) / (y1 - y0)
        inside[r0:r1] ^= crossing[:, None] & (cx[None, :] < xint[:, None])
    return inside


# ---------------------------------------------------------------------------
# fast marching distance map


def _shift4(mask: np.ndarray) -> np.ndarray:
    """Union of the four axis shifts (3x3 cross dilation, outside = background)."""
    out = np.zeros_like(mask)
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    return out


def _steps_from(source: np.ndarray, region: np.ndarray) -> np.ndarray:
    """4-connected BFS depth from ``source`` into ``region`` (unreached = -1)."""
    dist = np.where(source, 0, -1).astype(np.int64)
    frontier = source
    depth = 0
    while True:
        grown = _shift4(frontier) & region & (dist < 0)
        if not grown.any():
            return dist
        depth += 1
        dist[grown] = depth
        frontier = grown


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with at least one background 4-neighbor."""
    fg = check_mask(mask)
    return fg & _shift4(~fg)


def level_map(mask: np.ndarray) -> np.ndarray:
    """Integer contour levels grown from the region boundary.

    Boundary pixels sit at level 0.  Peeling the mask with successive
    3x3-cross erosions assigns the remaining interior levels 1, 2, ...;
    successive cross dilations assign exterior levels 1, 2, ...
    """
    fg = check_mask(mask)
    if fg.all():
        raise ValueError("mask has no background pixels")
    if not fg.any():
        raise ValueError("mask has no foreground pixels")
    levels = np.empty(fg.shape, dtype=np.int64)
    # interior: depth of the bg->fg BFS is the erosion pass that removes a
    # pixel, so its level is depth - 1; exterior: dilation pass that adds it
    levels[fg] = _steps_from(~fg, fg)[fg] - 1
    levels[~fg] = _steps_from(fg, ~fg)[~fg]
    return levels


def fast_marching_map(gt_mask: np.ndarray) -> np.ndarray:
    """Boundary-aware weight map: 1 on boundary pixels, decaying to 0.

    Levels are inverted by subtracting from the global maximum, then divided
    by the new maximum, giving a weight in [0, 1] everywhere.
    """
    levels = level_map(gt_mask)
    top = int(levels.max())
    inverted = top - levels
    return inverted / float(inverted.max())


# ---------------------------------------------------------------------------
# mask morphology


def threshold(mask_prob: np.ndarray, t: float = 0.5) -> np.ndarray:
    """Binarize a probability map; ties (p == t) count as foreground."""
    prob = check_prob_map(mask_prob)
    if not 0.0 < t < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {t}")
    return prob >= t


def _erode4(mask: np.ndarray) -> np.ndarray:
    out = np.ones_like(mask)
    out[1:, :] &= mask[:-1, :]
    out[:-1, :] &= mask[1:, :]
    out[:, 1:] &= mask[:, :-1]
    out[:, :-1] &= mask[:, 1:]
    out[0, :] = False
    out[-1, :] = False
    out[:, 0] = False
    out[:, -1] = False
    return out & mask


def morph_close(mask: np.ndarray) -> np.ndarray:
    """Morphological closing with the 3x3 disk (cross) element.

    Computed on a 1-pixel padded grid so border-touching regions survive and
    the operation is exactly idempotent.
    """
    fg = check_mask(mask)
    padded = np.pad(fg, 1)
    closed = _erode4(padded | _shift4(padded))
    return closed[1:-1, 1:-1]


@dataclass
class Component:
    """A connected region of a mask with its area and centroid (x, y)."""

    mask: np.ndarray
    area: int
    centroid: tuple[float, float]


def major_components(mask: np.ndarray, area_fraction: float = 0.05) -> list[Component]:
    """8-connected components whose area reaches ``area_fraction`` of the largest."""
    fg = check_mask(mask)
    if not fg.any():
        return []
    labels, n = ndimage.label(fg, structure=np.ones((3, 3), dtype=bool))
    flat = labels.ravel()
    areas = np.bincount(flat, minlength=n + 1)[1:]
    rows_grid, cols_grid = np.indices(fg.shape)
    row_sums = np.bincount(flat, weights=rows_grid.ravel(), minlength=n + 1)[1:]
    col_sums = np.bincount(flat, weights=cols_grid.ravel(), minlength=n + 1)[1:]
    threshold_area = area_fraction * areas.max()
    comps = []
    for lab in range(1, n + 1):
        area = int(areas[lab - 1])
        if area < threshold_area:
            continue
        comps.append(
            Component(
                mask=labels == lab,
                area=area,
                centroid=(
                    float(col_sums[lab - 1] / area + 0.5),
                    float(row_sums[lab - 1] / area + 0.5),
                ),
            )
        )
    comps.sort(key=lambda c: (-c.area, c.centroid))
    return comps


def _stamp_band(mask: np.ndarray, p0, p1, thickness: float) -> None:
    """Rasterize a straight band of the given thickness between two points."""
    h, w = mask.shape
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    d = p1 - p0
    length = float(np.hypot(*d))
    if length == 0:
        return
    u = d / length
    lo_x = max(0, int(np.floor(min(p0[0], p1[0]) - thickness)))
    hi_x = min(w, int(np.ceil(max(p0[0], p1[0]) + thickness)) + 1)
    lo_y = max(0, int(np.floor(min(p0[1], p1[1]) - thickness)))
    hi_y = min(h, int(np.ceil(max(p0[1], p1[1]) + thickness)) + 1)
    if lo_x >= hi_x or lo_y >= hi_y:
        return
    cx = np.arange(lo_x, hi_x) + 0.5
    cy = np.arange(lo_y, hi_y) + 0.5
    rx = cx[None, :] - p0[0]
    ry = cy[:, None] - p0[1]
    along = rx * u[0] + ry * u[1]
    perp = rx * -u[1] + ry * u[0]
    # half-open band so an axis-aligned band covers exactly `thickness` rows
    band = (along >= 0) & (along <= length) & (perp >= -thickness / 2) & (perp < thickness / 2)
    mask[lo_y:hi_y, lo_x:hi_x] |= band
    # dense centerline samples keep steep thin bands gap-free
    steps = max(2, int(np.ceil(length * 4)))
    ts = np.linspace(0.0, 1.0, steps)
    px = np.clip((p0[0] + ts * d[0]).astype(np.int64), 0, w - 1)
    py = np.clip((p0[1] + ts * d[1]).astype(np.int64), 0, h - 1)
    mask[py, px] = True


def connect_components(components: list[Component], image_height: int) -> np.ndarray:
    """Union the components and join consecutive centroids with thick bands.

    Centroids are visited in ascending x order (ties broken by y); band
    thickness is ``max(1, round(H/7))`` pixels.
    """
    if not components:
        raise ValueError("connect_components requires at least one component")
    out = np.zeros_like(components[0].mask)
    for c in components:
        out |= c.mask
    if len(components) == 1:
        return out
    thickness = max(1, int(np.floor(image_height / 7 + 0.5)))
    cents = sorted((c.centroid for c in components), key=lambda p: (p[0], p[1]))
    for p0, p1 in zip(cents[:-1], cents[1:]):
        _stamp_band(out, p0, p1, float(thickness))
    return out


def four_connect_repair(mask: np.ndarray) -> np.ndarray:
    """Bridge diagonal-only pixel adjacencies so the region is 4-connected."""
    out = check_mask(mask).copy()
    while True:
        a = out[:-1, :-1]
        b = out[:-1, 1:]
        c = out[1:, :-1]
        d = out[1:, 1:]
        diag = a & d & ~b & ~c
        anti = b & c & ~a & ~d
        if not (diag.any() or anti.any()):
            return out
        out[:-1, 1:] |= diag
        out[:-1, :-1] |= anti


# ---------------------------------------------------------------------------
# contour tracing and sampling

_HEADINGS = ((1, 0), (0, 1), (-1, 0), (0, -1))  # E, S, W, N


def _crack_edge_ok(fg: np.ndarray, x: int, y: int, d: int) -> bool:
    """Is corner (x, y) -> heading d a crack edge with foreground on the right?"""
    h, w = fg.shape

    def at(r, c):
        return 0 <= r < h and 0 <= c < w and fg[r, c]

    if d == 0:  # E: below fg, above bg
        return at(y, x) and not at(y - 1, x)
    if d == 1:  # S: left-of-col fg is x-1 side? keep region west
        return at(y, x - 1) and not at(y, x)
    if d == 2:  # W
        return at(y - 1, x - 1) and not at(y, x - 1)
    return at(y - 1, x) and not at(y - 1, x - 1)  # N


def trace_contour(mask: np.ndarray) -> np.ndarray:
    """Outer boundary of a connected region as a pixel-corner polygon.

    Walks the cracks between foreground and background keeping the region on
    the right, starting from the top-left corner of the topmost-leftmost
    foreground pixel.  For a 4-connected solid region the result is a simple
    closed curve whose shoelace area equals the pixel count.
    """
    fg = check_mask(mask)
    if not fg.any():
        raise ValueError("cannot trace an empty mask")
    rows, cols = np.nonzero(fg)
    r0 = int(rows.min())
    c0 = int(cols[rows == r0].min())
    start = (c0, r0)
    x, y, d = c0, r0, 0
    points = []
    limit = 4 * (fg.shape[0] + 1) * (fg.shape[1] + 1)
    for _ in range(limit):
        points.append((float(x), float(y)))
        x += _HEADINGS[d][0]
        y += _HEADINGS[d][1]
        # prefer the right turn so the walk hugs the region at pinch corners
        for turn in (1, 0, 3):
            nd = (d + turn) % 4
            if _crack_edge_ok(fg, x, y, nd):
                d = nd
                break
        else:
            raise RuntimeError("contour trace lost the boundary")
        if (x, y) == start and d == 0:
            break
    else:
        raise RuntimeError("contour trace failed to close")
    return canonicalize_polygon(np.asarray(points))


def sample_uniform(
    contour: np.ndarray, m: int = 200, smoothing: float = 1.0
) -> np.ndarray:
    """Fit a closed cubic b-spline to the contour and sample m points uniformly.

    ``smoothing`` is the per-point RMS deviation allowance in pixels (the
    spline residual budget is ``n * smoothing**2``).  Contours with fewer
    than 4 distinct points fall back to linear arc-length resampling.
    """
    if m < 3:
        raise ValueError(f"need at least 3 samples, got {m}")
    points = dedupe_consecutive(check_polygon(contour, min_points=2))
    if len(points) < 4:
        sampled = resample_closed_polyline(points, m)
        return canonicalize_polygon(sampled)
    closed = np.vstack([points, points[:1]])
    try:
        # residual budget n * smoothing^2, tightened until no contour point
        # drifts more than `smoothing` pixels (keeps small shapes enclosed)
        s = len(points) * smoothing**2
        while True:
            tck, u = sp_interpolate.splprep(
                [closed[:, 0], closed[:, 1]], s=s, per=True, k=3, quiet=2
            )
            fx, fy = sp_interpolate.splev(u, tck)
            dev = np.hypot(fx - closed[:, 0], fy - closed[:, 1]).max()
            if dev <= max(smoothing, 1e-6) or s <= 1e-9:
                break
            s /= 2.0
        dense_u = np.linspace(0.0, 1.0, max(4096, 16 * m) + 1)
        dx, dy = sp_interpolate.splev(dense_u, tck)
    except Exception:
        return canonicalize_polygon(resample_closed_polyline(points, m))
    dense = np.column_stack([dx, dy])
    seg = np.linalg.norm(np.diff(dense, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 0:
        return canonicalize_polygon(resample_closed_polyline(points, m))
    targets = np.arange(m) * (total / m)
    us = np.interp(targets, cum, dense_u)
    sx, sy = sp_interpolate.splev(us, tck)
    return canonicalize_polygon(np.column_stack([sx, sy]))


def _rectangle_polygon(width: float, height: float) -> np.ndarray:
    return np.array(
        [[0.0, 0.0], [0.0, height], [width, height], [width, 0.0]], dtype=np.float64
    )


def contourize(
    mask_prob: np.ndarray,
    num_points: int = 200,
    thresh: float = 0.5,
    area_fraction: float = 0.05,
    smoothing: float = 1.0,
) -> np.ndarray:
    """Mask probability map -> m uniformly sampled boundary points.

    threshold -> morphological closing -> major components -> centroid
    joining -> contour trace -> b-spline resampling.  An empty thresholded
    mask falls back to the crop's rectangle boundary.
    """
    prob = check_prob_map(mask_prob)
    h, w = prob.shape
    fg = threshold(prob, thresh)
    if not fg.any():
        rect = _rectangle_polygon(float(w), float(h))
        return canonicalize_polygon(resample_closed_polyline(rect, num_points))
    fg = morph_close(fg)
    comps = major_components(fg, area_fraction)
    joined = connect_components(comps, h)
    joined = four_connect_repair(joined)
    contour = trace_contour(joined)
    return sample_uniform(contour, num_points, smoothing)
