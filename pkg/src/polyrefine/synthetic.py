"""Synthetic region corpus for desk-scale training and evaluation.

Each sample is a rendered crop: one region shape over a textured parchment
background, with an exact ground-truth boundary polygon, the mask obtained
by rasterizing that polygon, and a region class label.  The eight classes
map to distinct shape families and fill colors so both the boundary task
and the classification task are learnable at desk scale.  Aspect ratios
range from square to 16:1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import canonicalize_polygon, rasterize_polygon
from .masknet import REGION_CLASSES

BACKGROUND_RGB = (0.82, 0.75, 0.60)

# class -> (fill rgb, aspect range, base height range as a fraction of max)
CLASS_STYLES: dict[str, tuple[tuple[float, float, float], tuple[float, float], tuple[float, float]]] = {
    "Hole": ((0.08, 0.07, 0.06), (1.0, 1.6), (0.35, 0.75)),
    "Line Segment": ((0.25, 0.16, 0.10), (6.0, 16.0), (0.30, 0.60)),
    "Degradation": ((0.55, 0.50, 0.40), (1.0, 3.0), (0.45, 0.95)),
    "Character": ((0.15, 0.12, 0.35), (1.0, 2.5), (0.35, 0.70)),
    "Picture": ((0.55, 0.20, 0.15), (1.2, 3.0), (0.55, 1.00)),
    "Decorator": ((0.15, 0.40, 0.20), (2.0, 6.0), (0.35, 0.70)),
    "Library Marker": ((0.45, 0.15, 0.45), (1.0, 2.0), (0.30, 0.55)),
    "Boundary Line": ((0.60, 0.10, 0.10), (10.0, 16.0), (0.25, 0.45)),
}


@dataclass
class SyntheticSpec:
    count: int = 100
    min_height: int = 16
    max_height: int = 64
    max_width: int = 512
    max_aspect: float = 16.0
    noise: float = 0.05
    blur: float = 0.6
    vertices: int = 240
    margin: float = 0.14
    # every nth sample doubles its crop and widens the margin, so the corpus
    # also teaches background regions far away from any boundary
    sparse_every: int = 5

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be positive")
        if self.min_height < 8:
            raise ValueError("min_height must be at least 8 (network minimum)")
        if self.vertices < 200:
            raise ValueError("ground-truth polygons need at least 200 vertices")
        if self.sparse_every < 1:
            raise ValueError("sparse_every must be positive")


@dataclass
class Sample:
    image_id: str
    image: np.ndarray  # (3, H, W) float64 in [0, 1]
    gt_mask: np.ndarray  # (H, W) bool
    gt_polygon: np.ndarray  # (N, 2) float64
    class_index: int

    @property
    def class_name(self) -> str:
        return REGION_CLASSES[self.class_index]

    @property
    def height(self) -> int:
        return self.image.shape[1]

    @property
    def width(self) -> int:
        return self.image.shape[2]


def densify_polygon(points: np.ndarray, n_min: int) -> np.ndarray:
    """Insert evenly spaced points on each edge until >= n_min vertices.

    Original vertices are preserved, so the densified polygon traces the
    exact same boundary.
    """
    points = np.asarray(points, dtype=np.float64)
    nxt = np.roll(points, -1, axis=0)
    lengths = np.linalg.norm(nxt - points, axis=1)
    step = max(lengths.sum() / max(n_min, 3), 1e-9)
    out = []
    for p, q, ln in zip(points, nxt, lengths):
        n_sub = max(1, int(np.ceil(ln / step)))
        ts = np.arange(n_sub) / n_sub
        out.append(p[None, :] + ts[:, None] * (q - p)[None, :])
    return np.vstack(out)


def _ellipse(rng, w, h, margin, n, wobble=0.0, power=2.0):
    cx = w / 2 + rng.uniform(-0.04, 0.04) * w
    cy = h / 2 + rng.uniform(-0.04, 0.04) * h
    rx = (0.5 - margin) * w * rng.uniform(0.85, 1.0)
    ry = (0.5 - margin) * h * rng.uniform(0.85, 1.0)
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    cos_t, sin_t = np.cos(t), np.sin(t)
    e = 2.0 / power
    ux = np.sign(cos_t) * np.abs(cos_t) ** e
    uy = np.sign(sin_t) * np.abs(sin_t) ** e
    scale = np.ones(n)
    if wobble > 0:
        for harm in (2, 3, 5):
            scale += wobble / harm * np.sin(harm * t + rng.uniform(0, 2 * np.pi))
        scale = np.clip(scale, 0.5, 1.5)
    return np.column_stack([cx + rx * ux * scale, cy + ry * uy * scale])


def _ribbon(rng, w, h, margin, n, amplitude_frac, waves):
    x0, x1 = margin * w, (1 - margin) * w
    cy = h / 2
    amp = amplitude_frac * (0.5 - margin) * h
    tau = max(1.5, (0.5 - margin) * h - amp)
    phase = rng.uniform(0, 2 * np.pi)
    xs = np.linspace(x0, x1, n // 2)
    center = cy + amp * np.sin(waves * 2 * np.pi * (xs - x0) / (x1 - x0) + phase)
    top = np.column_stack([xs, center - tau])
    bottom = np.column_stack([xs[::-1], center[::-1] + tau])
    return np.vstack([top, bottom])


def _notched_rectangle(rng, w, h, margin, n, notches):
    x0, y0 = margin * w, margin * h
    x1, y1 = (1 - margin) * w, (1 - margin) * h
    depth = min(0.22 * (y1 - y0), 0.5 * (y1 - y0) - 1.0)

    def edge_notches(xa, xb, count):
        spans = []
        for i in range(count):
            lo = xa + (i + 0.15 + rng.uniform(0, 0.2)) * (xb - xa) / count
            hi = xa + (i + 0.55 + rng.uniform(0, 0.25)) * (xb - xa) / count
            spans.append((lo, hi))
        return spans

    pts = [(x0, y0)]
    for lo, hi in edge_notches(x0, x1, notches):
        pts += [(lo, y0), (lo, y0 + depth), (hi, y0 + depth), (hi, y0)]
    pts += [(x1, y0), (x1, y1)]
    for lo, hi in edge_notches(x0, x1, notches)[::-1]:
        pts += [(hi, y1), (hi, y1 - depth), (lo, y1 - depth), (lo, y1)]
    pts += [(x0, y1)]
    return densify_polygon(np.asarray(pts), n)


def _shape_for_class(rng, name, w, h, margin, n):
    if name == "Hole":
        return _ellipse(rng, w, h, margin, n)
    if name == "Library Marker":
        return _ellipse(rng, w, h, margin, n, power=rng.uniform(2.0, 2.6))
    if name == "Degradation":
        return _ellipse(rng, w, h, margin, n, wobble=0.35, power=2.0)
    if name == "Decorator":
        return _ellipse(rng, w, h, margin, n, power=rng.uniform(3.0, 6.0))
    if name == "Line Segment":
        return _ribbon(rng, w, h, margin, n, amplitude_frac=rng.uniform(0.3, 0.6), waves=rng.uniform(1.0, 2.5))
    if name == "Boundary Line":
        return _ribbon(rng, w, h, margin, n, amplitude_frac=rng.uniform(0.0, 0.15), waves=1.0)
    if name == "Picture":
        return _notched_rectangle(rng, w, h, margin, n, notches=0)
    if name == "Character":
        return _notched_rectangle(rng, w, h, margin, n, notches=int(rng.integers(1, 4)))
    raise ValueError(f"unknown region class {name!r}")


def _render(rng, poly, mask, w, h, fill, noise, blur):
    img = np.empty((3, h, w))
    coarse = rng.normal(0.0, 1.0, size=(3, max(2, h // 8), max(2, w // 8)))
    for c in range(3):
        texture = ndimage.zoom(coarse[c], (h / coarse.shape[1], w / coarse.shape[2]), order=1)
        img[c] = BACKGROUND_RGB[c] + 0.05 * texture
        img[c][mask] = fill[c] + 0.03 * texture[mask]
    img += rng.normal(0.0, noise, size=img.shape)
    if blur > 0:
        img = ndimage.gaussian_filter(img, sigma=(0.0, blur, blur))
    return np.clip(img, 0.0, 1.0)


def _sample_dims(rng, spec: SyntheticSpec, class_name: str, force_max_aspect: bool):
    _, (a_lo, a_hi), (h_lo, h_hi) = CLASS_STYLES[class_name]
    a_hi = min(a_hi, spec.max_aspect)
    a_lo = min(a_lo, a_hi)
    h = int(rng.integers(
        max(spec.min_height, int(h_lo * spec.max_height)),
        max(spec.min_height, int(h_hi * spec.max_height)) + 1,
    ))
    aspect = a_hi if force_max_aspect else float(rng.uniform(a_lo, a_hi))
    w = int(np.clip(round(h * aspect), 8, spec.max_width))
    return h, w


def gen_synthetic(spec: SyntheticSpec, seed: int) -> list[Sample]:
    """Render a corpus; classes cycle round-robin so the label set is balanced.

    Deterministic for a fixed (spec, seed).  Every other "Boundary Line"
    sample is forced to the maximum aspect ratio so the extreme-aspect
    contract is always exercised.
    """
    rng = np.random.default_rng(seed)
    samples = []
    bl_count = 0
    for i in range(spec.count):
        class_index = i % len(REGION_CLASSES)
        name = REGION_CLASSES[class_index]
        force_wide = False
        if name == "Boundary Line":
            force_wide = bl_count % 2 == 0
            bl_count += 1
        h, w = _sample_dims(rng, spec, name, force_wide)
        margin = spec.margin
        if spec.sparse_every and i % spec.sparse_every == spec.sparse_every - 1:
            h = min(2 * h, 2 * spec.max_height)
            w = min(2 * w, spec.max_width)
            margin = float(rng.uniform(0.27, 0.38))
        poly = canonicalize_polygon(_shape_for_class(rng, name, w, h, margin, spec.vertices))
        mask = rasterize_polygon(poly, h, w)
        fill = CLASS_STYLES[name][0]
        img = _render(rng, poly, mask, w, h, fill, spec.noise, spec.blur)
        samples.append(
            Sample(
                image_id=f"synth-{seed}-{i:05d}",
                image=img,
                gt_mask=mask,
                gt_polygon=poly,
                class_index=class_index,
            )
        )
    return samples


def split_dataset(samples: list[Sample], n_train: int, n_val: int, n_test: int):
    """Deterministic contiguous split; sizes must not exceed the corpus."""
    if n_train + n_val + n_test > len(samples):
        raise ValueError(
            f"split {n_train}+{n_val}+{n_test} exceeds corpus size {len(samples)}"
        )
    train = samples[:n_train]
    val = samples[n_train : n_train + n_val]
    test = samples[n_train + n_val : n_train + n_val + n_test]
    return train, val, test
