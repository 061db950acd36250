"""Residual graph-convolutional contour refiner.

Boundary points become nodes of a ring graph (each node linked to its k
sequential neighbors per side).  Node features concatenate the mask
network's half-resolution skip features, bilinearly sampled at the point,
with the point's unit-canvas coordinates.  A stack of graph convolutions
ending in a 2-output head predicts per-point displacements, applied
iteratively with the graph rebuilt from the displaced points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import canonicalize_polygon
from .masknet import SKIP_FEATURE_DIM

Weights = dict[str, Tensor]


@dataclass
class RefinerConfig:
    hop_k: int = 10
    num_res_blocks: int = 6
    hidden_dim: int = 64
    iterations: int = 2
    interp_factor: int = 10
    include_coords: bool = True  # False: backbone features only
    epsilon_stop: float | None = None  # optional mean-|disp| early stop, off by default

    def __post_init__(self):
        for name in ("hop_k", "num_res_blocks", "hidden_dim", "iterations", "interp_factor"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")

    @property
    def feature_dim(self) -> int:
        return SKIP_FEATURE_DIM + (2 if self.include_coords else 0)


@dataclass
class ContourGraph:
    features: Tensor  # (M, s) node feature matrix
    adjacency: np.ndarray  # (M, M) binary, symmetric, zero diagonal
    points: np.ndarray  # (M, 2) pixel coordinates the graph was built from


def ring_adjacency(m: int, k: int) -> np.ndarray:
    """Binary adjacency linking node i to nodes at ring distance 1..k."""
    if m <= 2 * k:
        raise ValueError(f"need more than 2k={2 * k} nodes on the ring, got {m}")
    idx = np.arange(m)
    dist = np.abs(idx[:, None] - idx[None, :])
    dist = np.minimum(dist, m - dist)
    return ((dist >= 1) & (dist <= k)).astype(np.float64)


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    """Symmetric normalization with self-loops: D^-1/2 (A+I) D^-1/2."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {a.shape}")
    with_loops = a + np.eye(a.shape[0])
    inv_sqrt_deg = 1.0 / np.sqrt(with_loops.sum(axis=1))
    return with_loops * inv_sqrt_deg[:, None] * inv_sqrt_deg[None, :]


def node_features(
    points: Tensor, skip_features: Tensor, crop_dims: tuple[int, int], include_coords: bool = True
) -> Tensor:
    """Sample skip features at (x/2, y/2) and append (x/W, y/H) coordinates."""
    h, w = crop_dims
    sampled = ad.bilinear_sample(skip_features, ad.hadamard(points, 0.5))
    if not include_coords:
        return sampled
    norm = ad.hadamard(points, np.array([1.0 / w, 1.0 / h]))
    return ad.concat([sampled, norm], axis=1)


def build_graph(
    points,
    skip_features: Tensor,
    crop_dims: tuple[int, int],
    k: int = 10,
    include_coords: bool = True,
) -> ContourGraph:
    """Assemble the ring contour graph for M boundary points."""
    pts = points if isinstance(points, Tensor) else Tensor(np.asarray(points, dtype=np.float64))
    m = pts.data.shape[0]
    adj = ring_adjacency(m, k)
    feats = node_features(pts, skip_features, crop_dims, include_coords)
    return ContourGraph(features=feats, adjacency=adj, points=pts.data.copy())


def gcn_layer(h: Tensor, a_hat: np.ndarray, weight: Tensor) -> Tensor:
    """Propagation rule: relu(A_hat @ H @ W)."""
    if h.shape[1] != weight.shape[0]:
        raise ValueError(f"gcn_layer shape mismatch: features {h.shape} vs weight {weight.shape}")
    return ad.relu(ad.matmul(ad.matmul(Tensor(a_hat), h), weight))


def res_gcn_layer(h: Tensor, a_hat: np.ndarray, weight: Tensor) -> Tensor:
    """Residual variant: gcn_layer output plus the identity skip."""
    if weight.shape[0] != weight.shape[1]:
        raise ValueError(f"residual gcn weight must be square, got {weight.shape}")
    return ad.add(gcn_layer(h, a_hat, weight), h)


def init_refiner_weights(config: RefinerConfig, seed: int) -> Weights:
    """He-scaled GCN weights; the displacement head starts at exactly zero."""
    rng = np.random.default_rng(seed)
    d = config.hidden_dim
    w: Weights = {}

    def dense(name, n_in, n_out):
        w[name] = Tensor(rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out)))

    dense("gcn_in.w", config.feature_dim, d)
    for i in range(config.num_res_blocks):
        dense(f"res{i}.w", d, d)
    dense("gcn_out.w", d, d)
    w["fc.w"] = Tensor(np.zeros((d, 2)))
    w["fc.b"] = Tensor(np.zeros(2))
    return w


def refiner_forward(graph: ContourGraph, weights: Weights, config: RefinerConfig) -> Tensor:
    """Per-node (dx, dy) displacements in unit-canvas coordinates."""
    a_hat = normalize_adjacency(graph.adjacency)
    h = gcn_layer(graph.features, a_hat, weights["gcn_in.w"])
    for i in range(config.num_res_blocks):
        h = res_gcn_layer(h, a_hat, weights[f"res{i}.w"])
    h = gcn_layer(h, a_hat, weights["gcn_out.w"])
    return ad.add(ad.matmul(h, weights["fc.w"]), weights["fc.b"])


def refine_tensor(
    points,
    skip_features: Tensor,
    weights: Weights,
    config: RefinerConfig,
    crop_dims: tuple[int, int],
) -> Tensor:
    """Iteratively displace the points; differentiable end to end.

    Each iteration rebuilds the graph (features re-sampled at the displaced
    positions) and adds the denormalized displacements.
    """
    h, w = crop_dims
    pts = points if isinstance(points, Tensor) else Tensor(np.asarray(points, dtype=np.float64))
    scale = np.array([float(w), float(h)])
    for _ in range(config.iterations):
        graph = build_graph(pts, skip_features, crop_dims, config.hop_k, config.include_coords)
        disp = refiner_forward(graph, weights, config)
        pts = ad.add(pts, ad.hadamard(disp, scale))
        if config.epsilon_stop is not None:
            if float(np.abs(disp.data).mean()) < config.epsilon_stop:
                break
    return pts


def refine(
    points: np.ndarray,
    skip_features: Tensor,
    weights: Weights,
    config: RefinerConfig,
    crop_dims: tuple[int, int],
) -> np.ndarray:
    """Inference entry point: refined polygon, re-canonicalized."""
    refined = refine_tensor(points, skip_features, weights, config, crop_dims)
    return canonicalize_polygon(refined.data)


def _interp_matrix(m: int, factor: int) -> np.ndarray:
    """(m*factor, m) linear interpolation operator along the closed polyline."""
    w = np.zeros((m * factor, m))
    for i in range(m):
        for j in range(factor):
            t = j / factor
            w[i * factor + j, i] = 1.0 - t
            w[i * factor + j, (i + 1) % m] = w[i * factor + j, (i + 1) % m] + t
    return w


def interpolate_contour(points, factor: int) -> Tensor:
    """Insert factor-1 evenly spaced points on every edge of the closed contour.

    Linear in the anchors, so gradients flow back to the original points.
    """
    if factor < 1:
        raise ValueError(f"interpolation factor must be >= 1, got {factor}")
    pts = points if isinstance(points, Tensor) else Tensor(np.asarray(points, dtype=np.float64))
    if factor == 1:
        return pts
    return ad.matmul(Tensor(_interp_matrix(pts.data.shape[0], factor)), pts)
