"""Attention-guided mask network.

A no-resize fully convolutional network: a stride-2 stem, a residual channel
ladder, and a chain of skip-fusion blocks that compress channels while
gating lower-level features with additive attention.  Outputs a full
resolution region mask probability map, a 120-channel half-resolution
feature map consumed by the contour refiner, and an 8-way region class
prediction.

No normalization layers are used: training runs at batch size 1 in float64,
where plain conv + relu with fan-in-scaled init is stable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

REGION_CLASSES = (
    "Hole",
    "Line Segment",
    "Degradation",
    "Character",
    "Picture",
    "Decorator",
    "Library Marker",
    "Boundary Line",
)

SKIP_FEATURE_DIM = 120

Weights = dict[str, Tensor]


@dataclass
class MaskNetConfig:
    """Architecture knobs; defaults give the 128-max ladder and 120-dim skips."""

    residual_channels: tuple[int, ...] = (32, 64, 128)
    fusion_channels: tuple[int, ...] = (64, 40, 16)
    num_classes: int = len(REGION_CLASSES)
    decoder_channels: int = 32
    attention_gating: bool = True

    def __post_init__(self):
        self.residual_channels = tuple(self.residual_channels)
        self.fusion_channels = tuple(self.fusion_channels)
        if len(self.residual_channels) != len(self.fusion_channels):
            raise ValueError("need one skip-fusion block per residual level")
        if any(b <= a for a, b in zip(self.residual_channels, self.residual_channels[1:])):
            raise ValueError(f"residual ladder must strictly ascend, got {self.residual_channels}")
        if any(b >= a for a, b in zip(self.fusion_channels, self.fusion_channels[1:])):
            raise ValueError(f"skip-fusion channels must strictly descend, got {self.fusion_channels}")
        if sum(self.fusion_channels) != SKIP_FEATURE_DIM:
            raise ValueError(
                f"skip-fusion channels must sum to {SKIP_FEATURE_DIM}, got {sum(self.fusion_channels)}"
            )


@dataclass
class MaskNetOutput:
    mask_prob: Tensor  # (H, W) in [0, 1]
    skip_features: Tensor  # (120, ceil(H/2), ceil(W/2))
    class_logits: Tensor  # (num_classes,)
    pooled: Tensor  # (1, top_channels) globally averaged backbone features


def _conv_init(rng, c_out: int, c_in: int, k: int) -> np.ndarray:
    std = np.sqrt(2.0 / (c_in * k * k))
    return rng.normal(0.0, std, size=(c_out, c_in, k, k))


def init_weights(config: MaskNetConfig, seed: int) -> Weights:
    """Fan-in-scaled conv kernels, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    w: Weights = {}

    def conv(name, c_out, c_in, k):
        w[f"{name}.w"] = Tensor(_conv_init(rng, c_out, c_in, k))
        w[f"{name}.b"] = Tensor(np.zeros(c_out))

    ladder = config.residual_channels
    conv("stem", ladder[0], 3, 3)
    c_prev = ladder[0]
    for i, c_out in enumerate(ladder):
        conv(f"res{i}.conv1", c_out, c_prev, 3)
        conv(f"res{i}.conv2", c_out, c_out, 3)
        if c_prev != c_out:
            conv(f"res{i}.proj", c_out, c_prev, 1)
        c_prev = c_out
    skips = [*ladder[:-1][::-1], ladder[0]][: len(config.fusion_channels)]
    prev_ch = ladder[-1]
    for i, (c_skip, c_out) in enumerate(zip(skips, config.fusion_channels)):
        c_int = max(c_skip // 2, 1)
        conv(f"fuse{i}.gate.ws", c_int, c_skip, 1)
        conv(f"fuse{i}.gate.wg", c_int, prev_ch, 1)
        conv(f"fuse{i}.gate.psi", 1, c_int, 1)
        conv(f"fuse{i}.conv", c_out, c_skip + prev_ch, 3)
        prev_ch = c_out
    w["dec.up.w"] = Tensor(
        rng.normal(0.0, np.sqrt(2.0 / SKIP_FEATURE_DIM), size=(SKIP_FEATURE_DIM, config.decoder_channels, 2, 2))
    )
    w["dec.up.b"] = Tensor(np.zeros(config.decoder_channels))
    conv("dec.out", 1, config.decoder_channels, 1)
    w["cls.w"] = Tensor(rng.normal(0.0, np.sqrt(2.0 / ladder[-1]), size=(ladder[-1], config.num_classes)))
    w["cls.b"] = Tensor(np.zeros(config.num_classes))
    return w


def set_requires_grad(weights: Weights, value: bool, prefix: str = "") -> None:
    for name, t in weights.items():
        if name.startswith(prefix):
            t.requires_grad = value


def clone_weights(weights: Weights) -> Weights:
    return {name: Tensor(t.data.copy(), requires_grad=t.requires_grad) for name, t in weights.items()}


def attention_gate(skip: Tensor, gating: Tensor, weights: Weights, name: str) -> Tensor:
    """Additive attention: skip scaled by a single-channel [0,1] coefficient map.

    alpha = sigmoid(psi(relu(Ws*skip + Wg*gating))) with 1x1 convolutions.
    """
    if skip.shape[1:] != gating.shape[1:]:
        raise ValueError(f"attention gate spatial mismatch: {skip.shape} vs {gating.shape}")
    s = ad.conv2d(skip, weights[f"{name}.ws.w"], weights[f"{name}.ws.b"])
    g = ad.conv2d(gating, weights[f"{name}.wg.w"], weights[f"{name}.wg.b"])
    alpha = ad.sigmoid(ad.conv2d(ad.relu(ad.add(s, g)), weights[f"{name}.psi.w"], weights[f"{name}.psi.b"]))
    return ad.hadamard(skip, alpha)


def _residual_block(x: Tensor, weights: Weights, name: str) -> Tensor:
    h = ad.relu(ad.conv2d(x, weights[f"{name}.conv1.w"], weights[f"{name}.conv1.b"], padding=1))
    h = ad.conv2d(h, weights[f"{name}.conv2.w"], weights[f"{name}.conv2.b"], padding=1)
    shortcut = x
    if f"{name}.proj.w" in weights:
        shortcut = ad.conv2d(x, weights[f"{name}.proj.w"], weights[f"{name}.proj.b"])
    return ad.relu(ad.add(h, shortcut))


def fusion_block(prev: Tensor, skip: Tensor, weights: Weights, name: str, gated: bool = True) -> Tensor:
    """Fuse an attention-gated low-level skip with the previous compressed features."""
    low = attention_gate(skip, prev, weights, f"{name}.gate") if gated else skip
    merged = ad.concat_channels([low, prev])
    return ad.relu(ad.conv2d(merged, weights[f"{name}.conv.w"], weights[f"{name}.conv.b"], padding=1))


def forward(image: Tensor, weights: Weights, config: MaskNetConfig | None = None) -> MaskNetOutput:
    """Run the network on a (3, H, W) image; H and W may be arbitrary (>= 8).

    Odd spatial dims are zero-padded to even on the right/bottom before the
    stride-2 stem and the decoded mask is cropped back to H x W.
    """
    config = config or MaskNetConfig()
    img = image if isinstance(image, Tensor) else Tensor(image)
    if img.data.ndim != 3 or img.data.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) image, got shape {img.shape}")
    _, h, w = img.data.shape
    if h < 8 or w < 8:
        raise ValueError(f"image too small: {h}x{w} (minimum 8x8)")
    pad_h, pad_w = h % 2, w % 2
    if pad_h or pad_w:
        img = Tensor(np.pad(img.data, ((0, 0), (0, pad_h), (0, pad_w))))

    x = ad.relu(ad.conv2d(img, weights["stem.w"], weights["stem.b"], stride=2, padding=1))
    stages = [x]
    for i in range(len(config.residual_channels)):
        x = _residual_block(x, weights, f"res{i}")
        stages.append(x)

    top = stages[-1]
    skips = [*stages[1:-1][::-1], stages[0]][: len(config.fusion_channels)]
    prev = top
    fusion_outputs = []
    for i, skip in enumerate(skips):
        prev = fusion_block(prev, skip, weights, f"fuse{i}", gated=config.attention_gating)
        fusion_outputs.append(prev)
    features = ad.concat_channels(fusion_outputs)

    up = ad.relu(ad.conv_transpose2d(features, weights["dec.up.w"], weights["dec.up.b"], stride=2))
    mask = ad.sigmoid(ad.conv2d(up, weights["dec.out.w"], weights["dec.out.b"]))
    mask = ad.reshape(mask, mask.shape[1], mask.shape[2])
    if pad_h or pad_w:
        mask = ad.crop_spatial(mask, h, w)

    pooled = ad.reshape(ad.adaptive_avg_pool(top), 1, top.shape[0])
    logits = ad.reshape(ad.add(ad.matmul(pooled, weights["cls.w"]), weights["cls.b"]), config.num_classes)
    return MaskNetOutput(mask_prob=mask, skip_features=features, class_logits=logits, pooled=pooled)


def region_classify(class_logits: Tensor) -> tuple[str, Tensor]:
    """Class label (argmax) and the softmax probability vector."""
    logits = class_logits if isinstance(class_logits, Tensor) else Tensor(class_logits)
    probs = ad.softmax(logits)
    return REGION_CLASSES[int(np.argmax(probs.data))], probs
