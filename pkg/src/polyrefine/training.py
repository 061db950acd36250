"""Three-phase training schedule plus the standalone classifier phase.

Phase 1 fits the mask network with the distance-map-weighted focal loss;
phase 2 freezes it and fits the contour refiner with the sum-of-minima
contour loss on the unit canvas; phase 3 fine-tunes both jointly.  The
classifier head trains last against frozen backbone features.

Every phase is single-threaded and deterministic for a fixed seed, logs
per-epoch train/validation losses to CSV, and returns the weights of the
best validation epoch.  The optimizer is plain SGD with momentum 0.9; the
restart schedule multiplies the learning rate by 5 for 3-epoch windows, and
once the focal exponent engages the rate halves every 7 epochs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import contour_gcn as cg
from . import geometry as geo
from . import losses
from . import masknet as mn
from .autodiff import Tensor
from .synthetic import Sample


@dataclass
class TrainConfig:
    lr: float
    epochs: int
    seed: int = 0
    momentum: float = 0.9
    restarts: tuple[tuple[int, float, int], ...] = ()  # (start_epoch, multiplier, duration)
    decay_factor: float = 0.5
    decay_every: int = 7
    decay_from_epoch: int | None = None  # standalone decay for refiner phases
    gamma_final: float = 2.0
    gamma_switch_epoch: int | None = None  # fixed override for the plateau trigger
    plateau_rel_improvement: float = 0.01
    plateau_patience: int = 3
    lambda_joint: float = 200.0
    clip_norm: float | None = None  # global gradient-norm clip, step stability
    log_dir: Path | None = None

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.epochs < 1:
            raise ValueError("need at least one epoch")

    @staticmethod
    def phase1(epochs: int = 12, seed: int = 0, **kw) -> "TrainConfig":
        kw.setdefault("restarts", ((10, 5.0, 3), (20, 5.0, 3)))
        kw.setdefault("lr", 3e-5)
        return TrainConfig(epochs=epochs, seed=seed, **kw)

    @staticmethod
    def phase2(epochs: int = 10, seed: int = 0, **kw) -> "TrainConfig":
        kw.setdefault("lr", 1e-3)
        kw.setdefault("clip_norm", 0.02)
        return TrainConfig(epochs=epochs, seed=seed, **kw)

    @staticmethod
    def phase3(epochs: int = 4, seed: int = 0, **kw) -> "TrainConfig":
        kw.setdefault("lr", 1e-5)
        kw.setdefault("clip_norm", 0.05)
        return TrainConfig(epochs=epochs, seed=seed, **kw)

    @staticmethod
    def classifier(epochs: int = 60, seed: int = 0, **kw) -> "TrainConfig":
        kw.setdefault("lr", 0.1)
        kw.setdefault("clip_norm", 1.0)
        return TrainConfig(epochs=epochs, seed=seed, **kw)


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)
    best_epoch: int = -1

    def log(self, **row):
        self.rows.append(row)

    def write_csv(self, path) -> None:
        if not self.rows:
            return
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(self.rows[0].keys()))
            writer.writeheader()
            writer.writerows(self.rows)


def schedule_lr(config: TrainConfig, epoch: int, gamma_engaged_epoch: int | None = None) -> float:
    """Base rate with restart multipliers and post-switch halving applied.

    The halving clock starts when the focal exponent engages (phase 1) or at
    ``decay_from_epoch`` for phases without an exponent switch.
    """
    lr = config.lr
    for start, mult, duration in config.restarts:
        if start <= epoch < start + duration:
            lr *= mult
    decay_start = gamma_engaged_epoch
    if decay_start is None:
        decay_start = config.decay_from_epoch
    if decay_start is not None and epoch >= decay_start:
        lr *= config.decay_factor ** ((epoch - decay_start) // config.decay_every)
    return lr


def resample_by_class(dataset: list[Sample], seed: int) -> list[int]:
    """Epoch ordering with class frequencies balanced by inverse weighting.

    Single-class datasets get a plain shuffle; otherwise indices are drawn
    with replacement with probability inversely proportional to the sample's
    class frequency, so every class has equal expected share.
    """
    if not dataset:
        raise ValueError("cannot resample an empty dataset")
    rng = np.random.default_rng(seed)
    labels = np.array([s.class_index for s in dataset])
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) == 1:
        return list(rng.permutation(len(dataset)))
    freq = dict(zip(classes.tolist(), counts.tolist()))
    weights = np.array([1.0 / freq[int(l)] for l in labels])
    weights /= weights.sum()
    return list(rng.choice(len(dataset), size=len(dataset), replace=True, p=weights))


def sgd_step(
    weights: dict[str, Tensor],
    velocities: dict[str, np.ndarray],
    lr: float,
    momentum: float,
    clip_norm: float | None = None,
) -> None:
    """In-place momentum SGD on every weight with a populated gradient.

    ``clip_norm`` rescales the joint gradient so its global L2 norm never
    exceeds the limit; the sum-formulated contour loss needs this to keep
    the zero-initialized displacement head from overshooting.
    """
    active = [
        name for name in sorted(weights)
        if weights[name].requires_grad and weights[name].grad is not None
    ]
    scale = 1.0
    if clip_norm is not None and active:
        total = np.sqrt(sum(float(np.sum(weights[n].grad ** 2)) for n in active))
        if total > clip_norm:
            scale = clip_norm / total
    for name in active:
        t = weights[name]
        v = velocities.get(name)
        if v is None:
            v = np.zeros_like(t.data)
        v = momentum * v + scale * t.grad
        velocities[name] = v
        t.data -= lr * v


def zero_grads(weights: dict[str, Tensor]) -> None:
    for t in weights.values():
        t.zero_grad()


def _snapshot(weights: dict[str, Tensor]) -> dict[str, bytes]:
    return {k: v.data.tobytes() for k, v in weights.items()}


def _assert_unchanged(weights: dict[str, Tensor], before: dict[str, bytes], what: str) -> None:
    for k, v in weights.items():
        if v.data.tobytes() != before[k]:
            raise AssertionError(f"{what} weights changed during a frozen phase: {k}")


def _write_log(history: History, config: TrainConfig, name: str) -> None:
    if config.log_dir is not None:
        history.write_csv(Path(config.log_dir) / f"{name}.csv")


class _FmTargets:
    """Per-sample distance map and class weight, computed once."""

    def __init__(self, samples: list[Sample]):
        self.gt = [s.gt_mask.astype(np.float64) for s in samples]
        self.psi = [geo.fast_marching_map(s.gt_mask) for s in samples]
        self.alpha = [losses.alpha_c(s.gt_mask) for s in samples]


def _mask_loss(out_mask: Tensor, idx: int, targets: _FmTargets, gamma: float, weighted: bool):
    lmap = losses.focal_loss_map(out_mask, targets.gt[idx], targets.alpha[idx], gamma)
    psi = targets.psi[idx] if weighted else np.zeros_like(targets.psi[idx])
    return losses.fm_weighted_loss(lmap, psi)


def phase1_train_masknet(
    train: list[Sample],
    val: list[Sample],
    config: TrainConfig,
    mask_config: mn.MaskNetConfig | None = None,
    init_seed: int | None = None,
    use_focal: bool = True,
    use_fm_weights: bool = True,
) -> tuple[dict[str, Tensor], History]:
    """Fit the mask network under the weighted focal loss.

    The focal exponent starts at 0 and engages at ``gamma_final`` either at
    the configured epoch or when the train loss plateaus.  Validation loss
    is always computed at the final exponent so epochs stay comparable; the
    best-validation weights are returned.
    """
    if not train:
        raise ValueError("phase 1 needs a non-empty training set")
    mask_config = mask_config or mn.MaskNetConfig()
    weights = mn.init_weights(mask_config, config.seed if init_seed is None else init_seed)
    mn.set_requires_grad(weights, True)
    mn.set_requires_grad(weights, False, prefix="cls.")
    train_targets = _FmTargets(train)
    val_targets = _FmTargets(val) if val else None
    gamma_final = config.gamma_final if use_focal else 0.0

    velocities: dict[str, np.ndarray] = {}
    history = History()
    best = mn.clone_weights(weights)
    best_val = np.inf
    engaged_epoch: int | None = None
    plateau_run = 0
    prev_train = np.inf

    for epoch in range(config.epochs):
        if engaged_epoch is None and config.gamma_switch_epoch is not None and epoch >= config.gamma_switch_epoch:
            engaged_epoch = epoch
        gamma = gamma_final if engaged_epoch is not None else 0.0
        lr = schedule_lr(config, epoch, engaged_epoch)
        order = resample_by_class(train, config.seed * 100003 + epoch)
        epoch_loss = 0.0
        for idx in order:
            zero_grads(weights)
            out = mn.forward(Tensor(train[idx].image), weights, mask_config)
            loss = _mask_loss(out.mask_prob, idx, train_targets, gamma, use_fm_weights)
            loss.backward()
            sgd_step(weights, velocities, lr, config.momentum, config.clip_norm)
            epoch_loss += float(loss.data)
        epoch_loss /= len(order)

        val_loss = np.nan
        if val:
            val_loss = 0.0
            for i, sample in enumerate(val):
                out = mn.forward(Tensor(sample.image), weights, mask_config)
                val_loss += float(_mask_loss(out.mask_prob, i, val_targets, gamma_final, use_fm_weights).data)
            val_loss /= len(val)
            if val_loss < best_val:
                best_val = val_loss
                best = mn.clone_weights(weights)
                history.best_epoch = epoch
        history.log(epoch=epoch, train_loss=epoch_loss, val_loss=val_loss, lr=lr, gamma=gamma)

        if engaged_epoch is None and use_focal and config.gamma_switch_epoch is None:
            if prev_train - epoch_loss < config.plateau_rel_improvement * abs(prev_train):
                plateau_run += 1
            else:
                plateau_run = 0
            if plateau_run >= config.plateau_patience:
                engaged_epoch = epoch + 1
            prev_train = epoch_loss

    if not val:
        best = mn.clone_weights(weights)
        history.best_epoch = config.epochs - 1
    _write_log(history, config, "phase1")
    return best, history


class _RefinerSample:
    """Frozen-backbone cache: initial contour and constant feature map."""

    def __init__(self, sample: Sample, mask_weights, mask_config, contour_params):
        out = mn.forward(Tensor(sample.image), mask_weights, mask_config)
        self.points0 = geo.contourize(out.mask_prob.data, **contour_params)
        self.fmap = Tensor(out.skip_features.data)
        self.dims = (sample.height, sample.width)
        self.gt_unit = sample.gt_polygon / np.array([sample.width, sample.height])


def _contour_loss(points_px: Tensor, gt_unit: np.ndarray, dims, interp_factor: int) -> Tensor:
    h, w = dims
    refined = cg.interpolate_contour(points_px, interp_factor)
    pred_unit = ad.hadamard(refined, np.array([1.0 / w, 1.0 / h]))
    return losses.hausdorff_loss(Tensor(gt_unit), pred_unit)


def phase2_train_refiner(
    train: list[Sample],
    val: list[Sample],
    config: TrainConfig,
    mask_weights: dict[str, Tensor],
    mask_config: mn.MaskNetConfig | None = None,
    refiner_config: cg.RefinerConfig | None = None,
    contour_params: dict | None = None,
    init_seed: int | None = None,
) -> tuple[dict[str, Tensor], History]:
    """Fit the contour refiner against frozen mask-network outputs."""
    if not train:
        raise ValueError("phase 2 needs a non-empty training set")
    mask_config = mask_config or mn.MaskNetConfig()
    refiner_config = refiner_config or cg.RefinerConfig()
    contour_params = contour_params or {}
    mn.set_requires_grad(mask_weights, False)
    frozen = _snapshot(mask_weights)

    cache_train = [_RefinerSample(s, mask_weights, mask_config, contour_params) for s in train]
    cache_val = [_RefinerSample(s, mask_weights, mask_config, contour_params) for s in val]
    weights = cg.init_refiner_weights(refiner_config, config.seed if init_seed is None else init_seed)
    for t in weights.values():
        t.requires_grad = True

    velocities: dict[str, np.ndarray] = {}
    history = History()
    best = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in weights.items()}
    best_val = np.inf

    def run_val():
        total = 0.0
        for c in cache_val:
            pts = cg.refine_tensor(c.points0, c.fmap, weights, refiner_config, c.dims)
            total += float(_contour_loss(pts, c.gt_unit, c.dims, refiner_config.interp_factor).data)
        return total / max(len(cache_val), 1)

    for epoch in range(config.epochs):
        lr = schedule_lr(config, epoch)
        order = resample_by_class(train, config.seed * 100003 + epoch)
        epoch_loss = 0.0
        for idx in order:
            c = cache_train[idx]
            zero_grads(weights)
            pts = cg.refine_tensor(c.points0, c.fmap, weights, refiner_config, c.dims)
            loss = _contour_loss(pts, c.gt_unit, c.dims, refiner_config.interp_factor)
            loss.backward()
            sgd_step(weights, velocities, lr, config.momentum, config.clip_norm)
            epoch_loss += float(loss.data)
        epoch_loss /= len(order)

        val_loss = run_val() if cache_val else np.nan
        if cache_val and val_loss < best_val:
            best_val = val_loss
            best = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in weights.items()}
            history.best_epoch = epoch
        history.log(epoch=epoch, train_loss=epoch_loss, val_loss=val_loss, lr=lr)

    if not cache_val:
        best = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in weights.items()}
        history.best_epoch = config.epochs - 1
    _assert_unchanged(mask_weights, frozen, "mask network")
    _write_log(history, config, "phase2")
    return best, history


def phase3_finetune(
    train: list[Sample],
    val: list[Sample],
    config: TrainConfig,
    mask_weights: dict[str, Tensor],
    refiner_weights: dict[str, Tensor],
    mask_config: mn.MaskNetConfig | None = None,
    refiner_config: cg.RefinerConfig | None = None,
    contour_params: dict | None = None,
    use_fm_weights: bool = True,
) -> tuple[dict[str, Tensor], dict[str, Tensor], History]:
    """Joint fine-tuning under contour loss + lambda * mask loss.

    Contourization itself blocks gradients, so the mask network learns
    through the mask-loss term and through the sampled node features; the
    refiner learns through the contour term.  Validation selects on the
    contour loss; the incoming weights count as the epoch -1 candidate.
    """
    if not train:
        raise ValueError("phase 3 needs a non-empty training set")
    mask_config = mask_config or mn.MaskNetConfig()
    refiner_config = refiner_config or cg.RefinerConfig()
    contour_params = contour_params or {}
    mn.set_requires_grad(mask_weights, True)
    mn.set_requires_grad(mask_weights, False, prefix="cls.")
    for t in refiner_weights.values():
        t.requires_grad = True
    train_targets = _FmTargets(train)

    def joint_forward(sample: Sample, idx: int, targets: _FmTargets):
        out = mn.forward(Tensor(sample.image), mask_weights, mask_config)
        l_fm = _mask_loss(out.mask_prob, idx, targets, config.gamma_final, use_fm_weights)
        points0 = geo.contourize(out.mask_prob.data, **contour_params)
        pts = cg.refine_tensor(points0, out.skip_features, refiner_weights, refiner_config, (sample.height, sample.width))
        gt_unit = sample.gt_polygon / np.array([sample.width, sample.height])
        l_c = _contour_loss(pts, gt_unit, (sample.height, sample.width), refiner_config.interp_factor)
        return l_c, l_fm

    velocities: dict[str, np.ndarray] = {}
    combined = {f"mask.{k}": v for k, v in mask_weights.items()}
    combined.update({f"refiner.{k}": v for k, v in refiner_weights.items()})
    history = History()

    def run_val():
        total = 0.0
        for i, sample in enumerate(val):
            l_c, _ = joint_forward(sample, i, val_targets)
            total += float(l_c.data)
        return total / max(len(val), 1)

    val_targets = _FmTargets(val) if val else None
    best_val = run_val() if val else np.inf
    best_m = mn.clone_weights(mask_weights)
    best_r = mn.clone_weights(refiner_weights)
    history.best_epoch = -1

    for epoch in range(config.epochs):
        lr = schedule_lr(config, epoch)
        order = resample_by_class(train, config.seed * 100003 + epoch)
        epoch_loss = 0.0
        for idx in order:
            zero_grads(combined)
            l_c, l_fm = joint_forward(train[idx], idx, train_targets)
            # lambda = 0 degenerates to the pure contour objective
            loss = l_c if config.lambda_joint == 0 else losses.joint_loss(l_c, l_fm, config.lambda_joint)
            loss.backward()
            sgd_step(combined, velocities, lr, config.momentum, config.clip_norm)
            epoch_loss += float(loss.data)
        epoch_loss /= len(order)

        val_loss = run_val() if val else np.nan
        if val and val_loss < best_val:
            best_val = val_loss
            best_m = mn.clone_weights(mask_weights)
            best_r = mn.clone_weights(refiner_weights)
            history.best_epoch = epoch
        history.log(epoch=epoch, train_loss=epoch_loss, val_loss=val_loss, lr=lr)

    if not val:
        best_m = mn.clone_weights(mask_weights)
        best_r = mn.clone_weights(refiner_weights)
        history.best_epoch = config.epochs - 1
    _write_log(history, config, "phase3")
    return best_m, best_r, history


def train_classifier(
    train: list[Sample],
    val: list[Sample],
    config: TrainConfig,
    mask_weights: dict[str, Tensor],
    mask_config: mn.MaskNetConfig | None = None,
) -> tuple[dict[str, Tensor], History]:
    """Fit the classification head against the frozen backbone.

    Pooled backbone features are computed once per sample, so epochs only
    touch the head.  The head trains on standardized features (zero mean,
    unit variance over the train split) and the affine standardization is
    folded back into the stored weights, so the deployed head still maps the
    raw pooled vector through a single fully connected layer.  Returns the
    full weight map with the head replaced by its best-validation state; the
    backbone is asserted bit-identical.
    """
    if not train:
        raise ValueError("classifier phase needs a non-empty training set")
    mask_config = mask_config or mn.MaskNetConfig()
    mn.set_requires_grad(mask_weights, False)
    frozen = _snapshot(mask_weights)

    def pooled(sample: Sample) -> np.ndarray:
        return mn.forward(Tensor(sample.image), mask_weights, mask_config).pooled.data.copy()

    raw_train = [pooled(s) for s in train]
    mu = np.mean(np.vstack(raw_train), axis=0, keepdims=True)
    sigma = np.std(np.vstack(raw_train), axis=0, keepdims=True)
    sigma[sigma < 1e-8] = 1.0
    train_feats = [(f - mu) / sigma for f in raw_train]
    val_feats = [(pooled(s) - mu) / sigma for s in val]

    head = {
        "cls.w": Tensor(np.zeros_like(mask_weights["cls.w"].data), requires_grad=True),
        "cls.b": Tensor(np.zeros_like(mask_weights["cls.b"].data), requires_grad=True),
    }
    velocities: dict[str, np.ndarray] = {}
    history = History()
    best = {k: v.data.copy() for k, v in head.items()}
    best_val = np.inf

    def head_loss(feat, label):
        logits = ad.reshape(ad.add(ad.matmul(Tensor(feat), head["cls.w"]), head["cls.b"]), mask_config.num_classes)
        return losses.cross_entropy(logits, label)

    for epoch in range(config.epochs):
        lr = schedule_lr(config, epoch)
        order = resample_by_class(train, config.seed * 100003 + epoch)
        epoch_loss = 0.0
        for idx in order:
            zero_grads(head)
            loss = head_loss(train_feats[idx], train[idx].class_index)
            loss.backward()
            sgd_step(head, velocities, lr, config.momentum, config.clip_norm)
            epoch_loss += float(loss.data)
        epoch_loss /= len(order)

        val_loss = np.nan
        if val:
            val_loss = sum(
                float(head_loss(f, s.class_index).data) for f, s in zip(val_feats, val)
            ) / len(val)
            if val_loss < best_val:
                best_val = val_loss
                best = {k: v.data.copy() for k, v in head.items()}
                history.best_epoch = epoch
        history.log(epoch=epoch, train_loss=epoch_loss, val_loss=val_loss, lr=lr)

    if not val:
        best = {k: v.data.copy() for k, v in head.items()}
        history.best_epoch = config.epochs - 1
    _assert_unchanged(mask_weights, frozen, "backbone")
    out = mn.clone_weights(mask_weights)
    # fold standardization into the affine head: (f-mu)/sigma @ W + b
    folded_w = best["cls.w"] / sigma.T
    out["cls.w"] = Tensor(folded_w)
    out["cls.b"] = Tensor(best["cls.b"] - (mu @ folded_w).ravel())
    _write_log(history, config, "classifier")
    return out, history
