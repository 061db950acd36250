"""Pipeline facade with a scikit-learn-style estimator API.

``BoundaryAnnotator`` bundles the mask network, the contourization stage,
and the contour refiner behind ``fit`` / ``predict`` / ``get_params`` /
``set_params`` so the whole system composes with the wider ecosystem
(cloning, grid search over the exposed hyperparameters, pipelines).

``fit`` consumes a list of synthetic ``Sample`` objects and runs the full
training schedule; ``predict`` maps one image crop to the refined boundary
polygon, the pre-refinement polygon, and the region class.
"""

from __future__ import annotations

import inspect
import json
from pathlib import Path

import numpy as np

from . import contour_gcn as cg
from . import fileio
from . import masknet as mn
from . import training as tr
from .autodiff import Tensor
from .geometry import check_prob_map


def check_image(image) -> np.ndarray:
    """Validate a (3, H, W) float image in [0, 1]."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) image, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("image contains non-finite values")
    if arr.min() < -1e-9 or arr.max() > 1 + 1e-9:
        raise ValueError("image values must lie in [0, 1]")
    return arr


class NotFittedError(RuntimeError):
    pass


class BoundaryAnnotator:
    """Trainable semi-automatic boundary annotator.

    Parameters mirror the architecture and schedule knobs; every ablation
    toggle is an ordinary parameter so lesioned variants are plain
    ``set_params`` calls away.
    """

    def __init__(
        self,
        residual_channels=(32, 64, 128),
        fusion_channels=(64, 40, 16),
        decoder_channels=32,
        attention_gating=True,
        hop_k=10,
        num_res_blocks=6,
        hidden_dim=64,
        iterations=2,
        interp_factor=10,
        include_coords=True,
        num_points=200,
        mask_threshold=0.5,
        area_fraction=0.05,
        smoothing=1.0,
        use_refiner=True,
        use_focal=True,
        use_fm_weights=True,
        finetune=True,
        phase1_epochs=8,
        phase2_epochs=8,
        phase3_epochs=6,
        classifier_epochs=60,
        phase1_lr=3e-5,
        phase2_lr=1e-3,
        phase3_lr=1e-5,
        classifier_lr=0.1,
        gamma_switch_epoch=None,
        lambda_joint=200.0,
        seed=0,
        log_dir=None,
    ):
        args = locals()
        for name in self._param_names():
            setattr(self, name, args[name])
        self.mask_weights_ = None
        self.refiner_weights_ = None
        self.histories_ = {}
        self.stage_snapshots_ = {}

    # -- sklearn-style parameter plumbing ----------------------------------
    @classmethod
    def _param_names(cls) -> list[str]:
        sig = inspect.signature(cls.__init__)
        return [p for p in sig.parameters if p != "self"]

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params) -> "BoundaryAnnotator":
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ValueError(f"unknown parameter {key!r} for BoundaryAnnotator")
            setattr(self, key, value)
        return self

    # -- derived configs ----------------------------------------------------
    def mask_config(self) -> mn.MaskNetConfig:
        return mn.MaskNetConfig(
            residual_channels=tuple(self.residual_channels),
            fusion_channels=tuple(self.fusion_channels),
            decoder_channels=self.decoder_channels,
            attention_gating=self.attention_gating,
        )

    def refiner_config(self) -> cg.RefinerConfig:
        return cg.RefinerConfig(
            hop_k=self.hop_k,
            num_res_blocks=self.num_res_blocks,
            hidden_dim=self.hidden_dim,
            iterations=self.iterations,
            interp_factor=self.interp_factor,
            include_coords=self.include_coords,
        )

    def contour_params(self) -> dict:
        return {
            "num_points": self.num_points,
            "thresh": self.mask_threshold,
            "area_fraction": self.area_fraction,
            "smoothing": self.smoothing,
        }

    # -- training ------------------------------------------------------------
    def fit(self, train_samples, val_samples=None) -> "BoundaryAnnotator":
        """Run the full schedule: mask phase, refiner phase, joint
        fine-tuning (optional), then the classifier head.

        Post-phase-2 weights are kept in ``stage_snapshots_["phase2"]`` so
        the fine-tuning contribution stays inspectable.
        """
        val_samples = val_samples or []
        mcfg = self.mask_config()
        log_dir = Path(self.log_dir) if self.log_dir else None

        # short schedules put the two fresh restarts early enough to matter
        restarts = ((2, 5.0, 3),) if self.phase1_epochs <= 9 else ((10, 5.0, 3), (20, 5.0, 3))
        cfg1 = tr.TrainConfig.phase1(
            epochs=self.phase1_epochs, seed=self.seed, lr=self.phase1_lr,
            gamma_switch_epoch=self.gamma_switch_epoch, restarts=restarts, log_dir=log_dir,
        )
        self.mask_weights_, self.histories_["phase1"] = tr.phase1_train_masknet(
            train_samples, val_samples, cfg1, mcfg,
            use_focal=self.use_focal, use_fm_weights=self.use_fm_weights,
        )

        if self.use_refiner:
            rcfg = self.refiner_config()
            cfg2 = tr.TrainConfig.phase2(
                epochs=self.phase2_epochs, seed=self.seed, lr=self.phase2_lr,
                decay_from_epoch=(self.phase2_epochs * 3) // 5,
                decay_every=max(1, self.phase2_epochs // 5),
                log_dir=log_dir,
            )
            self.refiner_weights_, self.histories_["phase2"] = tr.phase2_train_refiner(
                train_samples, val_samples, cfg2, self.mask_weights_, mcfg, rcfg,
                contour_params=self.contour_params(),
            )
            self.stage_snapshots_["phase2"] = (
                mn.clone_weights(self.mask_weights_),
                mn.clone_weights(self.refiner_weights_),
            )
            if self.finetune:
                cfg3 = tr.TrainConfig.phase3(
                    epochs=self.phase3_epochs, seed=self.seed, lr=self.phase3_lr,
                    lambda_joint=self.lambda_joint, clip_norm=0.05,
                    decay_from_epoch=(self.phase3_epochs * 3) // 5,
                    decay_every=max(1, self.phase3_epochs // 3),
                    log_dir=log_dir,
                )
                self.mask_weights_, self.refiner_weights_, self.histories_["phase3"] = tr.phase3_finetune(
                    train_samples, val_samples, cfg3,
                    self.mask_weights_, self.refiner_weights_, mcfg, rcfg,
                    contour_params=self.contour_params(),
                    use_fm_weights=self.use_fm_weights,
                )

        cfgc = tr.TrainConfig.classifier(
            epochs=self.classifier_epochs, seed=self.seed, lr=self.classifier_lr, log_dir=log_dir
        )
        self.mask_weights_, self.histories_["classifier"] = tr.train_classifier(
            train_samples, val_samples, cfgc, self.mask_weights_, mcfg
        )
        return self

    def at_stage(self, stage: str) -> "BoundaryAnnotator":
        """A predictor view using the weights snapshotted after ``stage``."""
        if stage not in self.stage_snapshots_:
            raise KeyError(f"no snapshot for stage {stage!r}")
        view = BoundaryAnnotator(**self.get_params())
        mask_w, refiner = self.stage_snapshots_[stage]
        view.mask_weights_ = mask_w
        view.refiner_weights_ = refiner
        return view

    # -- inference -----------------------------------------------------------
    def _require_fitted(self):
        if self.mask_weights_ is None:
            raise NotFittedError("annotator has no weights; call fit() or load a model")

    def predict_mask(self, image) -> np.ndarray:
        """Region mask probability map for one (3, H, W) crop."""
        self._require_fitted()
        img = check_image(image)
        out = mn.forward(Tensor(img), self.mask_weights_, self.mask_config())
        return out.mask_prob.data

    def predict(self, image) -> dict:
        """Full pipeline on one crop.

        Returns the refined ``polygon``, the pre-refinement
        ``initial_polygon``, and the classifier outputs.
        """
        self._require_fitted()
        img = check_image(image)
        from . import geometry as geo

        mcfg = self.mask_config()
        out = mn.forward(Tensor(img), self.mask_weights_, mcfg)
        initial = geo.contourize(check_prob_map(out.mask_prob.data), **self.contour_params())
        if self.use_refiner and self.refiner_weights_ is not None:
            _, h, w = img.shape
            polygon = cg.refine(
                initial, Tensor(out.skip_features.data), self.refiner_weights_,
                self.refiner_config(), (h, w),
            )
        else:
            polygon = initial
        label, probs = mn.region_classify(out.class_logits)
        return {
            "polygon": polygon,
            "initial_polygon": initial,
            "region_class": label,
            "class_index": int(np.argmax(probs.data)),
            "class_probs": probs.data.copy(),
        }

    def refine_polygon(self, image, polygon, iterations: int = 1) -> np.ndarray:
        """One more refinement pass over a client-edited polygon."""
        self._require_fitted()
        if self.refiner_weights_ is None:
            raise NotFittedError("no refiner weights available")
        img = check_image(image)
        from . import geometry as geo

        pts = geo.resample_closed_polyline(np.asarray(polygon, dtype=np.float64), self.num_points)
        out = mn.forward(Tensor(img), self.mask_weights_, self.mask_config())
        rcfg = self.refiner_config()
        rcfg.iterations = iterations
        _, h, w = img.shape
        return cg.refine(pts, Tensor(out.skip_features.data), self.refiner_weights_, rcfg, (h, w))

    # -- persistence -----------------------------------------------------------
    def save(self, path) -> None:
        """Write weights to ``path`` and parameters to ``<path>.meta.json``."""
        self._require_fitted()
        combined = {f"mask.{k}": v for k, v in self.mask_weights_.items()}
        if self.refiner_weights_ is not None:
            combined.update({f"refiner.{k}": v for k, v in self.refiner_weights_.items()})
        fileio.save_weights(combined, path)
        params = self.get_params()
        params["log_dir"] = str(params["log_dir"]) if params["log_dir"] else None
        Path(f"{path}.meta.json").write_text(json.dumps(params, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "BoundaryAnnotator":
        combined = fileio.load_weights(path)
        meta_path = Path(f"{path}.meta.json")
        params = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        annotator = cls(**params)
        annotator.mask_weights_ = {
            k[len("mask."):]: v for k, v in combined.items() if k.startswith("mask.")
        }
        refiner = {k[len("refiner."):]: v for k, v in combined.items() if k.startswith("refiner.")}
        annotator.refiner_weights_ = refiner or None
        if not annotator.mask_weights_:
            raise fileio.WeightFormatError("weight file holds no mask-network tensors")
        return annotator

    def model_digest(self) -> str:
        self._require_fitted()
        combined = {f"mask.{k}": v for k, v in self.mask_weights_.items()}
        if self.refiner_weights_ is not None:
            combined.update({f"refiner.{k}": v for k, v in self.refiner_weights_.items()})
        return fileio.weights_digest(combined)
