"""Command-line tool: corpus generation, training, evaluation, inference,
serving, and the ablation driver.

All randomness is controlled by ``--seed``; training commands regenerate
the synthetic corpus deterministically from the seed and split sizes, so
phases can run in separate invocations against identical data.  A JSON
config file can set any annotator parameter or corpus key; explicit flags
win over the file.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import metrics
from . import training as tr
from .estimator import BoundaryAnnotator
from .fileio import RegionAnnotation, load_image, save_annotations, save_image
from .synthetic import SyntheticSpec, Sample, gen_synthetic, split_dataset

CORPUS_KEYS = ("count", "train", "val", "test", "min_height", "max_height", "max_width", "noise", "blur")

ABLATION_FLAGS = {
    "baseline": {},
    "no-focal": {"use_focal": False},
    "no-fm-weights": {"use_fm_weights": False},
    "no-attention": {"attention_gating": False},
    "no-refiner": {"use_refiner": False},
    "hop-5": {"hop_k": 5},
    "hop-15": {"hop_k": 15},
    "interp-1x": {"interp_factor": 1},
    "iter-1": {"iterations": 1},
    "nodes-100": {"num_points": 100},
    "nodes-300": {"num_points": 300},
    "features-no-xy": {"include_coords": False},
    "no-finetune": {"finetune": False},
    "max-channels-64": {"residual_channels": (16, 32, 64)},
}


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise click.ClickException(f"cannot read config file {path}: {e}")
    if not isinstance(cfg, dict):
        raise click.ClickException("config file must hold a JSON object")
    known = set(BoundaryAnnotator._param_names()) | set(CORPUS_KEYS)
    unknown = set(cfg) - known
    if unknown:
        raise click.ClickException(f"unknown config key(s): {', '.join(sorted(unknown))}")
    return cfg


def _corpus(config: dict, seed: int) -> tuple[list[Sample], list[Sample], list[Sample]]:
    spec = SyntheticSpec(
        count=config.get("count", 400),
        min_height=config.get("min_height", 16),
        max_height=config.get("max_height", 48),
        max_width=config.get("max_width", 384),
        noise=config.get("noise", 0.05),
        blur=config.get("blur", 0.6),
    )
    samples = gen_synthetic(spec, seed)
    return split_dataset(
        samples,
        config.get("train", 300),
        config.get("val", 50),
        config.get("test", 50),
    )


def _annotator_from_config(config: dict, seed: int, log_dir=None) -> BoundaryAnnotator:
    params = {k: v for k, v in config.items() if k not in CORPUS_KEYS}
    params["seed"] = seed
    if log_dir is not None:
        params["log_dir"] = str(log_dir)
    return BoundaryAnnotator(**params)


@click.group()
def main():
    """Semi-automatic region boundary annotation engine."""


@main.command()
@click.option("--count", default=100, show_default=True, help="Number of samples.")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(), help="Output directory.")
@click.option("--min-height", default=16, show_default=True)
@click.option("--max-height", default=48, show_default=True)
@click.option("--max-width", default=384, show_default=True)
def synth(count, seed, out_dir, min_height, max_height, max_width):
    """Render a synthetic corpus: PNG crops plus ground-truth annotations."""
    spec = SyntheticSpec(count=count, min_height=min_height, max_height=max_height, max_width=max_width)
    samples = gen_synthetic(spec, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    annotations = []
    for s in samples:
        save_image(s.image, out / f"{s.image_id}.png")
        annotations.append(
            RegionAnnotation(
                image_id=s.image_id,
                bbox=(0.0, 0.0, float(s.width), float(s.height)),
                polygon=s.gt_polygon,
                region_class=s.class_name,
                source="ground_truth",
            )
        )
    save_annotations(annotations, out / "annotations.json")
    click.echo(f"wrote {len(samples)} samples to {out}")


@main.command()
@click.option("--phase", type=click.Choice(["1", "2", "3", "classifier", "all"]), default="all", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--weights", "weights_in", type=click.Path(exists=True), help="Input model for phases 2/3/classifier.")
@click.option("--out", "weights_out", required=True, type=click.Path(), help="Output model path.")
@click.option("--config", "config_path", type=click.Path(exists=True), help="JSON config file.")
@click.option("--epochs", type=int, help="Override the phase's epoch count.")
@click.option("--log-dir", type=click.Path(), help="Directory for per-phase CSV logs.")
def train(phase, seed, weights_in, weights_out, config_path, epochs, log_dir):
    """Train the annotator (one phase or the full schedule)."""
    config = _load_config(config_path)
    train_set, val_set, _ = _corpus(config, seed)
    if log_dir:
        Path(log_dir).mkdir(parents=True, exist_ok=True)

    if phase == "all":
        annotator = _annotator_from_config(config, seed, log_dir)
        if epochs is not None:
            annotator.set_params(phase1_epochs=epochs)
        annotator.fit(train_set, val_set)
        annotator.save(weights_out)
        click.echo(f"saved model to {weights_out}")
        return

    if phase == "1":
        annotator = _annotator_from_config(config, seed, log_dir)
        cfg = tr.TrainConfig.phase1(
            epochs=epochs or annotator.phase1_epochs, seed=seed, lr=annotator.phase1_lr,
            gamma_switch_epoch=annotator.gamma_switch_epoch,
            log_dir=Path(log_dir) if log_dir else None,
        )
        annotator.mask_weights_, _ = tr.phase1_train_masknet(
            train_set, val_set, cfg, annotator.mask_config(),
            use_focal=annotator.use_focal, use_fm_weights=annotator.use_fm_weights,
        )
        annotator.save(weights_out)
        click.echo(f"saved model to {weights_out}")
        return

    if not weights_in:
        raise click.ClickException(f"phase {phase} needs --weights from the previous phase")
    annotator = BoundaryAnnotator.load(weights_in)
    annotator.set_params(seed=seed)
    log = Path(log_dir) if log_dir else None

    if phase == "2":
        cfg = tr.TrainConfig.phase2(epochs=epochs or annotator.phase2_epochs, seed=seed,
                                    lr=annotator.phase2_lr, log_dir=log)
        annotator.refiner_weights_, _ = tr.phase2_train_refiner(
            train_set, val_set, cfg, annotator.mask_weights_,
            annotator.mask_config(), annotator.refiner_config(),
            contour_params=annotator.contour_params(),
        )
    elif phase == "3":
        if annotator.refiner_weights_ is None:
            raise click.ClickException("phase 3 needs a model that already has refiner weights")
        cfg = tr.TrainConfig.phase3(epochs=epochs or annotator.phase3_epochs, seed=seed,
                                    lr=annotator.phase3_lr, lambda_joint=annotator.lambda_joint, log_dir=log)
        annotator.mask_weights_, annotator.refiner_weights_, _ = tr.phase3_finetune(
            train_set, val_set, cfg, annotator.mask_weights_, annotator.refiner_weights_,
            annotator.mask_config(), annotator.refiner_config(),
            contour_params=annotator.contour_params(), use_fm_weights=annotator.use_fm_weights,
        )
    else:  # classifier
        cfg = tr.TrainConfig.classifier(epochs=epochs or annotator.classifier_epochs, seed=seed,
                                        lr=annotator.classifier_lr, log_dir=log)
        annotator.mask_weights_, _ = tr.train_classifier(
            train_set, val_set, cfg, annotator.mask_weights_, annotator.mask_config()
        )
    annotator.save(weights_out)
    click.echo(f"saved model to {weights_out}")


@main.command("eval")
@click.option("--weights", required=True, type=click.Path(exists=True), envvar="POLYREFINE_MODEL",
              help="Model path (or set POLYREFINE_MODEL).")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
def eval_cmd(weights, seed, out_dir, config_path):
    """Evaluate a model on the held-out synthetic test split."""
    config = _load_config(config_path)
    _, _, test_set = _corpus(config, seed)
    annotator = BoundaryAnnotator.load(weights)
    report = metrics.evaluate(annotator, test_set)
    json_path, csv_path = metrics.write_report(report, out_dir)
    metrics.write_confusion_csv(report["confusion"], Path(out_dir) / "confusion.csv")
    click.echo(f"overall HD {report['hd_overall']:.3f} px | IoU {report['iou_overall']:.3f} "
               f"| classifier accuracy {report['classifier_accuracy']:.3f}")
    click.echo(f"reports: {json_path}, {csv_path}")


@main.command()
@click.option("--in", "image_path", required=True, type=click.Path(exists=True))
@click.option("--bbox", required=True, help="x,y,w,h crop within the image.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--weights", required=True, type=click.Path(exists=True), envvar="POLYREFINE_MODEL",
              help="Model path (or set POLYREFINE_MODEL).")
def infer(image_path, bbox, out_path, weights):
    """Annotate one bounding box of an image; write annotation JSON."""
    try:
        x, y, w, h = (int(v) for v in bbox.split(","))
    except ValueError:
        raise click.ClickException("--bbox must be four comma-separated integers x,y,w,h")
    image = load_image(image_path)
    _, img_h, img_w = image.shape
    if not (0 <= x and 0 <= y and w >= 8 and h >= 8 and x + w <= img_w and y + h <= img_h):
        raise click.ClickException(
            f"bbox {bbox} is outside the {img_w}x{img_h} image or below the 8px minimum"
        )
    crop = image[:, y : y + h, x : x + w]
    annotator = BoundaryAnnotator.load(weights)
    result = annotator.predict(crop)
    polygon = result["polygon"] + np.array([x, y], dtype=np.float64)
    ann = RegionAnnotation(
        image_id=Path(image_path).name,
        bbox=(float(x), float(y), float(w), float(h)),
        polygon=polygon,
        region_class=result["region_class"],
        source="predicted",
    )
    save_annotations([ann], out_path)
    click.echo(f"wrote {out_path} ({result['region_class']})")


@main.command()
@click.option("--weights", required=True, type=click.Path(), envvar="POLYREFINE_MODEL",
              help="Model path (or set POLYREFINE_MODEL).")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8008, show_default=True)
def serve(weights, host, port):
    """Run the HTTP inference service."""
    from .service import serve as run_service

    if not Path(weights).exists():
        click.echo(f"model file not found: {weights}", err=True)
        sys.exit(1)
    try:
        run_service(weights, host=host, port=port)
    except Exception as e:  # startup failure must exit non-zero
        click.echo(f"service failed to start: {e}", err=True)
        sys.exit(1)


@main.command()
@click.option("--flag", required=True, type=click.Choice(sorted(ABLATION_FLAGS)))
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
def ablate(flag, seed, out_dir, config_path):
    """Train and evaluate one lesioned variant; emit its HD report."""
    config = _load_config(config_path)
    config.setdefault("count", 56)
    config.setdefault("train", 40)
    config.setdefault("val", 8)
    config.setdefault("test", 8)
    train_set, val_set, test_set = _corpus(config, seed)
    annotator = _annotator_from_config(config, seed)
    annotator.set_params(**ABLATION_FLAGS[flag])
    annotator.fit(train_set, val_set)
    report = metrics.evaluate(annotator, test_set)
    report["ablation"] = flag
    json_path, csv_path = metrics.write_report(report, out_dir, stem=f"ablation-{flag}")
    click.echo(f"[{flag}] overall HD {report['hd_overall']:.3f} px (initial {report['hd_initial_overall']:.3f})")
    click.echo(f"reports: {json_path}, {csv_path}")


if __name__ == "__main__":
    main()
