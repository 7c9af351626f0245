"""Training, evaluation, and inference orchestration.

Training minimizes the hybrid loss with Adam (lr 1e-3, cosine decay by
default), logs a LossReport per iteration to training_log.csv, keeps the
checkpoint with the best validation F1, and aborts on non-finite loss with
the last finite weights saved.  Evaluation runs on full-size images
(zero-padded to the divisibility constraint, predictions cropped back) and
writes metrics.csv / curve.csv.  Inference writes probability, refined, and
direction-salience maps, tiling very large inputs.
"""
import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import __version__
from .data import AugmentConfig, crop_rng, load_image, random_crop_flip
from .errors import DataError, ParameterError, TrainingDivergedError
from .labels import DirectionParams, direction_map_reference, structure_target
from .losses import LossTargets, LossWeights, hybrid_loss
from .metrics import (BreakEven, PRCurve, break_even_point, dataset_metrics,
                      default_thresholds)
from .network import (FCNBaseline, LogitsBundle, NetworkConfig, RoadSegNet,
                      SegRefiner)

CHECKPOINT_FORMAT = "roadex-ckpt-v1"
ABLATION_COMPONENTS = ("structure", "direction", "refiner")


def resolve_device():
    return torch.device(os.environ.get("ROADEX_DEVICE", "cpu"))


@dataclass(frozen=True)
class TrainConfig:
    network: NetworkConfig = NetworkConfig()
    weights: LossWeights = LossWeights()
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: str = "diresnet"            # diresnet | fcn
    epochs: int = 50
    batch_size: int = 16
    learning_rate: float = 1e-3
    lr_schedule: str = "cosine"        # cosine | constant
    seed: int = 0
    ablation: tuple = ABLATION_COMPONENTS
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.model not in ("diresnet", "fcn"):
            raise ParameterError(f"model must be diresnet or fcn, "
                                 f"got {self.model!r}")
        if self.epochs < 1:
            raise ParameterError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, "
                                 f"got {self.batch_size}")
        if not (math.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ParameterError(f"bad learning_rate {self.learning_rate}")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ParameterError(f"lr_schedule must be cosine or constant, "
                                 f"got {self.lr_schedule!r}")
        unknown = set(self.ablation) - set(ABLATION_COMPONENTS)
        if unknown:
            raise ParameterError(f"unknown ablation components: "
                                 f"{sorted(unknown)}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ParameterError(f"val_fraction must be in [0,1), "
                                 f"got {self.val_fraction}")
        if self.augment.crop_size % self.network.downsample:
            raise ParameterError(
                f"crop_size {self.augment.crop_size} must be a multiple of "
                f"downsample {self.network.downsample}")


@dataclass
class TrainResult:
    checkpoint: Path
    log: Path
    manifest: Path
    best_val_f1: float
    loss_rows: list = field(default_factory=list)


def effective_network_config(config):
    """Ablation drives the head flags: listed components are enabled."""
    return replace(config.network,
                   enable_structure_head="structure" in config.ablation,
                   enable_direction_head="direction" in config.ablation,
                   enable_refiner="refiner" in config.ablation)


def build_models(config, device):
    net_cfg = effective_network_config(config)
    if config.model == "fcn":
        net_cfg = replace(net_cfg, enable_structure_head=False,
                          enable_direction_head=False, enable_refiner=False)
        model = FCNBaseline(net_cfg)
    else:
        model = RoadSegNet(net_cfg)
    refiner = SegRefiner() if net_cfg.enable_refiner else None
    model.to(device)
    if refiner is not None:
        refiner.to(device)
    return model, refiner, net_cfg


def save_checkpoint(path, model, refiner, net_cfg, kind, extra=None):
    payload = {"format": CHECKPOINT_FORMAT,
               "kind": kind,
               "network_config": asdict(net_cfg),
               "seg_state": model.state_dict(),
               "refiner_state": None if refiner is None
               else refiner.state_dict(),
               "extra": extra or {}}
    torch.save(payload, path)
    return Path(path)


def load_checkpoint(path, device=None):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    device = device or resolve_device()
    payload = torch.load(path, map_location=device, weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"unrecognized checkpoint format tag: "
                        f"{payload.get('format')!r}")
    net_cfg = NetworkConfig(**payload["network_config"])
    model = (FCNBaseline(net_cfg) if payload["kind"] == "fcn"
             else RoadSegNet(net_cfg))
    model.load_state_dict(payload["seg_state"])
    model.to(device).eval()
    refiner = None
    if payload["refiner_state"] is not None:
        refiner = SegRefiner()
        refiner.load_state_dict(payload["refiner_state"])
        refiner.to(device).eval()
    return {"model": model, "refiner": refiner, "config": net_cfg,
            "kind": payload["kind"], "extra": payload["extra"]}


def pad_to_multiple(image, multiple):
    """Zero-pad (C,H,W) on bottom/right to the divisibility constraint."""
    _, h, w = image.shape
    ph = (multiple - h % multiple) % multiple
    pw = (multiple - w % multiple) % multiple
    if ph or pw:
        image = np.pad(image, ((0, 0), (0, ph), (0, pw)))
    return image, (h, w)


def batch_targets(masks, downsample, device, dtype=torch.float32):
    """Stack cropped masks into hybrid-loss targets (labels derived from the
    transformed masks, so flips relabel directions correctly)."""
    mask = torch.stack([torch.from_numpy(m.astype(np.float32)) for m in masks])
    direction = torch.stack(
        [torch.from_numpy(direction_map_reference(m).astype(np.int64))
         for m in masks])
    structure = torch.stack(
        [torch.from_numpy(structure_target(m, downsample).astype(np.float32))
         for m in masks])
    return LossTargets(mask.unsqueeze(1).to(device, dtype),
                       direction.to(device),
                       structure.unsqueeze(1).to(device, dtype))


def forward_pass(model, refiner, images):
    if isinstance(model, FCNBaseline):
        bundle = LogitsBundle(model(images), None, None)
    else:
        bundle = model(images)
    refined = refiner(bundle.seg_logits) if refiner is not None else None
    return bundle, refined


def predict_sample(model, refiner, image, device):
    """Full-size prediction: zero-pad, forward, crop back.  Returns prob,
    refined prob (= prob without a refiner), and raw direction logits."""
    multiple = max(model.config.downsample, 16)
    padded, (h, w) = pad_to_multiple(image, multiple)
    x = torch.from_numpy(padded).unsqueeze(0).to(device)
    with torch.no_grad():
        bundle, refined = forward_pass(model, refiner, x)
    prob = torch.sigmoid(bundle.seg_logits)[0, 0, :h, :w].cpu().numpy()
    if refined is not None:
        refined_prob = refined.refined_prob[0, 0, :h, :w].cpu().numpy()
    else:
        refined_prob = prob
    dir_logits = None
    if bundle.dir_logits is not None:
        dir_logits = bundle.dir_logits[0, :, :h, :w].cpu().numpy()
    return prob, refined_prob, dir_logits


def network_predictor(ckpt, device=None):
    device = device or resolve_device()
    model, refiner = ckpt["model"], ckpt["refiner"]

    def predictor(sample):
        prob, refined, _ = predict_sample(model, refiner, sample.image, device)
        return {"prob": prob, "refined": refined}

    return predictor


def _split_indices(n, val_fraction, seed):
    if n < 2 or val_fraction == 0.0:
        return list(range(n)), []
    order = np.random.default_rng([seed, 2161]).permutation(n)
    n_val = min(max(int(round(n * val_fraction)), 1), n - 1)
    return sorted(order[n_val:].tolist()), sorted(order[:n_val].tolist())


def _dataset_f1(model, refiner, dataset, device, use_refined):
    probs, masks = [], []
    for sample in dataset:
        prob, refined, _ = predict_sample(model, refiner, sample.image, device)
        probs.append(refined if use_refined else prob)
        masks.append(sample.mask)
    return dataset_metrics(probs, masks, 0.5, mode="micro")["f1"]


def train(config, dataset, out_dir, val_dataset=None):
    """Optimize on dataset, validate every epoch, keep the best-F1 weights.

    Returns a TrainResult whose checkpoint points at the best validation F1
    weights; raises TrainingDivergedError (after saving the last finite
    state) if the loss leaves the finite range.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    device = resolve_device()
    torch.use_deterministic_algorithms(True)
    torch.manual_seed(config.seed)

    samples = list(dataset)
    if not samples:
        raise DataError("training dataset is empty")
    if val_dataset is None:
        train_idx, val_idx = _split_indices(len(samples), config.val_fraction,
                                            config.seed)
        val_samples = [samples[i] for i in val_idx]
        samples = [samples[i] for i in train_idx]
    else:
        val_samples = list(val_dataset)

    model, refiner, net_cfg = build_models(config, device)
    params = list(model.parameters())
    if refiner is not None:
        params += list(refiner.parameters())
    optimizer = torch.optim.Adam(params, lr=config.learning_rate)
    iters_per_epoch = math.ceil(
        len(samples) * config.augment.crops_per_image / config.batch_size)
    scheduler = None
    if config.lr_schedule == "cosine":
        scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
            optimizer, T_max=max(iters_per_epoch * config.epochs, 1))

    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(
        {"config": asdict(config), "optimizer": "adam",
         "version": __version__, "device": str(device),
         "n_train": len(samples), "n_val": len(val_samples)},
        indent=2, default=str) + "\n")
    log_path = out / "training_log.csv"
    best_path = out / "checkpoint_best.pt"
    best_f1 = -1.0
    loss_rows = []
    iteration = 0

    with open(log_path, "w", newline="") as log_file:
        writer = csv.writer(log_file)
        writer.writerow(["iter", "l_seg", "l_struct", "l_direct", "l_ref",
                         "total"])
        for epoch in range(config.epochs):
            order = [(i, c) for i in range(len(samples))
                     for c in range(config.augment.crops_per_image)]
            perm = np.random.default_rng(
                [config.seed, 1000 + epoch]).permutation(len(order))
            order = [order[i] for i in perm]
            model.train()
            if refiner is not None:
                refiner.train()
            for start in range(0, len(order), config.batch_size):
                chunk = order[start:start + config.batch_size]
                crops = [random_crop_flip(
                    samples[i], config.augment,
                    crop_rng(config.seed, f"{samples[i].id}#{c}", epoch))
                    for i, c in chunk]
                images = torch.stack(
                    [torch.from_numpy(s.image) for s in crops]).to(device)
                targets = batch_targets([s.mask for s in crops],
                                        net_cfg.downsample, device)
                optimizer.zero_grad()
                bundle, refined = forward_pass(model, refiner, images)
                report = hybrid_loss(bundle, refined, targets, config.weights)
                values = report.detached()
                if not all(math.isfinite(v) for v in values.values()):
                    save_checkpoint(out / "checkpoint_diverged.pt", model,
                                    refiner, net_cfg, config.model,
                                    {"iteration": iteration})
                    raise TrainingDivergedError(
                        f"non-finite loss at iteration {iteration + 1}; "
                        f"last finite state saved")
                report.total.backward()
                optimizer.step()
                if scheduler is not None:
                    scheduler.step()
                iteration += 1
                row = [iteration] + [values[k] for k in
                                     ("l_seg", "l_struct", "l_direct",
                                      "l_ref", "total")]
                writer.writerow(row)
                loss_rows.append(values)
            model.eval()
            if refiner is not None:
                refiner.eval()
            if val_samples:
                f1 = _dataset_f1(model, refiner, val_samples, device,
                                 use_refined=refiner is not None)
            else:
                f1 = 0.0
            if f1 > best_f1:
                best_f1 = f1
                save_checkpoint(best_path, model, refiner, net_cfg,
                                config.model,
                                {"epoch": epoch, "val_f1": f1})
    save_checkpoint(out / "checkpoint_final.pt", model, refiner, net_cfg,
                    config.model, {"epoch": config.epochs - 1})
    return TrainResult(best_path, log_path, manifest_path, best_f1, loss_rows)


def aggregate_curve(probs, targets, thresholds, mode):
    rows = [dataset_metrics(probs, targets, t, mode=mode) for t in thresholds]
    return PRCurve(np.asarray(thresholds, dtype=float),
                   np.array([r["precision"] for r in rows]),
                   np.array([r["recall"] for r in rows]),
                   np.array([r["oa"] for r in rows]))


def evaluate(checkpoint, dataset, out_dir, thresholds=None, predictor=None):
    """Write metrics.csv (seg/refined x micro/per-image at threshold 0.5,
    with each row's BEP from the matching curve) and curve.csv (final
    probability, micro).  Returns the rows plus curves."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if thresholds is None:
        thresholds = default_thresholds()
    has_refiner = True
    if predictor is None:
        ckpt = load_checkpoint(checkpoint)
        has_refiner = ckpt["refiner"] is not None
        predictor = network_predictor(ckpt)
    streams = {"seg": [], "refined": []}
    masks = []
    for sample in dataset:
        pred = predictor(sample)
        streams["seg"].append(pred["prob"])
        streams["refined"].append(pred["refined"])
        masks.append(sample.mask)
    if not masks:
        raise DataError("evaluation dataset is empty")

    results, curves = {}, {}
    rows = []
    for method, probs in streams.items():
        for mode in ("micro", "per-image"):
            m = dataset_metrics(probs, masks, 0.5, mode=mode)
            curve = aggregate_curve(probs, masks, thresholds, mode)
            try:
                bep = break_even_point(curve)
            except DataError:
                bep = BreakEven(float("nan"), False)
            key = f"{method}-{mode}"
            results[key] = {**m, "bep": bep.value}
            curves[key] = curve
            rows.append([key, 0.5, m["precision"], m["recall"], m["f1"],
                         m["oa"], bep.value])

    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "threshold", "precision", "recall", "f1",
                         "oa", "bep"])
        writer.writerows(rows)
    final = curves["refined-micro" if has_refiner else "seg-micro"]
    with open(out / "curve.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "precision", "recall", "oa"])
        for t, p, r, oa in final.points():
            writer.writerow([t, p, r, oa])
    return {"metrics": results, "curves": curves,
            "metrics_csv": out / "metrics.csv", "curve_csv": out / "curve.csv"}


def _minmax(arr):
    lo, hi = float(arr.min()), float(arr.max())
    if hi - lo < 1e-12:
        return np.zeros_like(arr)
    return (arr - lo) / (hi - lo)


def _write_gray(path, values):
    Image.fromarray(np.round(values * 255).astype(np.uint8)).save(path)


def _tiled_predict(model, refiner, image, device, tile, overlap):
    _, h, w = image.shape
    acc = {k: np.zeros((h, w), dtype=np.float64)
           for k in ("prob", "refined", "salience")}
    weight = np.zeros((h, w), dtype=np.float64)
    has_dir = False
    stride = tile - overlap
    for top in range(0, h, stride):
        for left in range(0, w, stride):
            y0, x0 = min(top, max(h - tile, 0)), min(left, max(w - tile, 0))
            y1, x1 = min(y0 + tile, h), min(x0 + tile, w)
            prob, refined, dir_logits = predict_sample(
                model, refiner, image[:, y0:y1, x0:x1], device)
            acc["prob"][y0:y1, x0:x1] += prob
            acc["refined"][y0:y1, x0:x1] += refined
            if dir_logits is not None:
                has_dir = True
                acc["salience"][y0:y1, x0:x1] += dir_logits.sum(axis=0)
            weight[y0:y1, x0:x1] += 1.0
            if x1 >= w:
                break
        if y1 >= h:
            break
    prob = acc["prob"] / weight
    refined = acc["refined"] / weight
    salience = acc["salience"] / weight if has_dir else None
    return prob, refined, salience


def infer(checkpoint, image, out_dir, max_size=2048, tile=512, overlap=64):
    """Write prob.png, refined.png, and salience.png (direction salience =
    channel sum of raw direction logits, min-max normalized; omitted when
    the direction head is absent).  Inputs larger than max_size on a side
    are processed as overlapping tiles with overlap-average stitching."""
    ckpt = load_checkpoint(checkpoint)
    device = resolve_device()
    if isinstance(image, (str, Path)):
        image = load_image(image)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _, h, w = image.shape
    if max(h, w) > max_size:
        prob, refined, salience_raw = _tiled_predict(
            ckpt["model"], ckpt["refiner"], image, device, tile, overlap)
    else:
        prob, refined, dir_logits = predict_sample(
            ckpt["model"], ckpt["refiner"], image, device)
        salience_raw = None if dir_logits is None else dir_logits.sum(axis=0)
    paths = {"prob": out / "prob.png", "refined": out / "refined.png"}
    _write_gray(paths["prob"], prob)
    _write_gray(paths["refined"], refined)
    arrays = {"prob": prob, "refined": refined}
    if salience_raw is not None:
        salience = _minmax(salience_raw)
        paths["salience"] = out / "salience.png"
        _write_gray(paths["salience"], salience)
        arrays["salience"] = salience
    return {"paths": paths, "arrays": arrays}
