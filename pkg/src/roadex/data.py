"""Samples, dynamic crop/flip augmentation, and folder-layout loaders."""
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError, ParameterError, ShapeError

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp")


@dataclass
class Sample:
    """One image/mask pair. image: float32 (3,H,W) in [0,1]; mask: uint8 (H,W) of {0,1}."""
    image: np.ndarray
    mask: np.ndarray
    id: str

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ShapeError(f"image must be (3,H,W), got {self.image.shape}")
        if self.mask.shape != self.image.shape[1:]:
            raise ShapeError(
                f"mask {self.mask.shape} does not match image {self.image.shape[1:]}")


@dataclass(frozen=True)
class AugmentConfig:
    crop_size: int = 320
    crops_per_image: int = 10
    hflip_prob: float = 0.5
    vflip_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.crop_size < 1:
            raise ParameterError(f"crop_size must be >= 1, got {self.crop_size}")
        if self.crops_per_image < 1:
            raise ParameterError(
                f"crops_per_image must be >= 1, got {self.crops_per_image}")
        for name in ("hflip_prob", "vflip_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ParameterError(f"{name} must be in [0,1], got {p}")


def random_crop_flip(sample, config, rng):
    """Crop a crop_size square at a uniform offset, then flip; the identical
    spatial transform is applied to image and mask."""
    c = config.crop_size
    h, w = sample.mask.shape
    if c > h or c > w:
        raise ShapeError(f"crop {c} larger than source {h}x{w}")
    top = int(rng.integers(0, h - c + 1))
    left = int(rng.integers(0, w - c + 1))
    image = sample.image[:, top:top + c, left:left + c]
    mask = sample.mask[top:top + c, left:left + c]
    if rng.random() < config.hflip_prob:
        image, mask = image[:, :, ::-1], mask[:, ::-1]
    if rng.random() < config.vflip_prob:
        image, mask = image[:, ::-1, :], mask[::-1, :]
    return Sample(np.ascontiguousarray(image), np.ascontiguousarray(mask), sample.id)


def crop_rng(seed, sample_id, epoch):
    """Independent stream per (seed, sample, epoch) so prefetch order is irrelevant."""
    digest = np.frombuffer(sample_id.encode(), dtype=np.uint8)
    return np.random.default_rng([seed, epoch, *digest.tolist()])


def load_image(path):
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def load_mask(path):
    arr = np.asarray(Image.open(path).convert("L"))
    return (arr > 127).astype(np.uint8)


@dataclass
class LoadReport:
    skipped: list = field(default_factory=list)
    warnings: list = field(default_factory=list)


class FolderDataset:
    """Lazily loaded image/mask pairs discovered from a directory layout.

    Layouts (masks binarized at >127):
      massachusetts   <root>/sat/<stem>.<ext> + <root>/map/<stem>.<ext>
      deepglobe       <root>/<id>_sat.jpg + <root>/<id>_mask.png
      paired-generic  <root>/images/<stem>.<ext> + <root>/masks/<stem>.<ext>,
                      or flat <root>/image_<id>.<ext> + <root>/mask_<id>.<ext>
    """

    def __init__(self, pairs, report):
        self.pairs = pairs  # list of (image_path, mask_path, id)
        self.report = report

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i):
        img_path, mask_path, sid = self.pairs[i]
        return Sample(load_image(img_path), load_mask(mask_path), sid)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]


def _list_images(directory):
    if not directory.is_dir():
        return []
    return sorted(p for p in directory.iterdir()
                  if p.suffix.lower() in IMAGE_EXTENSIONS)


def _pair_by_stem(image_dir, mask_dir, report):
    masks = {p.stem: p for p in _list_images(mask_dir)}
    pairs = []
    for img in _list_images(image_dir):
        if img.stem in masks:
            pairs.append((img, masks[img.stem], img.stem))
        else:
            report.skipped.append(f"{img.name}: no mask in {mask_dir.name}/")
    return pairs


def _pair_flat_prefixed(root, image_prefix, image_suffix, mask_prefix, mask_suffix,
                        report):
    masks = {}
    for p in _list_images(root):
        stem = p.stem
        if stem.startswith(mask_prefix) and stem.endswith(mask_suffix):
            masks[stem[len(mask_prefix):len(stem) - len(mask_suffix)]] = p
    pairs = []
    for p in _list_images(root):
        stem = p.stem
        if not (stem.startswith(image_prefix) and stem.endswith(image_suffix)):
            continue
        sid = stem[len(image_prefix):len(stem) - len(image_suffix)]
        if sid in masks:
            pairs.append((p, masks[sid], sid))
        else:
            report.skipped.append(f"{p.name}: no mask counterpart")
    return pairs


def load_folder_dataset(root, layout="paired-generic"):
    """Scan root per the layout and return (FolderDataset, LoadReport).

    Images with a missing mask are skipped and listed in the report; an empty
    result triggers a warning.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root does not exist: {root}")
    report = LoadReport()
    if layout == "massachusetts":
        pairs = _pair_by_stem(root / "sat", root / "map", report)
    elif layout == "deepglobe":
        pairs = _pair_flat_prefixed(root, "", "_sat", "", "_mask", report)
    elif layout == "paired-generic":
        if (root / "images").is_dir():
            pairs = _pair_by_stem(root / "images", root / "masks", report)
        else:
            pairs = _pair_flat_prefixed(root, "image_", "", "mask_", "", report)
    else:
        raise ParameterError(f"unknown layout: {layout!r}")
    if not pairs:
        msg = f"no image/mask pairs found under {root} (layout={layout})"
        report.warnings.append(msg)
        warnings.warn(msg)
    return FolderDataset(pairs, report), report
