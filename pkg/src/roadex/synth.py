"""Procedural road scenes: textured background, fixed-width curved roads,
occluder blobs painted over the image (not the mask), additive noise."""
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .data import Sample
from .errors import ParameterError


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 128
    n_images: int = 16
    road_width_range: tuple = (3, 15)
    roads_per_image: tuple = (1, 3)
    occlusion_density: float = 0.10
    noise_level: float = 0.03
    seed: int = 0

    def __post_init__(self):
        if self.image_size < 64:
            raise ParameterError(f"image_size must be >= 64, got {self.image_size}")
        if self.n_images < 1:
            raise ParameterError(f"n_images must be >= 1, got {self.n_images}")
        lo, hi = self.road_width_range
        if lo < 1 or hi < lo:
            raise ParameterError(f"bad road_width_range {self.road_width_range}")
        if hi > self.image_size:
            raise ParameterError(
                f"road width {hi} exceeds image size {self.image_size}")
        rlo, rhi = self.roads_per_image
        if rlo < 1 or rhi < rlo:
            raise ParameterError(f"bad roads_per_image {self.roads_per_image}")
        if not 0.0 <= self.occlusion_density <= 1.0:
            raise ParameterError(
                f"occlusion_density must be in [0,1], got {self.occlusion_density}")
        if self.noise_level < 0:
            raise ParameterError(f"noise_level must be >= 0, got {self.noise_level}")


def rasterize_road(points, width, size):
    """Rasterize a polyline of (y, x) vertices as a fixed-width stroke:
    pixels within width/2 of any segment. Returns a uint8 (size, size) mask."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dist = np.full((size, size), np.inf)
    pts = [np.asarray(p, dtype=np.float64) for p in points]
    for p0, p1 in zip(pts[:-1], pts[1:]):
        d = p1 - p0
        seg_len2 = float(d @ d)
        if seg_len2 == 0.0:
            py, px = p0
        else:
            t = ((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / seg_len2
            t = np.clip(t, 0.0, 1.0)
            py, px = p0[0] + t * d[0], p0[1] + t * d[1]
        np.minimum(dist, np.hypot(yy - py, xx - px), out=dist)
    return (dist <= width / 2).astype(np.uint8)


def _border_point(rng, side, size):
    u = rng.uniform(0, size - 1)
    return {0: (0.0, u), 1: (size - 1.0, u),
            2: (u, 0.0), 3: (u, size - 1.0)}[side]


def _road_polyline(rng, size):
    """Quadratic curve between two distinct image borders; the control-point
    offset is capped at 0.2 of the chord so curvature stays limited."""
    a, b = rng.choice(4, size=2, replace=False)
    p0 = np.array(_border_point(rng, int(a), size))
    p1 = np.array(_border_point(rng, int(b), size))
    chord = p1 - p0
    length = float(np.hypot(*chord))
    perp = np.array([-chord[1], chord[0]]) / max(length, 1e-9)
    ctrl = (p0 + p1) / 2 + perp * rng.uniform(-0.2, 0.2) * length
    t = np.linspace(0.0, 1.0, max(8, int(length / 4)))[:, None]
    pts = (1 - t) ** 2 * p0 + 2 * t * (1 - t) * ctrl + t ** 2 * p1
    return [tuple(p) for p in pts]


def _background(rng, size):
    base = np.array([0.30, 0.36, 0.26]) + rng.uniform(-0.04, 0.04, size=3)
    lowfreq = gaussian_filter(rng.standard_normal((3, size, size)),
                              sigma=(0, 8, 8)) * 2.0
    grain = 0.02 * rng.standard_normal((3, size, size))
    return np.clip(base[:, None, None] + lowfreq + grain, 0.0, 1.0)


def _occlude(rng, img, density, size):
    yy, xx = np.mgrid[0:size, 0:size]
    target = density * size * size
    covered = 0.0
    while covered < target:
        cy, cx = rng.uniform(0, size, size=2)
        r = rng.uniform(3.0, 3.0 + 0.05 * size)
        blob = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        color = np.array([0.08, 0.16, 0.07]) + rng.uniform(0.0, 0.08, size=3)
        img[:, blob] = color[:, None]
        covered += np.pi * r * r


def _render_scene(rng, cfg):
    s = cfg.image_size
    img = _background(rng, s)
    mask = np.zeros((s, s), dtype=np.uint8)
    n_roads = int(rng.integers(cfg.roads_per_image[0], cfg.roads_per_image[1] + 1))
    for _ in range(n_roads):
        width = rng.uniform(*cfg.road_width_range)
        mask |= rasterize_road(_road_polyline(rng, s), width, s)
    road = mask == 1
    tex = rng.uniform(0.58, 0.75) + 0.03 * rng.standard_normal((s, s))
    img[:, road] = np.clip(tex, 0.0, 1.0)[road]  # gray pavement, all channels
    if cfg.occlusion_density > 0:
        _occlude(rng, img, cfg.occlusion_density, s)
    if cfg.noise_level > 0:
        img = img + cfg.noise_level * rng.standard_normal((3, s, s))
    return np.clip(img, 0.0, 1.0).astype(np.float32), mask


def synth_generate(config):
    """Render config.n_images samples; each image draws from its own
    rng stream [seed, index], so the dataset is a pure function of config."""
    samples = []
    for i in range(config.n_images):
        rng = np.random.default_rng([config.seed, i])
        image, mask = _render_scene(rng, config)
        samples.append(Sample(image, mask, f"synth_{i:05d}"))
    return samples


def write_dataset(samples, out_dir, config=None):
    """Write paired image_%05d.png / mask_%05d.png plus manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(samples):
        arr = np.round(s.image.transpose(1, 2, 0) * 255).astype(np.uint8)
        Image.fromarray(arr).save(out / f"image_{i:05d}.png")
        Image.fromarray(s.mask * 255).save(out / f"mask_{i:05d}.png")
    manifest = {"format": "roadex-synth-v1", "n_images": len(samples)}
    if config is not None:
        manifest["synth_config"] = asdict(config)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return out / "manifest.json"
