"""Supervision target generation: per-pixel road direction maps and
downscaled structure targets.

The direction of a road pixel is estimated with an angular operator: a
radial probe that counts in-mask pixels along each candidate angle theta in
[0, pi), out to a detection radius, in both +theta and -theta directions.
The winning angle is quantized to 4 classes (0: horizontal, 1: 45 deg,
2: vertical, 3: 135 deg); non-road pixels get class 4.

Two interchangeable realizations are provided:

* `direction_map_reference` - the direct per-pixel scan (compiled extension
  when available, pure-Python fallback otherwise);
* `direction_map_conv` - one fixed-weight correlation kernel per angle
  followed by an argmax, the form fast enough to run inside a training loop.

Both are deterministic pure functions and must agree bit-exactly.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ParameterError, ShapeError

try:
    from . import _dirscan

    HAVE_NATIVE_SCAN = True
except ImportError:  # extension not built; fall back to plain Python
    _dirscan = None
    HAVE_NATIVE_SCAN = False

from . import _dirscan_py

NON_ROAD_CLASS = 4
N_DIRECTION_CLASSES = 4


@dataclass(frozen=True)
class DirectionParams:
    """Angular-operator parameters.

    radius: probe length in pixels (>= 1).
    angle_step: probe spacing in radians; pi must be an integer multiple,
    so the probe angles are k*pi/n for k in 0..n-1.
    """

    radius: int = 9
    angle_step: float = math.pi / 16

    def __post_init__(self):
        if int(self.radius) != self.radius or self.radius < 1:
            raise ParameterError(f"radius must be an integer >= 1, got {self.radius}")
        if not 0 < self.angle_step <= math.pi:
            raise ParameterError(f"angle_step must be in (0, pi], got {self.angle_step}")
        n = round(math.pi / self.angle_step)
        if n < 1 or abs(n * self.angle_step - math.pi) > 1e-9:
            raise ParameterError(
                f"pi must be an integer multiple of angle_step (got pi/{math.pi / self.angle_step:.6g})"
            )

    @property
    def n_angles(self):
        return round(math.pi / self.angle_step)

    @classmethod
    def from_divisor(cls, radius, angle_step_div):
        """Build params from the integer n meaning angle_step = pi/n."""
        if int(angle_step_div) != angle_step_div or angle_step_div < 1:
            raise ParameterError(f"angle-step divisor must be an integer >= 1, got {angle_step_div}")
        return cls(radius=radius, angle_step=math.pi / int(angle_step_div))


def _round_half_away(x):
    if x >= 0:
        return int(math.floor(x + 0.5))
    return int(math.ceil(x - 0.5))


def probe_offsets(params):
    """(n_angles, radius, 2) int32 (dy, dx) steps for the +rho probe arm.

    dy grows downward (rows) so class 0 probes along image rows.  The -rho
    arm is the negation.  Rounding is half-away-from-zero on both axes.
    """
    n = params.n_angles
    out = np.empty((n, params.radius, 2), dtype=np.int32)
    for k in range(n):
        theta = k * (math.pi / n)
        s, c = math.sin(theta), math.cos(theta)
        for p in range(1, params.radius + 1):
            out[k, p - 1, 0] = _round_half_away(p * s)
            out[k, p - 1, 1] = _round_half_away(p * c)
    return out


def angle_classes(n_angles):
    """Quantized direction class for each probe angle index.

    Bins of width pi/4 centered on {0, pi/4, pi/2, 3pi/4}, wrapping at pi;
    angles >= 7pi/8 fold to class 0.  A probe angle exactly on a bin
    boundary goes to the lower class index.  Computed in exact integer
    arithmetic on the index (theta_k = k*pi/n <-> 8k vs odd multiples of n).
    """
    classes = np.empty(n_angles, dtype=np.int32)
    for k in range(n_angles):
        x = 8 * k
        if x >= 7 * n_angles:
            classes[k] = 0
        elif x > 5 * n_angles:
            classes[k] = 3
        elif x > 3 * n_angles:
            classes[k] = 2
        elif x > n_angles:
            classes[k] = 1
        else:
            classes[k] = 0
    return classes


def validate_mask(mask):
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.shape[0] < 1 or mask.shape[1] < 1:
        raise ShapeError(f"mask must be a 2-D array with positive dims, got shape {mask.shape}")
    if not np.isin(mask, (0, 1)).all():
        raise ParameterError("mask values must be exactly 0 or 1")
    return np.ascontiguousarray(mask.astype(np.uint8))


def direction_map_reference(mask, params=DirectionParams()):
    """Direction map by direct per-pixel angular scan.

    Ties in the angle argmax break toward the smallest theta.  Out-of-bounds
    probe samples count 0.  Returns a uint8 map with classes {0..4}.
    """
    mask = validate_mask(mask)
    offsets = probe_offsets(params)
    classes = angle_classes(params.n_angles)
    if HAVE_NATIVE_SCAN:
        return _dirscan.scan(mask, offsets, classes)
    return _dirscan_py.scan(mask, offsets, classes)


def direction_kernels(params):
    """Fixed correlation kernels, one (2r+1)^2 kernel per probe angle.

    Each kernel accumulates a count at every rounded probe offset (+rho and
    -rho arms).  Counts, not ones: distinct rho can round to the same cell
    and the scan sums that cell once per hit.
    """
    r = params.radius
    offsets = probe_offsets(params)
    kernels = np.zeros((params.n_angles, 2 * r + 1, 2 * r + 1), dtype=np.int32)
    for k in range(params.n_angles):
        for dy, dx in offsets[k]:
            kernels[k, r + dy, r + dx] += 1
            kernels[k, r - dy, r - dx] += 1
    return kernels


def direction_scores(mask, params=DirectionParams()):
    """(n_angles, H, W) int32 stack of angular-operator responses.

    score[k, i, j] = number of in-mask samples hit by the angle-k probe
    centered at (i, j), counting duplicate rounded cells once per hit.
    Vectorized shift-and-add; exact integer arithmetic.
    """
    mask = validate_mask(mask)
    h, w = mask.shape
    offsets = probe_offsets(params)
    r = params.radius
    padded = np.zeros((h + 2 * r, w + 2 * r), dtype=np.int32)
    padded[r:r + h, r:r + w] = mask
    scores = np.zeros((params.n_angles, h, w), dtype=np.int32)
    for k in range(params.n_angles):
        for dy, dx in offsets[k]:
            scores[k] += padded[r + dy:r + dy + h, r + dx:r + dx + w]
            scores[k] += padded[r - dy:r - dy + h, r - dx:r - dx + w]
    return scores


def direction_map_conv(mask, params=DirectionParams()):
    """Direction map via fixed-weight correlations + argmax.

    Bit-exact with `direction_map_reference`: same probe offsets, same
    first-maximum tie rule (np.argmax), same quantization, zero padding.
    """
    mask = validate_mask(mask)
    kernels = direction_kernels(params)
    m = mask.astype(np.int32)
    scores = np.stack(
        [ndimage.correlate(m, k, mode="constant", cval=0) for k in kernels]
    )
    best_k = np.argmax(scores, axis=0)
    out = angle_classes(params.n_angles).astype(np.uint8)[best_k]
    out[mask == 0] = NON_ROAD_CLASS
    return out


def structure_target(mask, scale):
    """Downscaled structure target: the mean of each scale x scale block.

    Masks whose dims are not divisible by scale are zero-padded at the
    bottom/right, so the output is always ceil(dim/scale) per axis.
    """
    if int(scale) != scale or scale <= 0:
        raise ParameterError(f"scale must be a positive integer, got {scale}")
    scale = int(scale)
    mask = validate_mask(mask)
    h, w = mask.shape
    ph = (-h) % scale
    pw = (-w) % scale
    if ph or pw:
        mask = np.pad(mask, ((0, ph), (0, pw)))
    hh, ww = mask.shape
    sums = mask.astype(np.int64).reshape(hh // scale, scale, ww // scale, scale).sum(axis=(1, 3))
    return sums.astype(np.float64) / (scale * scale)
