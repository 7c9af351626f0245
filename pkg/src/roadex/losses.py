"""Loss terms and their weighted hybrid combination.

All losses reduce by per-pixel mean (the published weights must stay
crop-size-invariant).  Probabilities are clamped to [eps, 1-eps] before
logarithms.  The direction loss is softmax cross-entropy over road pixels
only (target class 4 = non-road is neglected); an empty valid set gives 0.
"""
import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import DataError, ParameterError, ShapeError

EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0    # segmentation
    beta: float = 0.5     # structure
    gamma: float = 0.2    # direction
    theta_w: float = 1.0  # refinement

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "theta_w"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ParameterError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class LossReport:
    """Scalar loss terms; tensors stay graph-attached so total can backprop."""
    l_seg: torch.Tensor
    l_struct: torch.Tensor
    l_direct: torch.Tensor
    l_ref: torch.Tensor
    total: torch.Tensor

    def detached(self):
        return {k: float(getattr(self, k).detach())
                for k in ("l_seg", "l_struct", "l_direct", "l_ref", "total")}


def _check_same_shape(a, b, what):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape {tuple(a.shape)} vs {tuple(b.shape)}")


def bce_loss(prob, target):
    """Mean binary cross-entropy of a probability map against a 0/1 target."""
    _check_same_shape(prob, target, "bce_loss")
    p = prob.clamp(EPS, 1.0 - EPS)
    t = target.to(p.dtype)
    return -(t * torch.log(p) + (1.0 - t) * torch.log1p(-p)).mean()


def structure_loss(pred, target):
    """Mean absolute difference between predicted and reference block means."""
    _check_same_shape(pred, target, "structure_loss")
    return (pred - target.to(pred.dtype)).abs().mean()


def direction_loss(dir_logits, target):
    """Softmax cross-entropy of 4-channel logits against classes {0..3};
    pixels labeled 4 (non-road) are skipped, and an all-non-road target
    yields exactly 0."""
    logits = dir_logits.unsqueeze(0) if dir_logits.dim() == 3 else dir_logits
    tgt = target.unsqueeze(0) if target.dim() == 2 else target
    if logits.shape[1] != 4:
        raise ShapeError(f"expected 4 direction channels, got {logits.shape[1]}")
    if logits.shape[0] != tgt.shape[0] or logits.shape[-2:] != tgt.shape[-2:]:
        raise ShapeError(f"direction_loss: logits {tuple(logits.shape)} vs "
                         f"target {tuple(tgt.shape)}")
    tgt = tgt.long()
    if tgt.numel() and (tgt.min() < 0 or tgt.max() > 4):
        raise DataError(f"direction classes must be in 0..4, got range "
                        f"[{int(tgt.min())}, {int(tgt.max())}]")
    valid = tgt < 4
    if not valid.any():
        return logits.sum() * 0.0
    logp = F.log_softmax(logits, dim=1)
    picked = logp.gather(1, tgt.clamp(max=3).unsqueeze(1)).squeeze(1)
    return -picked[valid].mean()


@dataclass
class LossTargets:
    mask: torch.Tensor         # (B,1,H,W) 0/1
    direction: torch.Tensor    # (B,H,W) classes 0..4
    structure: torch.Tensor    # (B,1,H/s,W/s) in [0,1]


def hybrid_loss(bundle, refined, targets, weights=LossWeights()):
    """Weighted sum over the available terms; heads that are disabled (None
    in the bundle) and an absent refiner contribute exactly 0."""
    zero = bundle.seg_logits.sum() * 0.0
    l_seg = bce_loss(torch.sigmoid(bundle.seg_logits), targets.mask)
    l_struct = (structure_loss(bundle.struct_pred, targets.structure)
                if bundle.struct_pred is not None else zero)
    l_direct = (direction_loss(bundle.dir_logits, targets.direction)
                if bundle.dir_logits is not None else zero)
    l_ref = (bce_loss(refined.refined_prob, targets.mask)
             if refined is not None else zero)
    total = (weights.alpha * l_seg + weights.beta * l_struct
             + weights.gamma * l_direct + weights.theta_w * l_ref)
    return LossReport(l_seg, l_struct, l_direct, l_ref, total)
