"""Segmentation network with auxiliary heads, refinement subnet, FCN baseline.

RoadSegNet is a layer-rearranged residual encoder: the stem keeps stride 1 and
has no pooling, the three striding operations sit at the entries of stages
2-4 (1/8 total; downsample 16 adds one more stride-2 unit after stage 4), and
a decoder of x2 transposed convolutions restores full resolution.  A structure
head reads the deepest feature; a direction head branches off the final
decoder feature.
"""
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ParameterError, ShapeError

STAGE_BLOCKS = {18: (2, 2, 2, 2), 34: (3, 4, 6, 3)}
STAGE_CHANNELS = (64, 128, 256, 512)
DECODER_CHANNELS = {8: (128, 64, 32), 16: (128, 64, 32, 16)}


@dataclass(frozen=True)
class NetworkConfig:
    backbone_depth: int = 18
    downsample: int = 8
    enable_structure_head: bool = True
    enable_direction_head: bool = True
    enable_refiner: bool = True
    input_channels: int = 3

    def __post_init__(self):
        if self.backbone_depth not in STAGE_BLOCKS:
            raise ParameterError(f"backbone_depth must be 18 or 34, "
                                 f"got {self.backbone_depth}")
        if self.downsample not in (8, 16):
            raise ParameterError(f"downsample must be 8 or 16, "
                                 f"got {self.downsample}")
        if self.input_channels < 1:
            raise ParameterError(f"input_channels must be >= 1, "
                                 f"got {self.input_channels}")


@dataclass
class LogitsBundle:
    seg_logits: torch.Tensor          # (B,1,H,W), pre-sigmoid
    dir_logits: torch.Tensor          # (B,4,H,W) or None if head disabled
    struct_pred: torch.Tensor         # (B,1,H/s,W/s) in [0,1] or None


@dataclass
class RefinedOutput:
    residual: torch.Tensor            # (B,1,H,W)
    refined_prob: torch.Tensor        # sigmoid(seg_logits + residual)


def _check_image(x, channels, multiple):
    if x.dim() != 4 or x.shape[1] != channels:
        raise ShapeError(f"expected (B,{channels},H,W) input, got "
                         f"{tuple(x.shape)}")
    h, w = x.shape[-2:]
    if h % multiple or w % multiple:
        raise ShapeError(f"input {h}x{w} must be a multiple of {multiple}")


def init_weights(module):
    """Fan-in-scaled init for convolutions; normalization starts at identity."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class BasicBlock(nn.Module):
    def __init__(self, in_ch, out_ch, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.shortcut = None
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_ch, out_ch, 1, stride, bias=False),
                nn.BatchNorm2d(out_ch))

    def forward(self, x):
        identity = x if self.shortcut is None else self.shortcut(x)
        out = F.relu(self.bn1(self.conv1(x)), inplace=True)
        out = self.bn2(self.conv2(out))
        return F.relu(out + identity, inplace=True)


def _make_stage(in_ch, out_ch, n_blocks, stride):
    blocks = [BasicBlock(in_ch, out_ch, stride)]
    blocks += [BasicBlock(out_ch, out_ch) for _ in range(n_blocks - 1)]
    return nn.Sequential(*blocks)


class RoadSegNet(nn.Module):
    def __init__(self, config=NetworkConfig()):
        super().__init__()
        self.config = config
        blocks = STAGE_BLOCKS[config.backbone_depth]
        self.stem = nn.Sequential(
            nn.Conv2d(config.input_channels, 64, 7, stride=1, padding=3,
                      bias=False),
            nn.BatchNorm2d(64), nn.ReLU(inplace=True))
        stages = []
        in_ch = 64
        for i, (out_ch, n) in enumerate(zip(STAGE_CHANNELS, blocks)):
            stages.append(_make_stage(in_ch, out_ch, n, stride=1 if i == 0 else 2))
            in_ch = out_ch
        if config.downsample == 16:
            stages.append(BasicBlock(in_ch, in_ch, stride=2))
        self.stages = nn.Sequential(*stages)

        decoder = []
        for out_ch in DECODER_CHANNELS[config.downsample]:
            decoder += [nn.ConvTranspose2d(in_ch, out_ch, 3, stride=2,
                                           padding=1, output_padding=1),
                        nn.BatchNorm2d(out_ch), nn.ReLU(inplace=True)]
            in_ch = out_ch
        self.decoder = nn.Sequential(*decoder)
        self.seg_head = nn.Conv2d(in_ch, 1, 3, padding=1)
        self.dir_head = None
        if config.enable_direction_head:
            self.dir_head = nn.Sequential(
                nn.Conv2d(in_ch, 32, 3, padding=1), nn.BatchNorm2d(32),
                nn.ReLU(inplace=True), nn.Conv2d(32, 4, 1))
        self.struct_head = None
        if config.enable_structure_head:
            self.struct_head = nn.Conv2d(512, 1, 1)
        init_weights(self)

    def forward(self, x):
        _check_image(x, self.config.input_channels, self.config.downsample)
        deep = self.stages(self.stem(x))
        feat = self.decoder(deep)
        seg = self.seg_head(feat)
        direction = self.dir_head(feat) if self.dir_head is not None else None
        struct = (torch.sigmoid(self.struct_head(deep))
                  if self.struct_head is not None else None)
        return LogitsBundle(seg, direction, struct)


class SegRefiner(nn.Module):
    """Small encoder-decoder over the probability map (4 levels, channels
    16/32/64/64).  The final layer is zero-initialized, so refinement starts
    as the identity; the residual is added to the logits."""

    def __init__(self):
        super().__init__()
        channels = (16, 32, 64, 64)
        self.encoders = nn.ModuleList()
        in_ch = 1
        for ch in channels:
            self.encoders.append(nn.Sequential(
                nn.Conv2d(in_ch, ch, 3, stride=2, padding=1),
                nn.BatchNorm2d(ch), nn.ReLU(inplace=True)))
            in_ch = ch
        self.decoders = nn.ModuleList()
        for skip_ch, out_ch in ((64, 64), (32, 32), (16, 16)):
            self.decoders.append(nn.Sequential(
                nn.Conv2d(in_ch + skip_ch, out_ch, 3, padding=1),
                nn.BatchNorm2d(out_ch), nn.ReLU(inplace=True)))
            in_ch = out_ch
        self.top = nn.Sequential(nn.Conv2d(in_ch, 16, 3, padding=1),
                                 nn.BatchNorm2d(16), nn.ReLU(inplace=True))
        self.final = nn.Conv2d(16, 1, 3, padding=1)
        init_weights(self)
        nn.init.zeros_(self.final.weight)
        nn.init.zeros_(self.final.bias)

    def forward(self, seg_logits):
        if seg_logits.dim() != 4 or seg_logits.shape[1] != 1:
            raise ShapeError(f"expected (B,1,H,W) logits, got "
                             f"{tuple(seg_logits.shape)}")
        x = torch.sigmoid(seg_logits)
        skips = []
        for enc in self.encoders:
            skips.append(x := enc(x))
        x = skips.pop()
        for dec in self.decoders:
            skip = skips.pop()
            x = F.interpolate(x, size=skip.shape[-2:], mode="nearest")
            x = dec(torch.cat([x, skip], dim=1))
        x = F.interpolate(x, size=seg_logits.shape[-2:], mode="nearest")
        residual = self.final(self.top(x))
        return RefinedOutput(residual, torch.sigmoid(seg_logits + residual))


class FCNBaseline(nn.Module):
    """Residual FCN with early aggressive striding (stem stride 2 + pool) and
    a single bilinear upsample back to full resolution."""

    def __init__(self, config=NetworkConfig()):
        super().__init__()
        self.config = config
        blocks = STAGE_BLOCKS[config.backbone_depth]
        self.stem = nn.Sequential(
            nn.Conv2d(config.input_channels, 64, 7, stride=2, padding=3,
                      bias=False),
            nn.BatchNorm2d(64), nn.ReLU(inplace=True),
            nn.MaxPool2d(3, stride=2, padding=1))
        stage_strides = [1, 2, 1, 1] if config.downsample == 8 else [1, 2, 2, 1]
        stages = []
        in_ch = 64
        for out_ch, n, s in zip(STAGE_CHANNELS, blocks, stage_strides):
            stages.append(_make_stage(in_ch, out_ch, n, stride=s))
            in_ch = out_ch
        self.stages = nn.Sequential(*stages)
        self.head = nn.Conv2d(in_ch, 1, 1)
        init_weights(self)

    def forward(self, x):
        _check_image(x, self.config.input_channels, self.config.downsample)
        logits = self.head(self.stages(self.stem(x)))
        return F.interpolate(logits, size=x.shape[-2:], mode="bilinear",
                             align_corners=False)


def count_parameters(config=NetworkConfig()):
    """Trainable scalar count of RoadSegNet under config (refiner excluded:
    it is a separate module, and Table-style size comparisons cover the
    segmentation network)."""
    net = RoadSegNet(config)
    return sum(p.numel() for p in net.parameters() if p.requires_grad)


def diresseg_forward(image, config=NetworkConfig(), net=None):
    """Eval-mode convenience wrapper; accepts (3,H,W) or (B,3,H,W)."""
    if net is None:
        net = RoadSegNet(config)
    net.eval()
    single = image.dim() == 3
    x = image.unsqueeze(0) if single else image
    with torch.no_grad():
        out = net(x)
    if single:
        out = LogitsBundle(
            out.seg_logits[0],
            None if out.dir_logits is None else out.dir_logits[0],
            None if out.struct_pred is None else out.struct_pred[0])
    return out


def diresref_forward(seg_logits, net=None):
    """Eval-mode convenience wrapper; accepts (H,W), (1,H,W) or (B,1,H,W)."""
    if net is None:
        net = SegRefiner()
    net.eval()
    x = seg_logits
    while x.dim() < 4:
        x = x.unsqueeze(0)
    with torch.no_grad():
        out = net(x)
    if seg_logits.dim() < 4:
        shape = seg_logits.shape
        out = RefinedOutput(out.residual.reshape(shape),
                            out.refined_prob.reshape(shape))
    return out


def fcn_baseline_forward(image, config=NetworkConfig(), net=None):
    if net is None:
        net = FCNBaseline(config)
    net.eval()
    single = image.dim() == 3
    x = image.unsqueeze(0) if single else image
    with torch.no_grad():
        logits = net(x)
    return logits[0] if single else logits
