"""Auxiliary image network, fusion network and the numpy-facing forward API."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..classes import NUM_CLASSES
from ..errors import ContractError
from ..fusion import FeatureMap, PixelMapping, rescale_mapping
from ..rangeimage import NUM_CHANNELS, RangeImage
from .layers import Conv, ResBlock, init_uniform_
from .warp import warp

NUM_BOX_PARAMS = 6
AUX_STRIDE = 8

# Fixed per-channel input scaling: range, height, azimuth, intensity, occupancy.
LIDAR_INPUT_SCALE = (1.0 / 50.0, 0.5, 1.0, 1.0, 1.0)


@dataclass(frozen=True)
class NetConfig:
    aux_channels: tuple = (16, 24, 32)
    primary_channels: tuple = (16, 24, 32, 48)
    seed: int = 0

    @property
    def fused_channels(self) -> int:
        return self.aux_channels[-1]


class AuxNet(nn.Module):
    """Three stride-2 residual blocks: ``(B, 3, H, W) -> (B, C3, H/8, W/8)``."""

    def __init__(self, channels=(16, 24, 32)):
        super().__init__()
        if len(channels) != 3:
            raise ContractError("auxiliary network has exactly three blocks")
        cin = 3
        blocks = []
        for c in channels:
            blocks.append(ResBlock(cin, c))
            cin = c
        self.blocks = nn.Sequential(*blocks)

    def forward(self, rgb):
        H, W = rgb.shape[-2:]
        if H % AUX_STRIDE or W % AUX_STRIDE:
            raise ContractError(f"image dims {H}x{W} must be divisible by {AUX_STRIDE}")
        return self.blocks(rgb)


class PrimaryNet(nn.Module):
    """Encoder-decoder with concatenating skips.

    ``channels[0]`` is the full-resolution width; every further entry adds one
    stride-2 level.
    """

    def __init__(self, cin, channels=(16, 24, 32, 48)):
        super().__init__()
        if len(channels) < 2:
            raise ContractError("primary network needs at least two levels")
        self.depth = len(channels) - 1
        self.enc0 = Conv(cin, channels[0], 3)
        for k in range(1, self.depth + 1):
            setattr(self, f"enc{k}", Conv(channels[k - 1], channels[k], 3, stride=2))
        for k in range(self.depth - 1, -1, -1):
            setattr(self, f"dec{k}", Conv(channels[k + 1] + channels[k], channels[k], 3))

    def forward(self, x):
        skips = [F.relu(self.enc0(x))]
        for k in range(1, self.depth + 1):
            skips.append(F.relu(getattr(self, f"enc{k}")(skips[-1])))
        y = skips.pop()
        for k in range(self.depth - 1, -1, -1):
            e = skips.pop()
            y = F.relu(getattr(self, f"dec{k}")(torch.cat([_up(y, e), e], 1)))
        return y


def _up(x, like):
    return F.interpolate(x, size=like.shape[-2:], mode="nearest")


class FusionNet(nn.Module):
    """LiDAR expansion + warped image features -> primary network -> 1x1 head.

    ``forward`` returns ``(class_logits, box_params)`` as ``(B, 6, L, W)`` each.
    """

    def __init__(self, cfg: NetConfig = NetConfig()):
        super().__init__()
        self.cfg = cfg
        c = cfg.fused_channels
        self.aux = AuxNet(cfg.aux_channels)
        self.expand = Conv(NUM_CHANNELS, c, 3)
        self.primary = PrimaryNet(2 * c, cfg.primary_channels)
        self.head = Conv(cfg.primary_channels[0], NUM_CLASSES + NUM_BOX_PARAMS, 1)
        self.register_buffer("input_scale", torch.tensor(LIDAR_INPUT_SCALE).view(1, -1, 1, 1), persistent=False)
        init_uniform_(self, cfg.seed)

    def forward(self, lidar, rgb, index):
        L, W = lidar.shape[-2:]
        if L % AUX_STRIDE or W % AUX_STRIDE:
            raise ContractError(f"range image {L}x{W} must be divisible by {AUX_STRIDE}")
        if tuple(index.shape[-2:]) != (L, W):
            raise ContractError(f"mapping shape {tuple(index.shape[-2:])} != range image {(L, W)}")
        img = warp(self.aux(rgb), index)
        lid = F.relu(self.expand(lidar * self.input_scale.to(lidar.dtype)))
        out = self.head(self.primary(torch.cat([lid, img], 1)))
        return out[:, :NUM_CLASSES], out[:, NUM_CLASSES:]

    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


@dataclass
class PerPointPrediction:
    """``class_logits`` and ``box_params`` as ``(L, W, 6)`` arrays.

    Box parameters: dx, dy (box center minus point, meters), log width,
    log length, sin yaw, cos yaw.
    """

    class_logits: np.ndarray
    box_params: np.ndarray


def _to_tensor(a, dtype):
    return torch.as_tensor(np.ascontiguousarray(a), dtype=dtype)


def image_to_tensor(rgb: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """``(H, W, 3)`` array to ``(1, 3, H, W)`` tensor."""
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ContractError(f"expected (H, W, 3) image, got {rgb.shape}")
    return _to_tensor(rgb.transpose(2, 0, 1)[None], dtype)


def aux_forward(rgb: np.ndarray, net: FusionNet) -> FeatureMap:
    """Image features at 1/8 resolution as an ``(H/8, W/8, C)`` map."""
    H, W = rgb.shape[:2]
    if H % AUX_STRIDE or W % AUX_STRIDE:
        raise ContractError(f"image dims {H}x{W} must be divisible by {AUX_STRIDE}")
    dtype = next(net.parameters()).dtype
    with torch.no_grad():
        f = net.aux(image_to_tensor(rgb, dtype))[0]
    return FeatureMap(f.permute(1, 2, 0).numpy(), scale=(float(AUX_STRIDE), float(AUX_STRIDE)))


def feature_index(mapping: PixelMapping) -> np.ndarray:
    """Flat pixel index at the auxiliary feature scale, ``(L, W)``; -1 absent."""
    if mapping.scale == (1.0, 1.0):
        mapping = rescale_mapping(mapping, AUX_STRIDE, AUX_STRIDE)
    elif mapping.scale != (float(AUX_STRIDE), float(AUX_STRIDE)):
        raise ContractError(f"mapping scale {mapping.scale} is neither full resolution nor 1/{AUX_STRIDE}")
    return mapping.flat_index()


def fused_forward(lidar_img: RangeImage, rgb: np.ndarray, mapping: PixelMapping, net: FusionNet) -> PerPointPrediction:
    """Run the fused network on one frame.

    ``mapping`` is the full-resolution mapping of ``lidar_img``; it is rescaled
    to the feature resolution here.  An all-absent mapping gives LiDAR-only
    predictions (zero image channels).
    """
    if mapping.shape != lidar_img.shape:
        raise ContractError(f"mapping {mapping.shape} does not match range image {lidar_img.shape}")
    dtype = next(net.parameters()).dtype
    lidar = _to_tensor(lidar_img.grid.transpose(2, 0, 1)[None], dtype)
    index = torch.as_tensor(feature_index(mapping)[None])
    with torch.no_grad():
        logits, box = net(lidar, image_to_tensor(rgb, dtype), index)
    return PerPointPrediction(
        logits[0].permute(1, 2, 0).numpy().copy(), box[0].permute(1, 2, 0).numpy().copy()
    )
