"""Convolution wrapper, residual block and deterministic initialization."""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from ..errors import ContractError


def conv2d(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None, stride: int = 1, padding: int = 0):
    """Cross-correlation with zero padding on ``(B, C, H, W)`` tensors.

    Thin contract-checked front end to ``torch.nn.functional.conv2d``; gradients
    for input, weight and bias come from autograd.
    """
    if x.dim() != 4 or weight.dim() != 4:
        raise ContractError(f"conv2d expects 4-D input and weight, got {tuple(x.shape)} and {tuple(weight.shape)}")
    if x.shape[1] != weight.shape[1]:
        raise ContractError(f"input has {x.shape[1]} channels, kernel expects {weight.shape[1]}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ContractError(f"bias shape {tuple(bias.shape)} != ({weight.shape[0]},)")
    kh, kw = weight.shape[2:]
    if x.shape[2] + 2 * padding < kh or x.shape[3] + 2 * padding < kw:
        raise ContractError(f"kernel {kh}x{kw} larger than padded input {tuple(x.shape[2:])}")
    return F.conv2d(x, weight, bias, stride=stride, padding=padding)


class Conv(nn.Conv2d):
    """``nn.Conv2d`` routed through :func:`conv2d`."""

    def __init__(self, cin, cout, kernel, stride=1):
        super().__init__(cin, cout, kernel, stride=stride, padding=kernel // 2)

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, self.stride[0], self.padding[0])


class ResBlock(nn.Module):
    """Two 3x3 convolutions, the first with stride 2, plus a 1x1 stride-2
    projection shortcut. ReLU after the sum."""

    def __init__(self, cin, cout):
        super().__init__()
        self.conv1 = Conv(cin, cout, 3, stride=2)
        self.conv2 = Conv(cout, cout, 3)
        self.shortcut = Conv(cin, cout, 1, stride=2)

    def forward(self, x):
        h = F.relu(self.conv1(x))
        return F.relu(self.conv2(h) + self.shortcut(x))


def init_uniform_(module: nn.Module, seed: int) -> nn.Module:
    """Fill every conv weight and bias with U(-1/sqrt(fan_in), 1/sqrt(fan_in)).

    Parameters are visited in registration order with one seeded generator,
    so the result depends only on the architecture and ``seed``.
    """
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1] // m.groups
                bound = 1.0 / math.sqrt(fan_in)
                for p in (m.weight, m.bias):
                    if p is None:
                        continue
                    u = torch.rand(p.shape, generator=gen, dtype=torch.float64)
                    p.copy_((2.0 * u - 1.0) * bound)
    return module
