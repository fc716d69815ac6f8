"""Batched feature warp as an autograd function.

Forward gathers feature rows by flat pixel index; backward is the explicit
scatter-add adjoint (same math as :func:`rvfusion.fusion.warp_backward`).
"""
from __future__ import annotations

import torch

from ..errors import ContractError


class Warp(torch.autograd.Function):
    @staticmethod
    def forward(ctx, feat, index):
        # feat (B, C, Hf, Wf); index (B, L, W) int64, -1 = absent
        B, C, Hf, Wf = feat.shape
        if index.shape[0] != B:
            raise ContractError(f"batch of {B} feature maps but {index.shape[0]} mappings")
        _, L, W = index.shape
        if index.numel() and int(index.max()) >= Hf * Wf:
            raise ContractError("mapping references a pixel outside the feature map")
        rows = feat.permute(0, 2, 3, 1).reshape(B * Hf * Wf, C)
        flat = index.reshape(-1)
        hit = flat >= 0
        offset = torch.arange(B, dtype=torch.int64).repeat_interleave(L * W) * (Hf * Wf)
        src = (flat + offset)[hit]
        out = rows.new_zeros(B * L * W, C)
        out[hit] = rows[src]
        ctx.save_for_backward(src, hit)
        ctx.dims = (B, C, Hf, Wf, L, W)
        return out.reshape(B, L, W, C).permute(0, 3, 1, 2).contiguous()

    @staticmethod
    def backward(ctx, grad):
        src, hit = ctx.saved_tensors
        B, C, Hf, Wf, L, W = ctx.dims
        g = grad.permute(0, 2, 3, 1).reshape(B * L * W, C)
        gin = g.new_zeros(B * Hf * Wf, C)
        gin.index_add_(0, src, g[hit])
        return gin.reshape(B, Hf, Wf, C).permute(0, 3, 1, 2), None


def warp(feat: torch.Tensor, index: torch.Tensor) -> torch.Tensor:
    """Warp ``(B, C, Hf, Wf)`` camera features to ``(B, C, L, W)`` range view."""
    return Warp.apply(feat, index)
