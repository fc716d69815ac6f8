"""Small shared builders for tests."""
from __future__ import annotations

import numpy as np
import torch

from rvfusion.data import frame_to_sample, make_frame
from rvfusion.nn.model import FusionNet, NetConfig
from rvfusion.synth import SceneConfig, SensorRig

SMALL_ELEVATIONS = tuple(np.radians(np.linspace(5.0, -25.0, 16)))


def small_rig(camera=(128, 48), lidar_width=64, **kw):
    kw.setdefault("elevation_table", SMALL_ELEVATIONS)
    kw.setdefault("sweep_fov_deg", 90.0)
    return SensorRig.default(camera[0], camera[1], lidar_width, **kw)


def small_frames(n, seed=0, counts=(3, 2, 2), rig=None):
    rig = rig or small_rig()
    cfg = SceneConfig.bands(*counts)
    return [make_frame(cfg, rig, seed + i, timestamp=0.1 * i) for i in range(n)]


def small_samples(n, seed=0, **kw):
    return [frame_to_sample(f) for f in small_frames(n, seed, **kw)]


TINY_NET = NetConfig(aux_channels=(2, 3, 4), primary_channels=(4, 4, 4, 4), seed=3)


def tiny_problem(seed=0, dtype=torch.float64):
    """Random double-precision inputs for a tiny fused network.

    Range image 8x16, camera 16x32 (feature map 2x4).  Every feature pixel is
    referenced by at least one cell so all auxiliary parameters receive
    gradient.
    """
    g = np.random.default_rng(seed)
    L, W, H, Wc = 8, 16, 16, 32
    lidar = g.normal(size=(1, 5, L, W))
    lidar[:, 4] = (g.random((1, L, W)) < 0.8).astype(float)
    rgb = g.random((1, 3, H, Wc))
    index = g.integers(-1, (H // 8) * (Wc // 8), size=(1, L, W))
    index[0, 0, : (H // 8) * (Wc // 8)] = np.arange((H // 8) * (Wc // 8))
    labels = g.integers(-1, 6, size=(1, L, W))
    boxes = g.normal(size=(1, 6, L, W))
    return (
        torch.tensor(lidar, dtype=dtype),
        torch.tensor(rgb, dtype=dtype),
        torch.tensor(index),
        torch.tensor(labels),
        torch.tensor(boxes, dtype=dtype),
    )


def tiny_net(dtype=torch.float64):
    return FusionNet(TINY_NET).to(dtype)
