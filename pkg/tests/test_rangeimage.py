import math

import numpy as np
import pytest

from rvfusion.errors import MalformedSweepError, NoOverlapError
from rvfusion.geometry import CameraCalibration, cartesian_to_spherical, forward_camera, rotation_z
from rvfusion.rangeimage import (
    CH_AZIMUTH,
    CH_HEIGHT,
    CH_INTENSITY,
    CH_OCCUPANCY,
    CH_RANGE,
    LidarSweep,
    RangeImageConfig,
    build_range_image,
    crop_to_camera_fov,
)


def random_sweep(rng, cfg, n, spread=1.2):
    return LidarSweep(
        r=rng.uniform(1.0, 80.0, n),
        e=rng.uniform(0.0, 1.0, n),
        theta=rng.uniform(-spread, spread, n),
        laser_id=rng.integers(0, cfg.num_lasers, n),
    )


def small_config(W=32, L=8):
    return RangeImageConfig(W, tuple(np.radians(np.linspace(5, -25, L))), -math.pi / 4, math.pi / 4)


def test_empty_sweep():
    img = build_range_image(LidarSweep.empty(), RangeImageConfig.default())
    assert img.grid.shape == (64, 512, 5)
    assert not img.grid.any()
    assert (img.point_index == -1).all()


def test_single_return_center():
    cfg = RangeImageConfig.default()
    img = build_range_image(LidarSweep([10.0], [0.3], [0.0], [32]), cfg)
    assert img.occupied.sum() == 1
    assert img.grid[32, 256, CH_OCCUPANCY] == 1.0
    assert img.grid[32, 256, CH_RANGE] == 10.0
    assert img.grid[32, 256, CH_INTENSITY] == 0.3
    assert img.point_index[32, 256] == 0


def test_collision_keeps_closest():
    cfg = RangeImageConfig.default()
    img = build_range_image(LidarSweep([8.0, 5.0], [0.1, 0.2], [0.001, 0.0015], [3, 3]), cfg)
    assert img.occupied.sum() == 1
    r, c = np.argwhere(img.occupied)[0]
    assert img.grid[r, c, CH_RANGE] == 5.0 and img.point_index[r, c] == 1


def test_half_open_azimuth_interval():
    cfg = small_config()
    img = build_range_image(LidarSweep([5.0, 5.0], [0.0, 0.0], [cfg.azimuth_min, cfg.azimuth_max], [0, 1]), cfg)
    assert img.grid[0, 0, CH_OCCUPANCY] == 1.0
    assert img.occupied.sum() == 1


def test_azimuth_wraps_by_full_turn():
    cfg = RangeImageConfig(16, (0.1, 0.0, -0.1), math.pi - 0.4, math.pi + 0.4)
    img = build_range_image(LidarSweep([5.0, 6.0], [0.5, 0.5], [-math.pi + 0.2, math.pi - 0.2], [0, 0]), cfg)
    assert img.occupied.sum() == 2


def test_rows_follow_elevation_rank():
    cfg = RangeImageConfig(8, (-0.2, 0.0, 0.1), -0.5, 0.5)
    np.testing.assert_array_equal(cfg.laser_rows, [2, 1, 0])
    img = build_range_image(LidarSweep([3.0, 4.0, 5.0], [0, 0, 0], [0.0, 0.0, 0.0], [0, 1, 2]), cfg)
    col = 4
    assert [img.grid[k, col, CH_RANGE] for k in range(3)] == [5.0, 4.0, 3.0]
    np.testing.assert_array_equal(cfg.row_elevations, [0.1, 0.0, -0.2])


@pytest.mark.parametrize("bad", [dict(laser_id=[64]), dict(laser_id=[-1]), dict(r=[0.0]), dict(e=[1.5])])
def test_malformed_sweep(bad):
    kw = dict(r=[1.0], e=[0.5], theta=[0.0], laser_id=[0])
    kw.update(bad)
    with pytest.raises(MalformedSweepError):
        build_range_image(LidarSweep(**kw), RangeImageConfig.default())


def brute_force_image(sweep, cfg):
    """Per-cell oracle: dictionary of the minimum-range return."""
    best = {}
    span = cfg.azimuth_max - cfg.azimuth_min
    for i in range(len(sweep)):
        t = float(sweep.theta[i])
        while t < cfg.azimuth_min:
            t += 2 * math.pi
        while t >= cfg.azimuth_min + 2 * math.pi:
            t -= 2 * math.pi
        if not cfg.azimuth_min <= t < cfg.azimuth_max:
            continue
        col = min(int(math.floor((t - cfg.azimuth_min) * cfg.width / span)), cfg.width - 1)
        row = sorted(range(cfg.num_lasers), key=lambda k: -cfg.elevation_table[k]).index(int(sweep.laser_id[i]))
        key = (row, col)
        cand = (float(sweep.r[i]), float(sweep.theta[i]), float(sweep.e[i]), i)
        if key not in best or cand < best[key]:
            best[key] = cand
    return best


def test_collision_rule_matches_brute_force():
    rng = np.random.default_rng(7)
    cfg = small_config(W=16, L=6)
    for trial in range(1000):
        n = int(rng.integers(0, 60))
        sweep = random_sweep(rng, cfg, n)
        if trial % 3 == 0 and n:
            sweep.r[: n // 2] = np.round(sweep.r[: n // 2])  # force range ties
        img = build_range_image(sweep, cfg)
        best = brute_force_image(sweep, cfg)
        assert img.occupied.sum() == len(best) <= n
        for (row, col), (r, theta, e, i) in best.items():
            assert img.grid[row, col, CH_RANGE] == r
            assert img.grid[row, col, CH_AZIMUTH] == theta
            assert img.grid[row, col, CH_INTENSITY] == e
            assert img.point_index[row, col] == i
        empty = ~img.occupied
        assert not img.grid[empty].any() and (img.point_index[empty] == -1).all()


def test_order_independence():
    rng = np.random.default_rng(3)
    cfg = small_config(W=16, L=6)
    sweep = random_sweep(rng, cfg, 400)
    sweep.r[:200] = 7.0
    a = build_range_image(sweep, cfg)
    perm = rng.permutation(400)
    b = build_range_image(LidarSweep(sweep.r[perm], sweep.e[perm], sweep.theta[perm], sweep.laser_id[perm]), cfg)
    assert a.grid.tobytes() == b.grid.tobytes()
    np.testing.assert_array_equal(perm[b.point_index[b.occupied]], a.point_index[a.occupied])


def test_cell_invariants_and_round_trip():
    rng = np.random.default_rng(11)
    cfg = RangeImageConfig.default()
    sweep = random_sweep(rng, cfg, 20000)
    img = build_range_image(sweep, cfg)
    occ = img.occupied
    assert set(np.unique(img.grid[..., CH_OCCUPANCY])) <= {0.0, 1.0}
    phi = cfg.row_elevations[:, None].repeat(cfg.width, 1)
    np.testing.assert_allclose(img.grid[..., CH_HEIGHT][occ], (img.grid[..., CH_RANGE] * np.sin(phi))[occ], atol=1e-9)
    pts = img.cell_points(cfg)[occ]
    r, t, p = cartesian_to_spherical(pts)
    assert np.max(np.abs(r - img.grid[..., CH_RANGE][occ])) < 1e-9
    assert np.max(np.abs(t - img.grid[..., CH_AZIMUTH][occ])) < 1e-9
    assert np.max(np.abs(p - phi[occ])) < 1e-9


def test_crop_full_revolution_to_camera():
    full = RangeImageConfig(2048, RangeImageConfig.default().elevation_table, -math.pi, math.pi)
    cal = forward_camera(1920, 640, hfov_deg=90.0)
    c = crop_to_camera_fov(full, cal)
    assert abs(c.azimuth_min + math.pi / 4) < 1e-12 and abs(c.azimuth_max - math.pi / 4) < 1e-12
    assert c.width == 512
    assert abs(c.azimuth_step - full.azimuth_step) < 1e-12


def test_crop_camera_inside_config():
    cfg = RangeImageConfig(100, (0.0, -0.1), -1.0, 1.0)
    cal = forward_camera(64, 32, hfov_deg=60.0)
    c = crop_to_camera_fov(cfg, cal)
    lo, hi = cal.azimuth_bounds()
    assert (c.azimuth_min, c.azimuth_max) == (lo, hi)


def test_crop_disjoint():
    cfg = RangeImageConfig(100, (0.0, -0.1), 2.0, 3.0)
    with pytest.raises(NoOverlapError):
        crop_to_camera_fov(cfg, forward_camera(64, 32, hfov_deg=60.0))


def test_crop_rotated_camera():
    base = forward_camera(64, 32, hfov_deg=60.0)
    R = base.R @ rotation_z(-0.5)  # camera yawed 0.5 rad to the left
    cal = CameraCalibration(base.K, R, np.zeros(3), 64, 32)
    lo, hi = cal.azimuth_bounds()
    assert abs(lo - (0.5 - math.pi / 6)) < 1e-12 and abs(hi - (0.5 + math.pi / 6)) < 1e-12
