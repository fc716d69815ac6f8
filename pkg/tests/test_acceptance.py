"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test records a one-line detail; ``conftest.py`` prints a PASS/FAIL line
per criterion at the end of the run.  Criterion 8 trains six models and takes
roughly an hour on one CPU core.
"""
import math
import struct
import time
from fractions import Fraction

import numpy as np
import pytest
import torch

import oracles
from helpers import small_samples, tiny_net, tiny_problem
from test_eval import aligned_iou, random_box, sample_instance
from test_fusion import random_calibration, random_mapping
from test_io import random_frame
from rvfusion.cli import EXIT_OK, main, run_experiment
from rvfusion.config import RunConfig
from rvfusion.eval.boxes import BoxBEV, rotated_iou
from rvfusion.eval.detection import Detection, GroundTruth, compute_ap
from rvfusion.eval.segmentation import segmentation_metrics
from rvfusion.fusion import FeatureMap, compute_pixel_mapping, warp_backward, warp_features
from rvfusion.geometry import cartesian_to_spherical, spherical_to_cartesian
from rvfusion.io import (
    BadMagicError,
    CorruptSectionError,
    TruncatedSectionError,
    UnsupportedVersionError,
    decode_frame,
    encode_frame,
    frames_equal,
    read_frame,
    write_frame,
)
from rvfusion.nn.model import FusionNet, NetConfig
from rvfusion.nn.train import Batch, TrainConfig, Trainer, total_loss
from rvfusion.nn.warp import warp
from rvfusion.rangeimage import LidarSweep, RangeImageConfig, build_range_image

ROOT = __import__("pathlib").Path(__file__).resolve().parents[1]


@pytest.fixture
def detail(record_property):
    def put(text):
        record_property("detail", text)
    return put


def test_criterion_01_geometry_round_trip(detail):
    g = np.random.default_rng(0)
    n = 100_000
    r = g.uniform(0.05, 150.0, n)
    theta = g.uniform(-math.pi, math.pi, n)
    phi = g.uniform(-1.5, 1.5, n)
    pts = g.uniform(-150, 150, (n, 3))
    t0 = time.perf_counter()
    xyz = spherical_to_cartesian(r, theta, phi)
    r2, t2, p2 = cartesian_to_spherical(xyz)
    back = spherical_to_cartesian(*cartesian_to_spherical(pts))
    secs = time.perf_counter() - t0
    dtheta = np.abs(np.angle(np.exp(1j * (t2 - theta))))
    err_sph = max(np.abs(r2 - r).max(), dtheta.max(), np.abs(p2 - phi).max())
    err_cart = np.abs(back - pts).max()
    detail(f"max error sph->cart->sph {err_sph:.2e}, cart->sph->cart {err_cart:.2e}, {secs:.3f} s for 2x10^5 conversions")
    assert err_sph < 1e-9 and err_cart < 1e-9
    assert secs < 1.0


def test_criterion_02_projection_oracle(detail):
    g = np.random.default_rng(1)
    counts = {"mapped": 0, "behind": 0, "out of bounds": 0}
    cells = 0
    for _ in range(1000):
        cal = random_calibration(g)
        cfg = RangeImageConfig(12, tuple(np.radians(np.linspace(15, -30, 4))), -math.pi, math.pi)
        n = 10
        sweep = LidarSweep(g.uniform(0.5, 80, n), g.uniform(0, 1, n), g.uniform(-math.pi, math.pi, n), g.integers(0, 4, n))
        img = build_range_image(sweep, cfg)
        m = compute_pixel_mapping(img, cfg, cal)
        K, R, t = cal.K.tolist(), cal.R.tolist(), cal.t.tolist()
        phis = sorted(cfg.elevation_table, reverse=True)
        for row, col in zip(*np.nonzero(img.occupied)):
            cells += 1
            p = oracles.cell_point(float(img.grid[row, col, 0]), float(img.grid[row, col, 2]), phis[row])
            cam = [sum(R[i][j] * p[j] for j in range(3)) + t[i] for i in range(3)]
            uv = oracles.project(p, K, R, t, cal.image_width, cal.image_height)
            want = oracles.pixel(uv, (1, 1), (cal.image_width, cal.image_height))
            got = tuple(int(x) for x in m.pixels[row, col]) if m.valid[row, col] else None
            assert got == want, (row, col, got, want)
            if want is not None:
                counts["mapped"] += 1
            elif not sum(K[2][j] * cam[j] for j in range(3)) > 0:
                counts["behind"] += 1
            else:
                counts["out of bounds"] += 1
        assert not m.valid[~img.occupied].any()
    detail(f"{cells} cells over 1000 calibrations match exactly ({', '.join(f'{v} {k}' for k, v in counts.items())})")
    assert all(counts.values())


def test_criterion_03_warp_adjoint(detail):
    g = np.random.default_rng(2)
    worst = worst_t = 0.0
    for _ in range(100):
        H, Wf, C = (int(v) for v in g.integers(1, 10, 3))
        L, W = (int(v) for v in g.integers(1, 12, 2))
        m, _ = random_mapping(g, L, W, (Wf, H), p_absent=g.uniform(0, 1))
        x = g.normal(size=(H, Wf, C))
        y = g.normal(size=(L, W, C))
        lhs = np.vdot(warp_features(FeatureMap(x), m).data, y)
        rhs = np.vdot(x, warp_backward(FeatureMap(y), m, (H, Wf, C)).data)
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs), abs(rhs)))
        # same identity through the autograd path used in training
        xt = torch.tensor(x.transpose(2, 0, 1)[None], requires_grad=True)
        yt = torch.tensor(y.transpose(2, 0, 1)[None])
        out = warp(xt, torch.tensor(m.flat_index()[None]))
        (grad,) = torch.autograd.grad(out, xt, yt)
        lhs_t = float((out.detach() * yt).sum())
        rhs_t = float((xt.detach() * grad).sum())
        worst_t = max(worst_t, abs(lhs_t - rhs_t) / max(1.0, abs(lhs_t), abs(rhs_t)))
    detail(f"max relative adjoint gap {worst:.1e} (numpy), {worst_t:.1e} (autograd) over 100 triples")
    assert worst < 1e-10 and worst_t < 1e-10


def test_criterion_04_gradient_check(detail):
    t0 = time.perf_counter()
    net = tiny_net()
    batch = Batch(*tiny_problem())
    cfg = TrainConfig()
    params = list(net.named_parameters())
    count = sum(p.numel() for _, p in params)
    loss = total_loss(net, batch, cfg)[0]
    grads = torch.autograd.grad(loss, [p for _, p in params])
    h = 1e-5
    worst, worst_aux, checked_aux = 0.0, 0.0, 0
    with torch.no_grad():
        for (name, p), gr in zip(params, grads):
            flat, gflat = p.view(-1), gr.reshape(-1)
            for i in range(flat.numel()):
                v = flat[i].item()
                flat[i] = v + h
                lp = total_loss(net, batch, cfg)[0].item()
                flat[i] = v - h
                lm = total_loss(net, batch, cfg)[0].item()
                flat[i] = v
                num, ana = (lp - lm) / (2 * h), gflat[i].item()
                rel = abs(ana - num) / max(abs(ana), abs(num), 1e-6)
                worst = max(worst, rel)
                if name.startswith("aux."):
                    worst_aux = max(worst_aux, rel)
                    checked_aux += 1
    secs = time.perf_counter() - t0
    aux_total = sum(p.numel() for p in net.aux.parameters())
    detail(f"{count} params, max rel error {worst:.2e} (aux {worst_aux:.2e} over {checked_aux} params), {secs:.1f} s")
    assert count <= 5000 and checked_aux == aux_total > 0
    assert worst < 1e-4
    assert secs < 300


def test_criterion_05_rotated_iou(detail):
    g = np.random.default_rng(3)
    worst = worst_sym = worst_rigid = 0.0
    for _ in range(1000):
        a, b = random_box(g, 1.0), random_box(g, 1.0)
        got = rotated_iou(a, b)
        want = oracles.raster_iou((a.x, a.y, a.length, a.width, a.yaw), (b.x, b.y, b.length, b.width, b.yaw))
        worst = max(worst, abs(got - want))
        worst_sym = max(worst_sym, abs(got - rotated_iou(b, a)))
        yaw, tx, ty = g.uniform(-math.pi, math.pi), g.uniform(-50, 50), g.uniform(-50, 50)
        c, s = math.cos(yaw), math.sin(yaw)

        def move(q):
            return BoxBEV(c * q.x - s * q.y + tx, s * q.x + c * q.y + ty, q.length, q.width, q.yaw + yaw)

        worst_rigid = max(worst_rigid, abs(got - rotated_iou(move(a), move(b))))
    detail(f"1000 pairs: max |IoU - raster| {worst:.1e}, symmetry {worst_sym:.1e}, rigid {worst_rigid:.1e}")
    assert worst < 2e-3 and worst_sym <= 1e-12 and worst_rigid <= 1e-9


def test_criterion_06_ap_oracle(detail):
    g = np.random.default_rng(4)
    for trial in range(200):
        nd, ng = int(g.integers(0, 6)), int(g.integers(1, 4))
        threshold = float(g.choice([0.5, 0.7]))
        dets, gts = sample_instance(g, nd, ng, threshold)
        want = oracles.brute_force_ap(dets, gts, aligned_iou, threshold)
        got = compute_ap([Detection(b, "x", c) for b, c in dets], [GroundTruth(t, "x") for t in gts], threshold)
        assert got == float(want), (trial, got, want)
    detail("200 random instances (<=5 dets, <=3 gts) equal the brute-force PR evaluation exactly")


def test_criterion_07_segmentation(detail):
    r = segmentation_metrics([1] * 20, [0] * 10 + [1] * 10, num_classes=2)
    assert r.class_iou.tolist() == [0.0, 0.5]
    gt = np.array([0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 5, -1])
    pred = np.array([0, 1, 1, 1, 2, 0, 3, 3, 5, 4, 5, 5, 4, 2])
    r = segmentation_metrics(pred, gt)
    # hand-computed: IoU 1/3, 2/3, 1/2, 1, 1/3, 1/2; recall 1/2, 1, 1/2, 1, 1/2, 2/3
    assert r.miou == pytest.approx(float(Fraction(1, 3) + Fraction(2, 3) + Fraction(1, 2) + 1 + Fraction(1, 3) + Fraction(1, 2)) / 6, abs=1e-15)
    assert r.macc == pytest.approx(float(Fraction(1, 2) + 1 + Fraction(1, 2) + 1 + Fraction(1, 2) + Fraction(2, 3)) / 6, abs=1e-15)
    g = np.random.default_rng(5)
    for _ in range(1000):
        n = int(g.integers(1, 200))
        gt = g.integers(-1, 6, n)
        gt[0] = g.integers(0, 6)
        pred = np.where(g.random(n) < 0.5, gt, g.integers(0, 6, n))
        pred[gt < 0] = g.integers(0, 6, (gt < 0).sum())
        r = segmentation_metrics(pred, gt)
        _, miou, macc = oracles.seg_oracle(pred.tolist(), gt.tolist())
        assert r.miou <= r.macc
        assert abs(r.miou - float(miou)) < 1e-12 and abs(r.macc - float(macc)) < 1e-12
    detail("2-class and 6-class fixtures exact; mIoU <= mAcc on 1000 random label fields")


EXPERIMENT_SEEDS = (0, 1, 2)


def test_criterion_08_fusion_benefit(detail, tmp_path):
    t0 = time.perf_counter()
    cfg_path = ROOT / "configs" / "experiment.cfg"
    torch.set_num_threads(1)
    assert main(["-q", "gen-data", "--config", str(cfg_path), "--out", str(tmp_path / "data"), "--count", "500"]) == EXIT_OK
    gen_secs = time.perf_counter() - t0
    cfg = RunConfig.load(cfg_path)
    summary = run_experiment(cfg, tmp_path / "data", tmp_path / "exp", EXPERIMENT_SEEDS)
    secs = time.perf_counter() - t0
    fused, lidar = summary["mean"]["fused"], summary["mean"]["lidar-only"]
    far, near = summary["gap"]["50-70m"], summary["gap"]["0-30m"]
    detail(
        f"mean mIoU 50-70m fused {fused['50-70m']:.2f} vs lidar-only {lidar['50-70m']:.2f} (gap {far:+.2f}, need >= 5); "
        f"0-30m fused {fused['0-30m']:.2f} vs lidar-only {lidar['0-30m']:.2f} (gap {near:+.2f}, need |gap| < 3); "
        f"{secs / 60:.1f} min total ({gen_secs / 60:.1f} min data)"
    )
    print("\n" + (tmp_path / "exp" / "experiment.csv").read_text())
    assert far >= 5.0
    assert abs(near) < 3.0
    assert secs < 2 * 3600


def test_criterion_09_overfit(detail):
    torch.set_num_threads(1)
    batch = Batch.stack(small_samples(4, seed=20), dtype=torch.float64)
    net = FusionNet(NetConfig()).to(torch.float64)
    trainer = Trainer(net, TrainConfig(iterations=200, lr=1.6e-4))
    losses = np.array([trainer.train_step(batch)["loss"] for _ in range(200)])
    ups = int((np.diff(losses) >= 0).sum())
    ratio = losses[-1] / losses[0]
    detail(f"loss {losses[0]:.4f} -> {losses[-1]:.4f} (ratio {ratio:.3f}), {ups} non-decreasing steps")
    assert ups == 0
    assert ratio < 0.25


def test_criterion_10_io(detail, tmp_path):
    g = np.random.default_rng(6)
    for k in range(100):
        f = random_frame(g)
        write_frame(f, tmp_path / f"{k}.rfrm")
        back = read_frame(tmp_path / f"{k}.rfrm")
        assert frames_equal(f, back) and encode_frame(back) == (tmp_path / f"{k}.rfrm").read_bytes()
    data = encode_frame(random_frame(g))
    with pytest.raises(BadMagicError):
        decode_frame(b"JUNK" + data[4:])
    with pytest.raises(UnsupportedVersionError):
        decode_frame(data[:4] + struct.pack("<HH", 9, 9) + data[8:])
    _, n = struct.unpack("<4sQ", data[12:24])
    with pytest.raises(TruncatedSectionError) as exc:
        decode_frame(data[:24 + n // 2])
    assert exc.value.section == "calibration"
    bad = bytearray(data)
    bad[16:24] = struct.pack("<Q", n + 8)
    bad[24 + n:24 + n] = b"\0" * 8
    with pytest.raises(CorruptSectionError):
        decode_frame(bytes(bad))
    detail("100 random frames round-trip bit-exactly; bad magic, version, truncation and corrupt payload diagnosed")


def test_criterion_11_bench(detail, tmp_path, capsys):
    cfg = tmp_path / "bench.cfg"
    cfg.write_text("rig.lidar_width = 64\nrig.beams = 16\nrig.camera_width = 128\nrig.camera_height = 48\n")
    assert main(["-q", "bench", "--config", str(cfg), "--runs", "100", "--warmup", "5", "--out", str(tmp_path / "bench.txt")]) == EXIT_OK
    report = dict(line.split(" = ", 1) for line in (tmp_path / "bench.txt").read_text().splitlines())
    assert int(report["runs"]) == 100
    detail(f"bench report: {report['runs']} runs, mean {float(report['mean_ms']):.3f} ms, median {float(report['median_ms']):.3f} ms")
