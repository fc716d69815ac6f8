import math

import numpy as np
import pytest
import torch

from helpers import small_samples, tiny_net, tiny_problem
from rvfusion.errors import ContractError, NumericError
from rvfusion.fusion import PixelMapping, compute_pixel_mapping
from rvfusion.nn.layers import ResBlock, conv2d, init_uniform_
from rvfusion.nn.losses import box_loss, focal_loss
from rvfusion.nn.model import AuxNet, FusionNet, NetConfig, aux_forward, fused_forward
from rvfusion.nn.train import Batch, TrainConfig, Trainer, learning_rate, total_loss
from rvfusion.nn.warp import warp
from rvfusion.rangeimage import RangeImage, RangeImageConfig


def naive_conv(x, w, b, stride, pad):
    C, H, W = x.shape
    O, _, kh, kw = w.shape
    xp = np.zeros((C, H + 2 * pad, W + 2 * pad))
    xp[:, pad:pad + H, pad:pad + W] = x
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    out = np.zeros((O, Ho, Wo))
    for o in range(O):
        for i in range(Ho):
            for j in range(Wo):
                acc = b[o]
                for c in range(C):
                    for di in range(kh):
                        for dj in range(kw):
                            acc += w[o, c, di, dj] * xp[c, i * stride + di, j * stride + dj]
                out[o, i, j] = acc
    return out


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
def test_conv2d_matches_sliding_window(stride, pad):
    g = np.random.default_rng(stride * 10 + pad)
    x = g.normal(size=(2, 5, 5)).astype(np.float32)
    w = g.normal(size=(3, 2, 3, 3)).astype(np.float32)
    b = g.normal(size=3).astype(np.float32)
    got = conv2d(torch.tensor(x)[None], torch.tensor(w), torch.tensor(b), stride, pad)[0].numpy()
    np.testing.assert_allclose(got, naive_conv(x.astype(np.float64), w, b, stride, pad), atol=1e-5, rtol=1e-6)


def test_conv2d_identity_and_bias():
    x = torch.randn(1, 4, 6, 7)
    eye = torch.eye(4).reshape(4, 4, 1, 1)
    assert torch.equal(conv2d(x, eye), x)
    out = conv2d(torch.zeros(1, 4, 6, 7), torch.randn(2, 4, 3, 3), torch.tensor([0.5, -2.0]), padding=1)
    assert torch.equal(out[0, 0], torch.full((6, 7), 0.5)) and torch.equal(out[0, 1], torch.full((6, 7), -2.0))


def test_conv2d_contract():
    with pytest.raises(ContractError):
        conv2d(torch.zeros(1, 3, 5, 5), torch.zeros(2, 4, 3, 3))
    with pytest.raises(ContractError):
        conv2d(torch.zeros(3, 5, 5), torch.zeros(2, 3, 3, 3))
    with pytest.raises(ContractError):
        conv2d(torch.zeros(1, 3, 2, 2), torch.zeros(2, 3, 5, 5))


def test_init_is_seeded_and_bounded():
    a = init_uniform_(ResBlock(3, 8), 5)
    b = init_uniform_(ResBlock(3, 8), 5)
    c = init_uniform_(ResBlock(3, 8), 6)
    for (n, p), q, r in zip(a.named_parameters(), b.parameters(), c.parameters()):
        assert torch.equal(p, q) and not torch.equal(p, r)
    assert a.conv1.weight.abs().max() <= 1 / math.sqrt(27)
    assert a.conv2.weight.abs().max() <= 1 / math.sqrt(72)


@pytest.mark.parametrize("hw,out", [((64, 64), (8, 8)), ((640, 1920), (80, 240))])
def test_aux_shapes(hw, out):
    net = FusionNet(NetConfig())
    f = aux_forward(np.zeros(hw + (3,), dtype=np.float32), net)
    assert f.data.shape == out + (32,) and f.scale == (8.0, 8.0)


def test_aux_block_resolutions():
    aux = AuxNet((16, 24, 32))
    x = torch.zeros(1, 3, 48, 64)
    shapes = []
    for blk in aux.blocks:
        x = blk(x)
        shapes.append(tuple(x.shape[1:]))
    assert shapes == [(16, 24, 32), (24, 12, 16), (32, 6, 8)]


def test_aux_rejects_indivisible():
    with pytest.raises(ContractError):
        aux_forward(np.zeros((60, 64, 3)), FusionNet(NetConfig()))


def test_aux_zero_input_zero_bias():
    net = FusionNet(NetConfig())
    with torch.no_grad():
        for m in net.aux.modules():
            if isinstance(m, torch.nn.Conv2d):
                m.bias.zero_()
    assert not aux_forward(np.zeros((32, 32, 3)), net).data.any()


def test_default_output_shapes():
    cfg = RangeImageConfig.default()
    img = RangeImage(np.zeros(cfg.shape + (5,)))
    pred = fused_forward(img, np.zeros((640, 1920, 3), dtype=np.float32), PixelMapping.absent(cfg.shape, (1920, 640)), FusionNet(NetConfig()))
    assert pred.class_logits.shape == (64, 512, 6) and pred.box_params.shape == (64, 512, 6)


@pytest.mark.parametrize("channels", [(4, 4), (4, 4, 4, 4, 4, 4)])
def test_primary_depth_keeps_resolution(channels):
    # odd sizes exercise the upsample-to-skip path
    net = FusionNet(NetConfig(aux_channels=(2, 3, 4), primary_channels=channels))
    out = net.primary(torch.zeros(1, net.primary.enc0.in_channels, 13, 37))
    assert out.shape == (1, channels[0], 13, 37)
    with pytest.raises(ContractError):
        FusionNet(NetConfig(primary_channels=(8,)))


def test_absent_mapping_equals_zero_image_channels():
    torch.manual_seed(0)
    net = tiny_net()
    lidar, rgb, index, _, _ = tiny_problem()
    absent = torch.full_like(index, -1)
    a = net(lidar, rgb, absent)
    b = net(lidar, torch.rand_like(rgb), absent)
    assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])
    # same as splicing zeros in for the warped features
    lid = torch.relu(net.expand(lidar * net.input_scale.to(lidar.dtype)))
    out = net.head(net.primary(torch.cat([lid, torch.zeros_like(lid)], 1)))
    assert torch.equal(out[:, :6], a[0])


def test_absent_mapping_gives_zero_aux_gradients():
    net = tiny_net()
    lidar, rgb, index, labels, boxes = tiny_problem()
    batch = Batch(lidar, rgb, torch.full_like(index, -1), labels, boxes)
    total_loss(net, batch, TrainConfig())[0].backward()
    for p in net.aux.parameters():
        assert p.grad is not None and not p.grad.any()
    assert any(p.grad.abs().sum() > 0 for p in net.expand.parameters())


def test_warp_autograd_matches_numpy_adjoint():
    from rvfusion.fusion import FeatureMap, warp_backward

    g = np.random.default_rng(0)
    feat = torch.tensor(g.normal(size=(1, 3, 4, 5)), requires_grad=True)
    index = torch.tensor(g.integers(-1, 20, size=(1, 6, 7)))
    out = warp(feat, index)
    cot = torch.tensor(g.normal(size=out.shape))
    (out * cot).sum().backward()
    flat = index[0].numpy()
    m = PixelMapping.absent((6, 7), (5, 4), (8.0, 8.0))
    m.valid[:] = flat >= 0
    m.pixels[..., 0] = np.where(flat >= 0, flat % 5, -1)
    m.pixels[..., 1] = np.where(flat >= 0, flat // 5, -1)
    ref = warp_backward(FeatureMap(cot[0].permute(1, 2, 0).numpy(), (8.0, 8.0)), m, (4, 5, 3)).data
    np.testing.assert_allclose(feat.grad[0].permute(1, 2, 0).numpy(), ref, atol=1e-12)


def test_warp_gradcheck():
    g = np.random.default_rng(1)
    feat = torch.tensor(g.normal(size=(2, 2, 3, 3)), requires_grad=True)
    index = torch.tensor(g.integers(-1, 9, size=(2, 4, 5)))
    assert torch.autograd.gradcheck(lambda f: warp(f, index), (feat,))


def test_warp_rejects_out_of_range_index():
    with pytest.raises(ContractError):
        warp(torch.zeros(1, 2, 2, 2), torch.tensor([[[4]]]))


# ---------------------------------------------------------------- losses


def test_focal_gamma_zero_is_cross_entropy():
    g = torch.Generator().manual_seed(0)
    logits = torch.randn(50, 6, generator=g, dtype=torch.float64)
    labels = torch.randint(0, 6, (50,), generator=g)
    loss, n = focal_loss(logits, labels, gamma=0.0)
    assert n == 50
    assert abs(loss.item() - torch.nn.functional.cross_entropy(logits, labels).item()) < 1e-12


def test_focal_matches_scalar_oracle():
    g = np.random.default_rng(2)
    logits = g.normal(size=(40, 6)) * 3
    labels = g.integers(-1, 6, 40)
    w = g.uniform(0.5, 2.0, 6)
    total, count = 0.0, 0
    for z, y in zip(logits, labels):
        if y < 0:
            continue
        p = math.exp(z[y]) / sum(math.exp(v) for v in z)
        total += -w[y] * (1 - p) ** 2 * math.log(p)
        count += 1
    loss, n = focal_loss(torch.tensor(logits), torch.tensor(labels), 2.0, tuple(w))
    assert n == count and abs(loss.item() - total / count) < 1e-9


def test_focal_edge_cases():
    logits = torch.zeros(4, 6)
    logits[torch.arange(4), torch.tensor([0, 1, 2, 3])] = 60.0
    loss, _ = focal_loss(logits, torch.tensor([0, 1, 2, 3]))
    assert loss.item() < 1e-12
    loss, n = focal_loss(torch.randn(3, 6, requires_grad=True), torch.tensor([-1, -1, -1]))
    assert n == 0 and loss.item() == 0.0
    loss.backward()


def test_box_loss_cases():
    t = torch.randn(5, 6, dtype=torch.float64)
    labels = torch.tensor([0, 1, 2, 3, 5])
    assert box_loss(t.clone(), t, labels)[0].item() == 0.0
    p = t.clone()
    p[2, 4] += 1.0
    loss, n = box_loss(p, t, torch.tensor([0, 1, 2, -1, 1]))
    assert n == 1 and abs(loss.item() - 1 / 6) < 1e-12
    p[0] += 10.0  # background cells never count
    assert abs(box_loss(p, t, torch.tensor([0, 1, 2, -1, 1]))[0].item() - 1 / 6) < 1e-12


def test_box_loss_matches_oracle():
    g = np.random.default_rng(3)
    p, t = g.normal(size=(30, 6)), g.normal(size=(30, 6))
    labels = g.integers(-1, 6, 30)
    rows = [i for i in range(30) if labels[i] in (2, 3, 4, 5)]
    want = sum(abs(p[i, k] - t[i, k]) for i in rows for k in range(6)) / (6 * len(rows))
    got, n = box_loss(torch.tensor(p), torch.tensor(t), torch.tensor(labels))
    assert n == len(rows) and abs(got.item() - want) < 1e-12


# ---------------------------------------------------------------- training


def test_learning_rate_schedule():
    assert learning_rate(0) == 0.002
    assert learning_rate(149) == 0.002
    assert learning_rate(150) == 0.002 * 0.99
    assert f"{learning_rate(150):.5f}" == "0.00198"
    assert learning_rate(450) == pytest.approx(0.002 * 0.99 ** 3, rel=1e-15)


def test_trainer_records_schedule():
    samples = small_samples(2)
    trainer = Trainer(FusionNet(NetConfig()), TrainConfig(lr=0.002, lr_decay_every=2))
    batch = Batch.stack(samples)
    recs = [trainer.train_step(batch) for _ in range(3)]
    assert [r["lr"] for r in recs] == [0.002, 0.002, 0.002 * 0.99]
    assert all(r["labeled_cells"] > 0 and math.isfinite(r["loss"]) for r in recs)


def test_zero_learning_rate_keeps_parameters():
    net = FusionNet(NetConfig())
    before = {k: v.clone() for k, v in net.state_dict().items()}
    Trainer(net, TrainConfig(lr=0.0)).train_step(Batch.stack(small_samples(1)))
    for k, v in net.state_dict().items():
        assert torch.equal(before[k], v)


def test_non_finite_loss_aborts_with_step():
    samples = small_samples(1)
    trainer = Trainer(FusionNet(NetConfig()), TrainConfig())
    batch = Batch.stack(samples)
    trainer.train_step(batch)
    batch.lidar[0, 0, 0, 0] = float("nan")
    with pytest.raises(NumericError) as exc:
        trainer.train_step(batch)
    assert exc.value.step == 1


def test_training_is_deterministic():
    samples = small_samples(3)
    from rvfusion.pipeline import train_model

    cfg = TrainConfig(iterations=3, batch_size=2, seed=4)
    a, ha = train_model(samples, NetConfig(seed=1), cfg, log_every=0)
    b, hb = train_model(samples, NetConfig(seed=1), cfg, log_every=0)
    assert [r["loss"] for r in ha] == [r["loss"] for r in hb]
    for (k, v), w in zip(a.state_dict().items(), b.state_dict().values()):
        assert torch.equal(v, w)


def test_adam_toy_quadratic():
    w = torch.tensor([3.0], dtype=torch.float64, requires_grad=True)
    opt = torch.optim.Adam([w], lr=0.05)
    for step in range(500):
        for group in opt.param_groups:
            group["lr"] = learning_rate(step, 0.05, 0.99, 150)
        opt.zero_grad()
        ((w - 1.25) ** 2).sum().backward()
        opt.step()
    assert abs(w.item() - 1.25) < 1e-3


def test_fused_forward_uses_image_only_through_mapping():
    frames = __import__("helpers").small_frames(1)
    f = frames[0]
    from rvfusion.data import range_image64

    img = range_image64(f)
    m = compute_pixel_mapping(img, f.range_config, f.calibration)
    net = FusionNet(NetConfig())
    a = fused_forward(img, f.camera, m, net)
    b = fused_forward(img, f.camera, m.empty_like(), net)
    c = fused_forward(img, np.zeros_like(f.camera), m.empty_like(), net)
    assert not np.array_equal(a.class_logits, b.class_logits)
    np.testing.assert_array_equal(b.class_logits, c.class_logits)
