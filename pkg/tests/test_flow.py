import math

import pytest
import torch

from lipsynth.flow import (BrightnessConstancyFlow, LearnedFlowAdapter, build_flow_estimator, frame_difference,
                           gaussian_kernel1d)


def _pattern(shift_x, shift_y, size=64):
    ys, xs = torch.meshgrid(torch.arange(size, dtype=torch.float64), torch.arange(size, dtype=torch.float64),
                            indexing="ij")
    x, y = xs - shift_x, ys - shift_y
    img = 0.5 + 0.2 * torch.sin(2 * math.pi * x / 17) * torch.cos(2 * math.pi * y / 23) + 0.1 * torch.sin(
        2 * math.pi * (x + y) / 29)
    return img.expand(3, size, size)


@pytest.mark.parametrize("dx, dy", [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.5)])
def test_translation_oracle(dx, dy):
    video = torch.stack([_pattern(dx * t, dy * t) for t in range(4)])[None]
    flow = BrightnessConstancyFlow()(video)
    assert flow.shape == (1, 3, 2, 64, 64)
    inner = flow[..., 12:-12, 12:-12]
    assert abs(inner[:, :, 0].mean().item() - dx) <= 0.3
    assert abs(inner[:, :, 1].mean().item() - dy) <= 0.3


def test_static_video_exact_zero():
    video = torch.rand(2, 5, 3, 32, 32).expand(2, 5, 3, 32, 32).clone()
    video[:, 1:] = video[:, :1]
    assert torch.count_nonzero(BrightnessConstancyFlow()(video)) == 0


def test_flow_is_finite_on_flat_frames():
    video = torch.zeros(1, 3, 3, 16, 16)
    video[:, 1] = 0.5
    assert torch.isfinite(BrightnessConstancyFlow()(video)).all()


def test_flow_input_validation():
    with pytest.raises(ValueError):
        BrightnessConstancyFlow()(torch.zeros(1, 1, 3, 8, 8))


def test_flow_gradient_reaches_every_frame():
    video = torch.rand(1, 4, 3, 24, 24, dtype=torch.float64, requires_grad=True)
    BrightnessConstancyFlow()(video).pow(2).sum().backward()
    assert all(video.grad[0, t].abs().sum() > 0 for t in range(4))


def test_gaussian_kernel():
    k = gaussian_kernel1d(2.0)
    assert k.numel() == 13
    assert k.sum().item() == pytest.approx(1.0)
    assert torch.allclose(k, k.flip(0))


def test_frame_difference():
    v = torch.arange(3.0).view(1, 3, 1, 1, 1).expand(1, 3, 3, 4, 4)
    d = frame_difference(v)
    assert d.shape == (1, 2, 3, 4, 4)
    assert torch.all(d == 1)


def test_learned_adapter_slot():
    with pytest.raises(RuntimeError):
        LearnedFlowAdapter()(torch.zeros(1, 2, 3, 8, 8))

    class Zero(torch.nn.Module):
        def forward(self, a, b):
            return torch.zeros(a.shape[0], 2, *a.shape[2:])

    out = LearnedFlowAdapter(Zero())(torch.zeros(2, 5, 3, 8, 8))
    assert out.shape == (2, 4, 2, 8, 8)


def test_registry():
    assert isinstance(build_flow_estimator("brightness"), BrightnessConstancyFlow)
    with pytest.raises(ValueError):
        build_flow_estimator("farneback")
