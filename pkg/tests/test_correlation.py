import numpy as np
import pytest
import torch
import torch.nn as nn
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lipsynth.config import get_preset
from lipsynth.correlation import CorrelationNet, PhiS, PhiV, correlation_loss, temporal_receptive_field
from lipsynth.generator import ShapeError


def _zero_biases(m):
    for p in m.modules():
        if getattr(p, "bias", None) is not None and isinstance(p, (nn.Conv2d, nn.Conv3d)):
            nn.init.zeros_(p.bias)
    return m.eval()


def test_phi_s_shapes_and_zero_response():
    phi = _zero_biases(PhiS(4, (8, 8, 8)))
    out = phi(torch.randn(3, 4, 15, 16))
    assert out.shape == (3, 15)
    assert torch.count_nonzero(phi(torch.zeros(2, 4, 15, 16))) == 0


def test_phi_v_shapes_and_zero_response():
    phi = _zero_biases(PhiV(2, (8, 8, 8)))
    assert phi(torch.randn(2, 15, 2, 64, 64)).shape == (2, 15)
    assert torch.count_nonzero(phi(torch.zeros(2, 15, 2, 64, 64))) == 0


def test_phi_shape_errors():
    with pytest.raises(ShapeError):
        PhiS(4)(torch.zeros(1, 4, 15, 32))
    with pytest.raises(ShapeError):
        PhiV()(torch.zeros(15, 2, 64, 64))


def test_receptive_field_of_plain_stack():
    net = nn.Sequential(nn.Conv2d(1, 1, 5), nn.MaxPool2d(2), nn.Conv2d(1, 1, 3, dilation=2))
    # 5, then the pool adds 1, then the dilated conv adds (3 - 1) * 2 at jump 2
    assert temporal_receptive_field(net) == 14


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 15, elements=st.floats(-10, 10)), arrays(np.float64, 15, elements=st.floats(-10, 10)),
       st.floats(0.01, 100))
def test_correlation_loss_scale_invariant(a, b, c):
    ta, tb = torch.as_tensor(a), torch.as_tensor(b)
    # eps shifts the cosine by about eps / (c |a| |b|); keep that below the tolerance
    assume(c * ta.norm() * tb.norm() >= 1e-2)
    assert abs(correlation_loss(c * ta, tb).item() - correlation_loss(ta, tb).item()) < 1e-6


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (3, 8), elements=st.floats(-5, 5)), arrays(np.float64, (3, 8), elements=st.floats(-5, 5)))
def test_correlation_loss_bounds_and_batch_mean(a, b):
    ta, tb = torch.as_tensor(a), torch.as_tensor(b)
    loss = correlation_loss(ta, tb).item()
    assert -1e-9 <= loss <= 2 + 1e-9
    per = [correlation_loss(ta[i], tb[i]).item() for i in range(3)]
    assert loss == pytest.approx(np.mean(per), abs=1e-12)


def test_correlation_loss_zero_vector_is_guarded():
    z = torch.zeros(15)
    assert correlation_loss(z, torch.ones(15)).item() == 1.0


def test_correlation_loss_length_mismatch():
    with pytest.raises(ValueError):
        correlation_loss(torch.ones(15), torch.ones(16))


def test_correlation_net_modes():
    cfg = get_preset("tiny")
    f_s = torch.randn(2, cfg.audio_channels[-1], 16, 16)
    video = torch.rand(2, 16, 3, 64, 64)
    deriv = CorrelationNet(cfg)
    a, v = deriv.embeddings(f_s, video)
    assert a.shape == v.shape == (2, 15)
    raw = CorrelationNet(cfg, derivative=False)
    a, v = raw.embeddings(f_s, video)
    assert a.shape == v.shape == (2, 16)
    loss = deriv(f_s, video)
    assert loss.dim() == 0 and 0 <= loss.item() <= 2


def test_precomputed_flow_gives_same_loss():
    cfg = get_preset("tiny")
    net = CorrelationNet(cfg).eval()
    f_s = torch.randn(2, cfg.audio_channels[-1], 16, 16)
    video = torch.rand(2, 16, 3, 64, 64)
    assert torch.equal(net(f_s, video), net(f_s, video, net.flow(video)))
