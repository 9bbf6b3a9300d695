"""Audio-visual derivative correlation: the two encoders and the cosine loss."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .audio import temporal_derivative
from .config import ModelConfig
from .flow import BrightnessConstancyFlow, FlowEstimator
from .generator import ShapeError, init_weights

EPS = 1e-8


class PhiS(nn.Module):
    """Audio-derivative encoder: (B, C, T', 16) -> (B, T').

    Four 3x3 convolutions with stride (1, 2) collapse frequency 16 -> 1 and keep
    the temporal length; the last layer is linear with one output channel.
    """

    def __init__(self, in_channels, channels=(16, 16, 16)):
        super().__init__()
        layers = []
        cin = in_channels
        for c in channels:
            layers += [nn.Conv2d(cin, c, 3, (1, 2), 1, bias=False), nn.BatchNorm2d(c), nn.ReLU(inplace=True)]
            cin = c
        layers.append(nn.Conv2d(cin, 1, 3, (1, 2), 1))
        self.net = nn.Sequential(*layers)

    def forward(self, d):
        if d.dim() != 4 or d.shape[-1] != 16:
            raise ShapeError(f"phi_s expects (B, C, T, 16), got {tuple(d.shape)}")
        out = self.net(d)
        return out.flatten(1)


class PhiV(nn.Module):
    """Motion encoder: (B, T', C, H, W) -> (B, T').

    Input is average-pooled to 16x16 spatially; four 3x3x3 convolutions with
    stride (1, 2, 2) collapse space to 1x1. Temporal dilations widen the
    temporal receptive field without changing the length.
    """

    def __init__(self, in_channels=2, channels=(16, 16, 16), dilations=(1, 1, 2, 2)):
        super().__init__()
        layers = []
        cin = in_channels
        widths = list(channels) + [1]
        for i, (c, d) in enumerate(zip(widths, dilations)):
            last = i == len(widths) - 1
            conv = nn.Conv3d(cin, c, 3, (1, 2, 2), (d, 1, 1), dilation=(d, 1, 1), bias=last)
            layers += [conv] if last else [conv, nn.BatchNorm3d(c), nn.ReLU(inplace=True)]
            cin = c
        self.net = nn.Sequential(*layers)

    def forward(self, motion):
        if motion.dim() != 5:
            raise ShapeError(f"phi_v expects (B, T, C, H, W), got {tuple(motion.shape)}")
        x = motion.permute(0, 2, 1, 3, 4)
        x = F.adaptive_avg_pool3d(x, (x.shape[2], 16, 16))
        return self.net(x).flatten(1)


def temporal_receptive_field(module: nn.Module, time_axis: int = 0) -> int:
    """Receptive field along the first spatial axis, from the kernel/stride/dilation chain."""
    rf, jump = 1, 1
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Conv3d, nn.MaxPool2d, nn.AvgPool2d)):
            k = _pick(m.kernel_size, time_axis)
            s = _pick(m.stride, time_axis)
            d = _pick(getattr(m, "dilation", 1), time_axis)
            rf += (k - 1) * d * jump
            jump *= s
    return rf


def _pick(v, axis):
    return v[axis] if isinstance(v, tuple) else v


def correlation_loss(a: torch.Tensor, b: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """1 - cos(a, b) with eps in the denominator, averaged over the batch.

    Accepts (N,) vectors or (B, N) batches.
    """
    if a.shape != b.shape:
        raise ValueError(f"embedding shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.dim() == 1:
        a, b = a.unsqueeze(0), b.unsqueeze(0)
    cos = (a * b).sum(-1) / (a.norm(dim=-1) * b.norm(dim=-1) + eps)
    return (1.0 - cos).mean()


class CorrelationNet(nn.Module):
    """Correlation branch of the full model.

    ``derivative=True`` correlates audio-feature differences with optical flow;
    ``derivative=False`` is the ablation feeding raw audio features and frames.
    """

    def __init__(self, cfg: ModelConfig = ModelConfig(), flow: FlowEstimator | None = None,
                 derivative: bool = True):
        super().__init__()
        self.derivative = derivative
        self.flow = flow if flow is not None else BrightnessConstancyFlow()
        self.phi_s = PhiS(cfg.audio_channels[-1], cfg.phi_s_channels)
        self.phi_v = PhiV(2 if derivative else 3, cfg.phi_v_channels, cfg.phi_v_dilations)
        init_weights(self.phi_s)
        init_weights(self.phi_v)

    def embeddings(self, f_s, video, flow=None):
        """f_s (B, C, T, F), video (B, T, 3, H, W) -> two (B, T-1) or (B, T) embeddings.

        ``flow`` may carry an already computed flow of ``video`` to avoid recomputing it.
        """
        if self.derivative:
            a = self.phi_s(temporal_derivative(f_s))
            v = self.phi_v(self.flow(video) if flow is None else flow)
        else:
            a = self.phi_s(f_s)
            v = self.phi_v(video)
        return a, v

    def forward(self, f_s, video, flow=None):
        a, v = self.embeddings(f_s, video, flow)
        return correlation_loss(a, v)
