"""Differentiable optical flow between consecutive frames."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


def gaussian_kernel1d(sigma: float, radius: int | None = None, dtype=torch.float32) -> torch.Tensor:
    radius = int(math.ceil(3 * sigma)) if radius is None else radius
    x = torch.arange(-radius, radius + 1, dtype=dtype)
    k = torch.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _separable_blur(x: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    """Blur (N, 1, H, W) with a 1-D kernel along both axes, replicate padding."""
    r = kernel.numel() // 2
    kernel = kernel.to(dtype=x.dtype, device=x.device)
    x = F.pad(x, (r, r, 0, 0), mode="replicate")
    x = F.conv2d(x, kernel.view(1, 1, 1, -1))
    x = F.pad(x, (0, 0, r, r), mode="replicate")
    return F.conv2d(x, kernel.view(1, 1, -1, 1))


def _central_diff(x: torch.Tensor):
    p = F.pad(x, (1, 1, 1, 1), mode="replicate")
    gx = 0.5 * (p[..., 1:-1, 2:] - p[..., 1:-1, :-2])
    gy = 0.5 * (p[..., 2:, 1:-1] - p[..., :-2, 1:-1])
    return gx, gy


class FlowEstimator(nn.Module):
    """Maps a clip (B, T, C, H, W) to flow fields (B, T-1, 2, H, W); channel 0 is horizontal."""

    def forward(self, video: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError


class BrightnessConstancyFlow(FlowEstimator):
    """Single-scale local least-squares flow (Lucas-Kanade) on smoothed intensity gradients.

    Every operation is differentiable, and frames with no temporal change give
    exactly zero flow because the right-hand side of the normal equations vanishes.
    """

    def __init__(self, presmooth: float = 1.0, window: float = 2.0, reg: float = 1e-5):
        super().__init__()
        self.reg = reg
        self.register_buffer("pre_kernel", gaussian_kernel1d(presmooth), persistent=False)
        self.register_buffer("win_kernel", gaussian_kernel1d(window), persistent=False)

    def pair_flow(self, i0: torch.Tensor, i1: torch.Tensor) -> torch.Tensor:
        """Flow from i0 to i1, both (N, 1, H, W)."""
        i0 = _separable_blur(i0, self.pre_kernel)
        i1 = _separable_blur(i1, self.pre_kernel)
        gx, gy = _central_diff(0.5 * (i0 + i1))
        gt = i1 - i0
        stack = torch.cat([gx * gx, gx * gy, gy * gy, gx * gt, gy * gt], dim=1)
        n, c, h, w = stack.shape
        s = _separable_blur(stack.reshape(n * c, 1, h, w), self.win_kernel).reshape(n, c, h, w)
        sxx, sxy, syy, sxt, syt = (s[:, k : k + 1] for k in range(5))
        sxx = sxx + self.reg
        syy = syy + self.reg
        det = sxx * syy - sxy * sxy
        u = (-syy * sxt + sxy * syt) / det
        v = (sxy * sxt - sxx * syt) / det
        return torch.cat([u, v], dim=1)

    def forward(self, video: torch.Tensor) -> torch.Tensor:
        if video.dim() != 5 or video.shape[1] < 2:
            raise ValueError(f"expected (B, T>=2, C, H, W), got {tuple(video.shape)}")
        b, t, _, h, w = video.shape
        gray = video.mean(dim=2)
        i0 = gray[:, :-1].reshape(b * (t - 1), 1, h, w)
        i1 = gray[:, 1:].reshape(b * (t - 1), 1, h, w)
        return self.pair_flow(i0, i1).reshape(b, t - 1, 2, h, w)


class LearnedFlowAdapter(FlowEstimator):
    """Slot for a learned pairwise flow network ``net(frame0, frame1) -> (N, 2, H, W)``.

    No weights are bundled; supply a network (for example a fine-tuned FlowNet).
    """

    def __init__(self, net: nn.Module | None = None):
        super().__init__()
        self.net = net

    def forward(self, video: torch.Tensor) -> torch.Tensor:
        if self.net is None:
            raise RuntimeError("LearnedFlowAdapter has no network attached")
        b, t, c, h, w = video.shape
        f0 = video[:, :-1].reshape(-1, c, h, w)
        f1 = video[:, 1:].reshape(-1, c, h, w)
        return self.net(f0, f1).reshape(b, t - 1, 2, h, w)


def frame_difference(video: torch.Tensor) -> torch.Tensor:
    """Per-pixel L1 distance between adjacent frames, (B, T-1, C, H, W)."""
    return (video[:, 1:] - video[:, :-1]).abs()


FLOW_ESTIMATORS = {"brightness": BrightnessConstancyFlow, "learned": LearnedFlowAdapter}


def build_flow_estimator(name: str = "brightness", **kwargs) -> FlowEstimator:
    try:
        return FLOW_ESTIMATORS[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown flow estimator {name!r}; choose from {sorted(FLOW_ESTIMATORS)}") from None
