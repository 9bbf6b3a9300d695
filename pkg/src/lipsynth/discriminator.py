"""Conditional video discriminator with audio, frame and motion streams."""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .flow import BrightnessConstancyFlow, FlowEstimator, frame_difference
from .generator import ShapeError, conv_bn_relu, init_weights

EPS_P = 1e-7
LAMBDA_P = 0.5
LAMBDA_U = 0.5
VARIANTS = ("three_stream", "two_stream", "three_stream_frame_diff")


def _conv3d_lrelu(cin, cout, kernel, stride, padding):
    return nn.Sequential(nn.Conv3d(cin, cout, kernel, stride, padding, bias=False), nn.BatchNorm3d(cout),
                         nn.LeakyReLU(0.2, inplace=True))


class AudioStream(nn.Module):
    """(B, 64, 128) -> (B, fc) vector."""

    def __init__(self, channels=(16, 32, 32, 64), fc=256):
        super().__init__()
        c1, c2, c3, c4 = channels
        self.convs = nn.Sequential(
            nn.AvgPool2d((4, 1)),
            conv_bn_relu(1, c1, 3, 1, 1),
            conv_bn_relu(c1, c2, 3, 2, 1),
            conv_bn_relu(c2, c3, 3, 1, 1),
            conv_bn_relu(c3, c4, 3, 2, 1),
        )
        self.fc = nn.Linear(c4 * 4 * 32, fc)

    def forward(self, lms):
        return self.fc(self.convs(lms.unsqueeze(1)).flatten(1))


class VideoStream(nn.Module):
    """(B, 16, 3, 64, 64) -> (B, C, 1, 4, 4)."""

    def __init__(self, channels=(32, 64, 128, 128)):
        super().__init__()
        c1, c2, c3, c4 = channels
        self.net = nn.Sequential(
            _conv3d_lrelu(3, c1, 4, 2, 1),
            _conv3d_lrelu(c1, c2, 4, 2, 1),
            _conv3d_lrelu(c2, c3, 4, 2, 1),
            _conv3d_lrelu(c3, c4, 4, (1, 2, 2), 1),
        )

    def forward(self, video):
        return self.net(video.permute(0, 2, 1, 3, 4))


class MotionStream(nn.Module):
    """(B, 15, C, H, W) motion fields -> (B, C', 1, 4, 4); spatially pooled to 16x16 first."""

    def __init__(self, in_channels=2, channels=(16, 32, 64, 64)):
        super().__init__()
        c1, c2, c3, c4 = channels
        self.net = nn.Sequential(
            _conv3d_lrelu(in_channels, c1, 3, 2, 1),
            _conv3d_lrelu(c1, c2, 3, (2, 1, 1), 1),
            _conv3d_lrelu(c2, c3, 3, 2, 1),
            _conv3d_lrelu(c3, c4, 3, (2, 1, 1), 1),
        )

    def forward(self, motion):
        x = motion.permute(0, 2, 1, 3, 4)
        x = F.adaptive_avg_pool3d(x, (x.shape[2], 16, 16))
        return self.net(x)


class Discriminator(nn.Module):
    """D([s, v]) -> probability that the clip is real and matches the audio."""

    def __init__(self, cfg: ModelConfig = ModelConfig(), variant: str = "three_stream",
                 flow: FlowEstimator | None = None):
        super().__init__()
        if variant not in VARIANTS:
            raise ValueError(f"unknown discriminator variant {variant!r}; choose from {VARIANTS}")
        self.variant = variant
        self.audio = AudioStream(cfg.disc_audio_channels, cfg.disc_fc)
        self.video = VideoStream(cfg.disc_video_channels)
        width = cfg.disc_fc + cfg.disc_video_channels[-1]
        self.motion = None
        if variant != "two_stream":
            self.flow = flow if flow is not None else BrightnessConstancyFlow()
            self.motion = MotionStream(3 if variant.endswith("frame_diff") else 2, cfg.disc_flow_channels)
            width += cfg.disc_flow_channels[-1]
        self.head = nn.Sequential(
            _conv3d_lrelu(width, cfg.disc_head_channels, (1, 3, 3), 1, (0, 1, 1)),
            nn.Conv3d(cfg.disc_head_channels, 1, (1, 4, 4)),
        )
        init_weights(self)

    def motion_input(self, video):
        if self.variant == "three_stream_frame_diff":
            return frame_difference(video)
        return self.flow(video)

    def logits(self, lms, video, motion=None):
        if video.dim() != 5 or video.shape[1:] != (16, 3, 64, 64):
            raise ShapeError(f"discriminator expects video (B, 16, 3, 64, 64), got {tuple(video.shape)}")
        if lms.shape[0] != video.shape[0]:
            raise ShapeError("audio and video batch sizes differ")
        a = self.audio(lms)[:, :, None, None, None].expand(-1, -1, 1, 4, 4)
        feats = [a, self.video(video)]
        if self.motion is not None:
            feats.append(self.motion(self.motion_input(video) if motion is None else motion))
        return self.head(torch.cat(feats, dim=1)).flatten()

    def forward(self, lms, video, motion=None):
        return torch.sigmoid(self.logits(lms, video, motion))


def _clamp(p, eps=EPS_P):
    return p.clamp(eps, 1.0 - eps)


def discriminator_loss(d_real, d_fake, d_mismatch, lambda_p=LAMBDA_P, lambda_u=LAMBDA_U, eps=EPS_P):
    """-log D(real) - lambda_p log(1 - D(fake)) - lambda_u log(1 - D(mismatch)), batch mean."""
    loss = (
        -torch.log(_clamp(d_real, eps))
        - lambda_p * torch.log(1.0 - _clamp(d_fake, eps))
        - lambda_u * torch.log(1.0 - _clamp(d_mismatch, eps))
    )
    return loss.mean()


def generator_adversarial_loss(d_fake, eps=EPS_P):
    return (-torch.log(_clamp(d_fake, eps))).mean()


def sample_mismatch(batch, corpus_size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw k uniformly from {0..corpus_size-1} minus {j} for each j in ``batch``."""
    if corpus_size < 2:
        raise ValueError("mismatch sampling needs a corpus of at least 2 videos")
    batch = np.asarray(batch, dtype=np.int64)
    shift = rng.integers(1, corpus_size, size=batch.shape)
    return (batch + shift) % corpus_size


def chance_level_loss(lambda_p=LAMBDA_P, lambda_u=LAMBDA_U) -> float:
    return (1.0 + lambda_p + lambda_u) * math.log(2.0)
