"""Generation path: audio encoder, identity encoder, fusion and 3-D residual decoder."""

from __future__ import annotations

import torch
import torch.nn as nn

from .config import ModelConfig


class ShapeError(ValueError):
    pass


def conv_bn_relu(cin, cout, kernel, stride=1, padding=0, dim=2, **kw):
    Conv = nn.Conv2d if dim == 2 else nn.Conv3d
    BN = nn.BatchNorm2d if dim == 2 else nn.BatchNorm3d
    return nn.Sequential(Conv(cin, cout, kernel, stride, padding, bias=False, **kw), BN(cout), nn.ReLU(inplace=True))


def init_weights(module: nn.Module) -> None:
    """He initialisation for every convolution and linear layer; zero biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Conv3d, nn.ConvTranspose3d, nn.Linear)):
            nn.init.kaiming_normal_(m.weight, nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class AudioEncoder(nn.Module):
    """(B, 64, 128) log-mel -> (B, C, 16, 16) audio feature.

    The time axis is average-pooled by 4 up front so the 64 spectrogram frames
    line up with 16 video frames before the convolution stack.
    """

    def __init__(self, channels=(32, 64, 64, 64)):
        super().__init__()
        c1, c2, c3, c4 = channels
        self.net = nn.Sequential(
            nn.AvgPool2d((4, 1)),
            conv_bn_relu(1, c1, 3, (1, 1), 1),
            conv_bn_relu(c1, c2, 3, (1, 2), 1),
            conv_bn_relu(c2, c3, 3, (1, 1), 1),
            conv_bn_relu(c3, c4, 3, (1, 2), 1),
            nn.MaxPool2d((1, 2), (1, 2)),
        )
        self.out_channels = c4

    def forward(self, lms):
        if lms.dim() != 3 or lms.shape[-2:] != (64, 128):
            raise ShapeError(f"audio encoder expects (B, 64, 128), got {tuple(lms.shape)}")
        return self.net(lms.unsqueeze(1))


class IdentityEncoder(nn.Module):
    """(B, 3, 64, 64) lip image -> (B, C, 16, 16)."""

    def __init__(self, channels=(32, 64, 64)):
        super().__init__()
        c1, c2, c3 = channels
        self.net = nn.Sequential(
            conv_bn_relu(3, c1, 7, 1, 3),
            conv_bn_relu(c1, c2, 3, 2, 1),
            conv_bn_relu(c2, c3, 3, 2, 1),
        )
        self.out_channels = c3

    def forward(self, image):
        if image.dim() != 4 or image.shape[1:] != (3, 64, 64):
            raise ShapeError(f"identity encoder expects (B, 3, 64, 64), got {tuple(image.shape)}")
        return self.net(image)


def fuse(f_s: torch.Tensor, f_p: torch.Tensor) -> torch.Tensor:
    """Duplicate-and-concatenate fusion.

    f_s (B, Ca, T, F) is repeated along a new row axis so every row at time t is
    f_s[t]; f_p (B, Cp, H, W) is repeated T times. Result: (B, Ca + Cp, T, H, W).
    """
    b, ca, t, f = f_s.shape
    _, cp, h, w = f_p.shape
    if not (f == h == w):
        raise ShapeError(f"fusion needs F == H == W, got F={f}, H={h}, W={w}")
    audio = f_s.unsqueeze(3).expand(b, ca, t, h, f)
    image = f_p.unsqueeze(2).expand(b, cp, t, h, w)
    return torch.cat([audio, image], dim=1)


class ResBlock3d(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.branch = nn.Sequential(
            nn.Conv3d(channels, channels, (1, 3, 3), 1, (0, 1, 1), bias=False),
            nn.BatchNorm3d(channels),
            nn.ReLU(inplace=True),
            nn.Conv3d(channels, channels, (1, 3, 3), 1, (0, 1, 1), bias=False),
            nn.BatchNorm3d(channels),
        )

    def zero_init(self):
        nn.init.zeros_(self.branch[-1].weight)

    def forward(self, x):
        return x + self.branch(x)


class Decoder(nn.Module):
    """(B, C, 16, 16, 16) fused feature -> (B, 16, 3, 64, 64) clip in [-1, 1]."""

    def __init__(self, in_channels, n_res_blocks=9, upsample_channels=(64, 32)):
        super().__init__()
        self.res_blocks = nn.Sequential(*[ResBlock3d(in_channels) for _ in range(n_res_blocks)])
        ups = []
        cin = in_channels
        for cout in upsample_channels:
            ups += [
                nn.ConvTranspose3d(cin, cout, 3, (1, 2, 2), 1, output_padding=(0, 1, 1), bias=False),
                nn.BatchNorm3d(cout),
                nn.ReLU(inplace=True),
            ]
            cin = cout
        self.upsample = nn.Sequential(*ups)
        self.to_rgb = nn.Conv3d(cin, 3, 7, 1, 3)

    def forward(self, f_v):
        if f_v.dim() != 5 or f_v.shape[2:] != (16, 16, 16):
            raise ShapeError(f"decoder expects (B, C, 16, 16, 16), got {tuple(f_v.shape)}")
        x = self.upsample(self.res_blocks(f_v))
        return torch.tanh(self.to_rgb(x)).permute(0, 2, 1, 3, 4)


class Generator(nn.Module):
    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        self.audio_encoder = AudioEncoder(cfg.audio_channels)
        self.identity_encoder = IdentityEncoder(cfg.identity_channels)
        self.decoder = Decoder(cfg.fused_channels, cfg.n_res_blocks, cfg.upsample_channels)
        init_weights(self)

    def forward(self, lms, identity, return_audio_feature: bool = False):
        f_s = self.audio_encoder(lms)
        f_p = self.identity_encoder(identity)
        video = self.decoder(fuse(f_s, f_p))
        return (video, f_s) if return_audio_feature else video

    @torch.no_grad()
    def generate(self, lms, identity):
        """Eval-mode generation of a single sample or a batch."""
        was_training = self.training
        self.eval()
        single = lms.dim() == 2
        if single:
            lms, identity = lms.unsqueeze(0), identity.unsqueeze(0)
        out = self(lms, identity)
        self.train(was_training)
        return out[0] if single else out


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
