"""Reconstruction, perceptual and combined generator objectives."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn as nn

from .config import ModelConfig
from .generator import init_weights

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.5  # pixel
    lambda2: float = 1.0  # perceptual
    lambda3: float = 1.0  # adversarial

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be non-negative")


def pixel_loss(fake: torch.Tensor, real: torch.Tensor, norm: str = "l1") -> torch.Tensor:
    if fake.shape != real.shape:
        raise ValueError(f"shape mismatch {tuple(fake.shape)} vs {tuple(real.shape)}")
    diff = real - fake
    if norm == "l1":
        return diff.abs().mean()
    if norm == "l2":
        return diff.pow(2).mean()
    raise ValueError(f"unknown pixel norm {norm!r}")


class _Res2d(nn.Module):
    def __init__(self, c):
        super().__init__()
        self.branch = nn.Sequential(
            nn.Conv2d(c, c, 3, 1, 1, bias=False), nn.BatchNorm2d(c), nn.ReLU(inplace=True),
            nn.Conv2d(c, c, 3, 1, 1, bias=False), nn.BatchNorm2d(c),
        )

    def forward(self, x):
        return x + self.branch(x)


class PerceptualAutoencoder(nn.Module):
    """Frame autoencoder: three stride-2 convolutions then residual blocks; the decoder mirrors it.

    Clips (B, T, 3, 64, 64) are processed frame by frame.
    """

    def __init__(self, channels=(16, 32, 64), n_res=6):
        super().__init__()
        enc, cin = [], 3
        for c in channels:
            enc += [nn.Conv2d(cin, c, 4, 2, 1, bias=False), nn.BatchNorm2d(c), nn.ReLU(inplace=True)]
            cin = c
        enc += [_Res2d(cin) for _ in range(n_res)]
        self.encoder = nn.Sequential(*enc)
        dec = [_Res2d(cin) for _ in range(n_res)]
        for c in list(channels[-2::-1]) + [None]:
            if c is None:
                dec += [nn.ConvTranspose2d(cin, 3, 4, 2, 1), nn.Tanh()]
            else:
                dec += [nn.ConvTranspose2d(cin, c, 4, 2, 1, bias=False), nn.BatchNorm2d(c), nn.ReLU(inplace=True)]
                cin = c
        self.decoder = nn.Sequential(*dec)
        self.channels = tuple(channels)
        init_weights(self)

    @property
    def feature_shape(self) -> tuple:
        return (self.channels[-1], 8, 8)

    def encode(self, clip):
        b, t = clip.shape[:2]
        z = self.encoder(clip.reshape(b * t, *clip.shape[2:]))
        return z.reshape(b, t, *z.shape[1:])

    def forward(self, clip):
        b, t = clip.shape[:2]
        z = self.encoder(clip.reshape(b * t, *clip.shape[2:]))
        return self.decoder(z).reshape(clip.shape)


class PerceptualEncoder(nn.Module):
    """Frozen encoder half of a trained autoencoder."""

    def __init__(self, autoencoder: PerceptualAutoencoder):
        super().__init__()
        self.encoder = autoencoder.encoder
        self.feature_shape = autoencoder.feature_shape
        self.freeze()

    def freeze(self):
        self.frozen = True
        self.encoder.eval()
        for p in self.encoder.parameters():
            p.requires_grad_(False)

    def train(self, mode: bool = True):
        # stays in eval mode so batch statistics never change the features
        super().train(mode)
        if getattr(self, "frozen", False):
            self.encoder.eval()
        return self

    def forward(self, clip):
        b, t = clip.shape[:2]
        z = self.encoder(clip.reshape(b * t, *clip.shape[2:]))
        return z.reshape(b, t, *z.shape[1:])


def perceptual_loss(fake, real, phi: PerceptualEncoder) -> torch.Tensor:
    """Mean squared distance between encoder features of the real and generated clip."""
    return (phi(real) - phi(fake)).pow(2).mean()


def full_loss(corr, pix, perc, gen, weights: LossWeights = LossWeights(), use_corr=True, use_pix=True,
              use_perc=True, use_gen=True):
    """l_corr + lambda1 l_pix + lambda2 l_perc + lambda3 l_gen with disabled terms dropped."""
    total = 0.0
    if use_corr:
        total = total + corr
    if use_pix:
        total = total + weights.lambda1 * pix
    if use_perc:
        total = total + weights.lambda2 * perc
    if use_gen:
        total = total + weights.lambda3 * gen
    return total


def train_perceptual_autoencoder(clips: torch.Tensor, cfg: ModelConfig = ModelConfig(), steps: int = 500,
                                 batch_size: int = 8, lr: float = 1e-3, seed: int = 0,
                                 log_every: int = 100) -> tuple[PerceptualAutoencoder, list]:
    """Train the clip autoencoder from scratch with an L1 reconstruction loss.

    ``clips`` is (N, T, 3, 64, 64) in [-1, 1]. Returns the model and its loss history.
    """
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    model = PerceptualAutoencoder(cfg.ae_channels, cfg.ae_res_blocks)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    n = clips.shape[0]
    history = []
    model.train()
    for step in range(steps):
        idx = torch.randint(0, n, (min(batch_size, n),), generator=gen)
        batch = clips[idx]
        loss = (model(batch) - batch).abs().mean()
        if not math.isfinite(loss.item()):
            raise FloatingPointError(
                f"autoencoder loss diverged at step {step} (last finite {history[-1] if history else 'none'})"
            )
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append(loss.item())
        if log_every and step % log_every == 0:
            log.info("autoencoder step %d loss %.5f", step, loss.item())
    model.eval()
    return model, history


@torch.no_grad()
def reconstruction_error(model: PerceptualAutoencoder, clips: torch.Tensor) -> float:
    model.eval()
    return float((model(clips) - clips).abs().mean())


def save_perceptual(path, model: PerceptualAutoencoder, cfg: ModelConfig) -> str:
    """Write the autoencoder checkpoint; returns its SHA-256 so configs can pin it."""
    torch.save({"version": 1, "kind": "perceptual_autoencoder", "model_config": cfg.to_dict(),
                "feature_shape": list(model.feature_shape), "state_dict": model.state_dict()}, path)
    return file_hash(path)


def load_perceptual(path, expected_hash: str | None = None) -> PerceptualEncoder:
    if expected_hash and file_hash(path) != expected_hash:
        raise ValueError(f"perceptual checkpoint {path} does not match recorded hash")
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if ckpt.get("version") != 1 or ckpt.get("kind") != "perceptual_autoencoder":
        raise ValueError(f"{path} is not a perceptual autoencoder checkpoint")
    cfg = ModelConfig.from_dict(ckpt["model_config"])
    model = PerceptualAutoencoder(cfg.ae_channels, cfg.ae_res_blocks)
    model.load_state_dict(ckpt["state_dict"])
    return PerceptualEncoder(model)


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
