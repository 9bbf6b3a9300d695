"""Model width configuration and named presets.

Only spatial shapes are fixed by the architecture; channel widths live here so
that checkpoints can record exactly what was built.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path


@dataclass(frozen=True)
class ModelConfig:
    audio_channels: tuple = (32, 64, 64, 64)
    identity_channels: tuple = (32, 64, 64)
    n_res_blocks: int = 9
    upsample_channels: tuple = (64, 32)
    phi_s_channels: tuple = (16, 16, 16)
    phi_v_channels: tuple = (16, 16, 16)
    phi_v_dilations: tuple = (1, 1, 2, 2)
    disc_audio_channels: tuple = (16, 32, 32, 64)
    disc_fc: int = 256
    disc_video_channels: tuple = (32, 64, 128, 128)
    disc_flow_channels: tuple = (16, 32, 64, 64)
    disc_head_channels: int = 128
    ae_channels: tuple = (16, 32, 64)
    ae_res_blocks: int = 6

    @property
    def fused_channels(self) -> int:
        return self.audio_channels[-1] + self.identity_channels[-1]

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


PRESETS = {
    "default": ModelConfig(),
    # the widest layout: 256-channel residual decoder
    "wide": ModelConfig(audio_channels=(32, 64, 64, 128), identity_channels=(32, 64, 128),
                        upsample_channels=(128, 64)),
    # small enough to overfit a handful of clips on one CPU core
    "desk": ModelConfig(audio_channels=(8, 16, 16, 16), identity_channels=(8, 16, 16),
                        upsample_channels=(16, 4), phi_s_channels=(8, 8, 8), phi_v_channels=(8, 8, 8),
                        disc_audio_channels=(8, 16, 16, 16), disc_fc=64,
                        disc_video_channels=(8, 16, 32, 32), disc_flow_channels=(8, 16, 16, 16),
                        disc_head_channels=32, ae_channels=(8, 16, 32)),
    # under 10^4 parameters per network, for finite-difference gradient checks
    "tiny": ModelConfig(audio_channels=(2, 2, 2, 2), identity_channels=(2, 2, 2), n_res_blocks=9,
                        upsample_channels=(2, 2), phi_s_channels=(2, 2, 2), phi_v_channels=(2, 2, 2),
                        disc_audio_channels=(2, 2, 2, 2), disc_fc=8,
                        disc_video_channels=(2, 2, 2, 2), disc_flow_channels=(2, 2, 2, 2),
                        disc_head_channels=4, ae_channels=(2, 2, 2), ae_res_blocks=6),
}


def get_preset(name: str, **overrides) -> ModelConfig:
    try:
        cfg = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown model preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(cfg, **overrides) if overrides else cfg
