"""Alternating discriminator / generator training, ablation presets and checkpoints."""

from __future__ import annotations

import copy
import csv
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig, get_preset
from .correlation import CorrelationNet
from .data import ClipDataset
from .discriminator import (LAMBDA_P, LAMBDA_U, Discriminator, discriminator_loss, generator_adversarial_loss,
                            sample_mismatch)
from .flow import BrightnessConstancyFlow
from .generator import Generator
from .objectives import LossWeights, PerceptualEncoder, full_loss, load_perceptual, perceptual_loss, pixel_loss

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
DEFAULT_OPTIMIZER = {"name": "adam", "lr": 1e-4, "weight_decay": 5e-4}
DISC_VARIANTS = ("three_stream", "two_stream", "three_stream_frame_diff", "none")


@dataclass(frozen=True)
class AblationSpec:
    use_corr: bool = True
    corr_non_derivative: bool = False
    use_gen: bool = True
    use_pix: bool = True
    use_perc: bool = True
    disc_variant: str = "three_stream"

    def __post_init__(self):
        if self.disc_variant not in DISC_VARIANTS:
            raise ValueError(f"unknown discriminator variant {self.disc_variant!r}")
        if self.corr_non_derivative and not self.use_corr:
            raise ValueError("corr_non_derivative requires use_corr")
        if self.disc_variant == "none" and self.use_gen:
            raise ValueError("adversarial loss needs a discriminator")

    def checkmarks(self) -> dict:
        """The ablation-table row pattern for this configuration."""
        return {
            "l_corr": self.use_corr and not self.corr_non_derivative,
            "l_corr_non_derivative": self.corr_non_derivative,
            "l_gen": self.use_gen,
            "l_pix": self.use_pix,
            "l_perc": self.use_perc,
            "two_stream_d": self.disc_variant == "two_stream",
            "three_stream_d": self.disc_variant == "three_stream",
            "three_stream_d_frame_diff": self.disc_variant == "three_stream_frame_diff",
        }


_NO_CORR = dict(use_corr=False)
ABLATIONS = {
    "a": AblationSpec(use_pix=False, use_perc=False, **_NO_CORR),
    "b": AblationSpec(use_gen=False, use_perc=False, disc_variant="none", **_NO_CORR),
    "c": AblationSpec(use_perc=False, **_NO_CORR),
    "d": AblationSpec(**_NO_CORR),
    "e": AblationSpec(),
    "f": AblationSpec(corr_non_derivative=True),
    "g": AblationSpec(disc_variant="two_stream"),
    "h": AblationSpec(disc_variant="two_stream", **_NO_CORR),
    "i": AblationSpec(disc_variant="three_stream_frame_diff"),
}
CHECKMARK_ROWS = list(AblationSpec().checkmarks())


def ablation_matrix() -> list[list[str]]:
    """Rows of the ablation table: a header of method letters, then one row per component."""
    letters = sorted(ABLATIONS)
    rows = [["component"] + letters]
    for key in CHECKMARK_ROWS:
        rows.append([key] + ["x" if ABLATIONS[m].checkmarks()[key] else "" for m in letters])
    return rows


@dataclass
class TrainConfig:
    optimizer: dict = field(default_factory=lambda: dict(DEFAULT_OPTIMIZER))
    batch_size: int = 16
    steps: int = 1000
    loss_weights: LossWeights = LossWeights()
    ablation: AblationSpec = ABLATIONS["e"]
    seed: int = 0
    perceptual_ckpt: str | None = None
    perceptual_hash: str | None = None
    model: str | ModelConfig = "default"
    pixel_norm: str = "l1"
    lambda_p: float = LAMBDA_P
    lambda_u: float = LAMBDA_U
    checkpoint_every: int = 0
    log_every: int = 50
    deterministic: bool = True

    def __post_init__(self):
        self.optimizer = {**DEFAULT_OPTIMIZER, **self.optimizer}

    def model_config(self) -> ModelConfig:
        return self.model if isinstance(self.model, ModelConfig) else get_preset(self.model)

    def validate(self, require_perceptual_file: bool = True) -> None:
        if self.optimizer.get("lr", 0) <= 0:
            raise ValueError("learning rate must be positive")
        if self.optimizer.get("name", "adam") != "adam":
            raise ValueError(f"unsupported optimizer {self.optimizer.get('name')!r}")
        if self.batch_size < 1 or self.steps < 0:
            raise ValueError("batch_size must be positive and steps non-negative")
        if self.ablation.use_perc and require_perceptual_file:
            if not self.perceptual_ckpt or not Path(self.perceptual_ckpt).exists():
                raise ValueError("perceptual loss enabled but perceptual_ckpt is missing")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict() if isinstance(self.model, ModelConfig) else self.model
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "loss_weights" in d:
            d["loss_weights"] = LossWeights(**d["loss_weights"])
        if "ablation" in d:
            ab = d["ablation"]
            d["ablation"] = ABLATIONS[ab] if isinstance(ab, str) else AblationSpec(**ab)
        if isinstance(d.get("model"), dict):
            d["model"] = ModelConfig.from_dict(d["model"])
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


class NonFiniteLoss(FloatingPointError):
    pass


def _device() -> torch.device:
    return torch.device(os.environ.get("LIPSYNTH_DEVICE", "cpu"))


class Trainer:
    """Holds the networks and optimisers for one training run."""

    def __init__(self, cfg: TrainConfig, data: ClipDataset, perceptual: PerceptualEncoder | None = None,
                 dtype=torch.float32):
        cfg.validate(require_perceptual_file=perceptual is None)
        if len(data) == 0:
            raise ValueError("training corpus is empty")
        self.cfg = cfg
        self.ab = cfg.ablation
        self.device = _device()
        self.dtype = dtype
        if cfg.deterministic:
            torch.use_deterministic_algorithms(True)
        torch.manual_seed(cfg.seed)
        self.rng = np.random.default_rng(cfg.seed)
        self.data = data if data.lms.dtype == dtype else data.to(dtype)
        mcfg = cfg.model_config()
        self.model_cfg = mcfg
        self.generator = Generator(mcfg)
        flow = BrightnessConstancyFlow()
        self.corr = (CorrelationNet(mcfg, flow=flow, derivative=not self.ab.corr_non_derivative)
                     if self.ab.use_corr else None)
        self.disc = None if self.ab.disc_variant == "none" else Discriminator(mcfg, self.ab.disc_variant, flow)
        if self.ab.use_perc and perceptual is None:
            perceptual = load_perceptual(cfg.perceptual_ckpt, cfg.perceptual_hash)
        self.perceptual = perceptual if self.ab.use_perc else None
        for m in self.modules().values():
            m.to(device=self.device, dtype=dtype)
        opt = cfg.optimizer
        g_params = list(self.generator.parameters()) + (list(self.corr.parameters()) if self.corr else [])
        self.opt_g = torch.optim.Adam(g_params, lr=opt["lr"], weight_decay=opt["weight_decay"])
        self.opt_d = (torch.optim.Adam(self.disc.parameters(), lr=opt["lr"], weight_decay=opt["weight_decay"])
                      if self.disc else None)
        self.step = 0
        self._order: list[int] = []
        self._motion_cache: dict = {}

    def modules(self) -> dict:
        out = {"generator": self.generator}
        if self.corr is not None:
            out["corr"] = self.corr
        if self.disc is not None:
            out["disc"] = self.disc
        if self.perceptual is not None:
            out["perceptual"] = self.perceptual
        return out

    def next_batch(self) -> np.ndarray:
        n = len(self.data)
        bs = min(self.cfg.batch_size, n)
        if len(self._order) < bs:
            self._order += list(self.rng.permutation(n))
        idx, self._order = self._order[:bs], self._order[bs:]
        return np.array(idx)

    def make_batch(self, idx):
        d = self.data
        dev = self.device
        mismatch = sample_mismatch(idx, len(d), self.rng)
        return {
            "lms": d.lms[idx].to(dev),
            "video": d.video[idx].to(dev),
            "identity": d.identity_frames(idx, self.rng).to(dev),
            "mismatch": d.video[mismatch].to(dev),
            "idx": idx,
            "mismatch_idx": mismatch,
        }

    def real_motion(self, idx) -> torch.Tensor | None:
        """Discriminator motion input for corpus clips; cached because the corpus never changes."""
        if self.disc is None or self.disc.motion is None:
            return None
        missing = [int(i) for i in idx if int(i) not in self._motion_cache]
        if missing:
            with torch.no_grad():
                m = self.disc.motion_input(self.data.video[missing].to(self.device))
            self._motion_cache.update(zip(missing, m))
        return torch.stack([self._motion_cache[int(i)] for i in idx])

    def fake_motion(self, fake):
        """Flow of the generated clip, computed once and shared by the correlation net and discriminator."""
        flow = None
        if self.corr is not None and self.corr.derivative:
            flow = self.corr.flow(fake)
        motion = None
        if self.disc is not None and self.disc.motion is not None:
            same = flow is not None and self.disc.variant == "three_stream" and self.corr.flow is self.disc.flow
            motion = flow if same else self.disc.motion_input(fake)
        return flow, motion

    def generator_terms(self, batch, fake=None, f_s=None, flow=None, motion=None) -> dict:
        if fake is None:
            fake, f_s = self.generator(batch["lms"], batch["identity"], return_audio_feature=True)
            flow, motion = self.fake_motion(fake)
        zero = fake.new_zeros(())
        real = batch["video"]
        terms = {
            "corr": self.corr(f_s, fake, flow) if self.corr is not None else zero,
            "pix": pixel_loss(fake, real, self.cfg.pixel_norm) if self.ab.use_pix else zero,
            "perc": perceptual_loss(fake, real, self.perceptual) if self.perceptual is not None else zero,
            "gen": generator_adversarial_loss(self.disc(batch["lms"], fake, motion)) if self.ab.use_gen else zero,
        }
        return terms, fake

    def total(self, terms):
        return full_loss(terms["corr"], terms["pix"], terms["perc"], terms["gen"], self.cfg.loss_weights,
                         self.ab.use_corr, self.ab.use_pix, self.ab.use_perc, self.ab.use_gen)

    def discriminator_step(self, batch, fake=None, fake_motion=None) -> dict:
        if fake is None:
            with torch.no_grad():
                fake = self.generator(batch["lms"], batch["identity"])
        fake = fake.detach()
        fake_motion = fake_motion.detach() if fake_motion is not None else None
        d_real = self.disc(batch["lms"], batch["video"], self.real_motion(batch["idx"]))
        d_fake = self.disc(batch["lms"], fake, fake_motion)
        d_mis = self.disc(batch["lms"], batch["mismatch"], self.real_motion(batch["mismatch_idx"]))
        loss = discriminator_loss(d_real, d_fake, d_mis, self.cfg.lambda_p, self.cfg.lambda_u)
        if not torch.isfinite(loss):
            raise NonFiniteLoss(f"discriminator loss is {loss.item()} at step {self.step}")
        self.opt_d.zero_grad()
        loss.backward()
        self.opt_d.step()
        return {"dis": loss.item(), "d_real": d_real.mean().item(), "d_fake": d_fake.mean().item(),
                "d_mismatch": d_mis.mean().item()}

    def train_step(self, batch=None) -> dict:
        """One discriminator update then one generator update on the same generated clip.

        The clip is generated once; the discriminator sees it detached, and the
        generator loss is then evaluated with the freshly updated discriminator.
        """
        batch = batch if batch is not None else self.make_batch(self.next_batch())
        for m in self.modules().values():
            m.train()
        out = {}
        # BatchNorm statistics move during the forward passes, so a bad batch is rolled back entirely
        snapshot = self._snapshot()
        try:
            fake, f_s = self.generator(batch["lms"], batch["identity"], return_audio_feature=True)
            flow, motion = self.fake_motion(fake)
            if self.disc is not None:
                out.update(self.discriminator_step(batch, fake, motion))
            terms, _ = self.generator_terms(batch, fake, f_s, flow, motion)
            loss = self.total(terms)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"generator loss is {float(loss)} at step {self.step}")
        except NonFiniteLoss:
            self._restore(snapshot)
            raise
        self.opt_g.zero_grad()
        if self.disc is not None:
            self.disc.zero_grad(set_to_none=True)
        loss.backward()
        self.opt_g.step()
        out.update({k: float(v.detach()) for k, v in terms.items()})
        out["total"] = float(loss.detach())
        self.step += 1
        out["step"] = self.step
        return out

    def _snapshot(self) -> dict:
        nets = {k: m for k, m in self.modules().items() if k != "perceptual"}
        snap = {k: copy.deepcopy(m.state_dict()) for k, m in nets.items()}
        if self.opt_d is not None:
            snap["opt_d"] = copy.deepcopy(self.opt_d.state_dict())
        return snap

    def _restore(self, snap: dict) -> None:
        for k, m in self.modules().items():
            if k in snap:
                m.load_state_dict(snap[k])
        if "opt_d" in snap:
            self.opt_d.load_state_dict(snap["opt_d"])

    # checkpoints

    def state(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "step": self.step,
            "model_config": self.model_cfg.to_dict(),
            "train_config": self.cfg.to_dict(),
            "disc_variant": self.ab.disc_variant,
            "generator": self.generator.state_dict(),
            "corr": self.corr.state_dict() if self.corr else None,
            "disc": self.disc.state_dict() if self.disc else None,
            "opt_g": self.opt_g.state_dict(),
            "opt_d": self.opt_d.state_dict() if self.opt_d else None,
            "rng": self.rng.bit_generator.state,
            "order": [int(i) for i in self._order],
        }

    def save(self, path) -> None:
        tmp = Path(str(path) + ".tmp")
        torch.save(self.state(), tmp)
        os.replace(tmp, path)

    def load_state(self, ckpt: dict) -> None:
        _check_version(ckpt)
        self.generator.load_state_dict(ckpt["generator"])
        if self.corr is not None and ckpt.get("corr") is not None:
            self.corr.load_state_dict(ckpt["corr"])
        if self.disc is not None and ckpt.get("disc") is not None:
            self.disc.load_state_dict(ckpt["disc"])
        self.opt_g.load_state_dict(ckpt["opt_g"])
        if self.opt_d is not None and ckpt.get("opt_d") is not None:
            self.opt_d.load_state_dict(ckpt["opt_d"])
        self.rng.bit_generator.state = ckpt["rng"]
        self._order = list(ckpt.get("order", []))
        self.step = ckpt["step"]


def _check_version(ckpt: dict) -> None:
    if "version" not in ckpt:
        raise ValueError("checkpoint has no version field")
    if ckpt["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {ckpt['version']}")


def load_generator(path) -> Generator:
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    _check_version(ckpt)
    g = Generator(ModelConfig.from_dict(ckpt["model_config"]))
    g.load_state_dict(ckpt["generator"])
    g.eval()
    return g


def load_discriminator(path) -> Discriminator:
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    _check_version(ckpt)
    if ckpt.get("disc") is None:
        raise ValueError("checkpoint has no discriminator")
    d = Discriminator(ModelConfig.from_dict(ckpt["model_config"]), ckpt["disc_variant"])
    d.load_state_dict(ckpt["disc"])
    d.eval()
    return d


LOG_FIELDS = ["step", "total", "corr", "pix", "perc", "gen", "dis", "d_real", "d_fake", "d_mismatch"]


def run_training(cfg: TrainConfig, data: ClipDataset, out_dir=None, perceptual: PerceptualEncoder | None = None,
                 trainer: Trainer | None = None) -> tuple[Trainer, list]:
    """Train for ``cfg.steps`` steps; logs every term and checkpoints into ``out_dir`` if given.

    A non-finite loss stops training; the last checkpoint on disk is the last good state.
    """
    trainer = trainer or Trainer(cfg, data, perceptual)
    history = []
    log_fh = writer = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        cfg.save(out_dir / "train_config.json")
        log_path = out_dir / "train_log.tsv"
        new = not log_path.exists()
        log_fh = open(log_path, "a", newline="")
        writer = csv.DictWriter(log_fh, LOG_FIELDS, delimiter="\t", extrasaction="ignore")
        if new:
            writer.writeheader()
    try:
        while trainer.step < cfg.steps:
            try:
                row = trainer.train_step()
            except NonFiniteLoss:
                log.error("non-finite loss at step %d; keeping last checkpoint", trainer.step)
                raise
            history.append(row)
            if writer:
                writer.writerow({k: row.get(k, "") for k in LOG_FIELDS})
                log_fh.flush()
            if cfg.log_every and trainer.step % cfg.log_every == 0:
                log.info("step %d total %.4f pix %.4f", trainer.step, row["total"], row["pix"])
            if out_dir is not None and cfg.checkpoint_every and trainer.step % cfg.checkpoint_every == 0:
                trainer.save(out_dir / f"ckpt_{trainer.step:06d}.pt")
                trainer.save(out_dir / "last.pt")
        if out_dir is not None:
            trainer.save(out_dir / "last.pt")
    finally:
        if log_fh:
            log_fh.close()
    return trainer, history

