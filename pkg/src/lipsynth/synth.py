"""Talking-ellipse corpus: synthetic lips whose aperture follows a delayed audio envelope.

Each video shows an elliptical lip ring around a dark mouth opening. The mouth's
vertical semi-axis tracks the audio envelope ``delay`` frames late, so every
quantity needed to check losses, metrics and the delay analysis is known in
closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import Waveform
from .vision import CLIP_SIZE, write_clip

FPS = 25.0
SAMPLE_RATE = 51200
CARRIER_HZ = 440.0
ENV_MIN, ENV_MAX = 0.05, 0.7
APERTURE_MIN, APERTURE_MAX = 2.0, 24.0
MAX_DELAY = 7
N_OUTER, N_INNER = 12, 8
OUTER_ANGLES = 2 * np.pi * np.arange(N_OUTER) / N_OUTER
INNER_ANGLES = 2 * np.pi * (np.arange(N_INNER) + 0.5) / N_INNER


def aperture_map(envelope):
    """Affine map from envelope level to mouth opening height in pixels."""
    e = np.asarray(envelope, dtype=np.float64)
    return APERTURE_MIN + (APERTURE_MAX - APERTURE_MIN) * (e - ENV_MIN) / (ENV_MAX - ENV_MIN)


@dataclass
class Identity:
    skin: tuple = (0.85, 0.65, 0.55)
    lip: tuple = (0.70, 0.25, 0.30)
    mouth: tuple = (0.15, 0.05, 0.08)
    half_width: float = 18.0
    lip_thickness: float = 4.0
    center: tuple = (32.0, 32.0)

    @classmethod
    def random(cls, rng: np.random.Generator) -> "Identity":
        return cls(
            skin=tuple(np.round(rng.uniform([0.7, 0.5, 0.4], [0.95, 0.8, 0.7]), 4)),
            lip=tuple(np.round(rng.uniform([0.55, 0.15, 0.2], [0.8, 0.35, 0.4]), 4)),
            mouth=tuple(np.round(rng.uniform([0.05, 0.0, 0.0], [0.2, 0.1, 0.12]), 4)),
            half_width=float(np.round(rng.uniform(15.0, 20.0), 3)),
            lip_thickness=float(np.round(rng.uniform(3.0, 5.0), 3)),
            center=tuple(np.round(rng.uniform(30.0, 34.0, size=2), 3)),
        )

    def palette(self) -> np.ndarray:
        return np.array([self.skin, self.lip, self.mouth], dtype=np.float64)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "Identity":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


@dataclass
class SynthSpec:
    n_videos: int = 16
    video_len: int = 75
    delay: int | None = None
    envelope_seed: int = 0
    identity_params: Identity | None = None
    noise_level: float = 0.0
    envelope_kind: str = "syllables"
    max_delay: int = MAX_DELAY

    def validate(self) -> None:
        if self.n_videos < 1:
            raise ValueError("n_videos must be positive")
        top = self.max_delay if self.delay is None else self.delay
        if not 0 <= top <= MAX_DELAY:
            raise ValueError(f"delay must lie in [0, {MAX_DELAY}], got {top}")
        if self.video_len < 16 + top:
            raise ValueError(f"video_len {self.video_len} < 16 + max delay {top}")
        if not 0 <= self.noise_level <= 1:
            raise ValueError("noise_level must be a fraction in [0, 1]")
        if self.envelope_kind not in ("syllables", "constant"):
            raise ValueError(f"unknown envelope kind {self.envelope_kind!r}")


@dataclass
class SynthSample:
    waveform: Waveform
    frames: np.ndarray  # (T, 3, 64, 64) in [0, 1]
    landmarks: np.ndarray  # (T, 20, 2)
    true_delay: int
    envelope: np.ndarray  # per-frame audio RMS, (T,)
    aperture: np.ndarray  # per-frame mouth height in pixels, (T,)
    identity: Identity = field(default_factory=Identity)


def syllable_envelope(n_frames: int, rng: np.random.Generator) -> np.ndarray:
    """Piecewise-constant levels held for 2 to 6 frames, consecutive levels well separated."""
    env = np.empty(n_frames)
    t = 0
    level = rng.uniform(ENV_MIN, ENV_MAX)
    while t < n_frames:
        dur = int(rng.integers(2, 7))
        env[t : t + dur] = level
        t += dur
        nxt = rng.uniform(ENV_MIN, ENV_MAX)
        while abs(nxt - level) < 0.15:
            nxt = rng.uniform(ENV_MIN, ENV_MAX)
        level = nxt
    return env


def modulated_tone(envelope, sample_rate: int = SAMPLE_RATE, fps: float = FPS, ramp: int = 256) -> np.ndarray:
    """440 Hz sine whose per-frame RMS equals ``envelope``; levels cross-fade linearly at frame boundaries."""
    env = np.asarray(envelope, dtype=np.float64)
    spf = int(round(sample_rate / fps))
    n = len(env) * spf
    knots_x, knots_y = [0.0], [env[0]]
    for t in range(1, len(env)):
        b = t * spf
        knots_x += [b - ramp / 2, b + ramp / 2]
        knots_y += [env[t - 1], env[t]]
    knots_x.append(n - 1.0)
    knots_y.append(env[-1])
    amp = np.interp(np.arange(n), knots_x, knots_y)
    return np.sqrt(2.0) * amp * np.sin(2 * np.pi * CARRIER_HZ * np.arange(n) / sample_rate)


def _ellipse_coverage(xx, yy, cx, cy, a, b):
    """Approximate per-pixel coverage of an ellipse using a first-order signed distance."""
    dx, dy = (xx - cx) / a, (yy - cy) / b
    rho = np.sqrt(dx**2 + dy**2)
    grad = np.sqrt((dx / a) ** 2 + (dy / b) ** 2) / np.maximum(rho, 1e-9)
    dist = (rho - 1.0) / np.maximum(grad, 1e-9)
    return np.clip(0.5 - dist, 0.0, 1.0)


def render_frame(identity: Identity, aperture: float, size: int = CLIP_SIZE) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    cx, cy = identity.center
    a = identity.half_width
    b = aperture / 2.0
    th = identity.lip_thickness
    outer = _ellipse_coverage(xs, ys, cx, cy, a + th, b + th)
    inner = _ellipse_coverage(xs, ys, cx, cy, a, b)
    skin, lip, mouth = (np.asarray(c)[:, None, None] for c in (identity.skin, identity.lip, identity.mouth))
    img = skin * (1 - outer) + lip * (outer - inner) + mouth * inner
    return img


def ellipse_landmarks(identity: Identity, aperture) -> np.ndarray:
    """12 outer-lip and 8 inner-lip points at fixed angles; shape (T, 20, 2)."""
    aperture = np.atleast_1d(np.asarray(aperture, dtype=np.float64))
    cx, cy = identity.center
    a, th = identity.half_width, identity.lip_thickness
    b = aperture[:, None] / 2.0
    outer = np.stack([cx + (a + th) * np.cos(OUTER_ANGLES) + 0 * b, cy + (b + th) * np.sin(OUTER_ANGLES)], -1)
    inner = np.stack([cx + a * np.cos(INNER_ANGLES) + 0 * b, cy + b * np.sin(INNER_ANGLES)], -1)
    return np.concatenate([outer, inner], axis=1)


def make_sample(envelope, delay: int, identity: Identity, noise_level: float = 0.0,
                rng: np.random.Generator | None = None, pre_roll=None) -> SynthSample:
    """Render one sample from an explicit per-frame envelope.

    ``pre_roll`` supplies the ``delay`` envelope values preceding frame 0 that the
    lips are still reacting to; defaults to repeating ``envelope[0]``.
    """
    env = np.asarray(envelope, dtype=np.float64)
    if pre_roll is None:
        pre_roll = np.full(delay, env[0])
    full = np.concatenate([np.asarray(pre_roll, dtype=np.float64)[:delay], env])
    aperture = aperture_map(full[: len(env)])
    frames = np.stack([render_frame(identity, ap) for ap in aperture])
    audio = modulated_tone(env)
    if noise_level > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        audio = audio + rng.normal(0.0, noise_level, size=audio.shape)
        frames = np.clip(frames + rng.normal(0.0, noise_level, size=frames.shape), 0.0, 1.0)
    audio = np.clip(audio, -1.0, 1.0)
    return SynthSample(
        waveform=Waveform(audio, SAMPLE_RATE),
        frames=frames.astype(np.float32),
        landmarks=ellipse_landmarks(identity, aperture),
        true_delay=int(delay),
        envelope=env,
        aperture=aperture,
        identity=identity,
    )


def generate_one(spec: SynthSpec, index: int) -> SynthSample:
    rng = np.random.default_rng([spec.envelope_seed, index])
    delay = int(rng.integers(0, spec.max_delay + 1)) if spec.delay is None else int(spec.delay)
    identity = spec.identity_params or Identity.random(rng)
    if spec.envelope_kind == "constant":
        full = np.full(spec.video_len + delay, rng.uniform(ENV_MIN, ENV_MAX))
    else:
        full = syllable_envelope(spec.video_len + delay, rng)
    return make_sample(full[delay:], delay, identity, spec.noise_level, rng, pre_roll=full[:delay])


def generate(spec: SynthSpec) -> list[SynthSample]:
    """Deterministic corpus; sample ``i`` depends only on ``(envelope_seed, i)``."""
    spec.validate()
    return [generate_one(spec, i) for i in range(spec.n_videos)]


class EllipseLandmarkDetector:
    """Recover lip landmarks from talking-ellipse frames given the identity's palette.

    Pixels are unmixed into skin / lip / mouth fractions by constrained least
    squares; the ellipse parameters follow from the first and second moments of
    the mouth and lip-plus-mouth coverage maps. Works on rendered and generated
    frames alike, which is what the landmark-distance metric needs.
    """

    def __init__(self, identity: Identity):
        self.identity = identity
        p = identity.palette()  # rows: skin, lip, mouth
        # solve pixel = skin + A @ [alpha_lip, alpha_mouth]
        self._basis = np.stack([p[1] - p[0], p[2] - p[0]], axis=1)
        self._pinv = np.linalg.pinv(self._basis)

    def fractions(self, frame: np.ndarray):
        """frame: (3, H, W) in [0, 1] -> (lip_or_mouth, mouth) coverage maps."""
        rel = frame.reshape(3, -1) - np.asarray(self.identity.skin)[:, None]
        alpha = self._pinv @ rel
        # a ramp symmetric about 0.5 keeps edge-coverage area while rejecting small noise
        alpha = np.clip(2.0 * alpha - 0.5, 0.0, 1.0)
        h, w = frame.shape[1:]
        lip, mouth = alpha.reshape(2, h, w)
        outer = np.clip(lip + mouth, 0.0, 1.0)
        return outer, mouth

    @staticmethod
    def _moments(mask):
        h, w = mask.shape
        ys, xs = np.mgrid[0:h, 0:w] + 0.5
        m = mask.sum()
        if m <= 1e-9:
            return None
        cx = (mask * xs).sum() / m
        cy = (mask * ys).sum() / m
        # a uniform ellipse has area pi*a*b and variance a^2/4 along its axis
        sx = 2.0 * np.sqrt(max((mask * (xs - cx) ** 2).sum() / m, 0.0))
        sy = 2.0 * np.sqrt(max((mask * (ys - cy) ** 2).sum() / m, 0.0))
        return cx, cy, sx, sy, m

    def __call__(self, frames) -> np.ndarray:
        frames = np.asarray(frames, dtype=np.float64)
        out = []
        a = self.identity.half_width
        th = self.identity.lip_thickness
        for frame in frames:
            outer, mouth = self.fractions(frame)
            mo = self._moments(outer)
            mm = self._moments(mouth)
            cx, cy = (mo[0], mo[1]) if mo else self.identity.center
            # half-height from the areas pi*a*b and pi*(a+th)*(b+th); areas are robust for thin mouths
            from_mouth = mm[4] / (np.pi * a) if mm else 0.0
            from_outer = mo[4] / (np.pi * (a + th)) - th if mo else 0.0
            b_in = max(0.5 * (from_mouth + from_outer), 0.0)
            outer_pts = np.stack([cx + (a + th) * np.cos(OUTER_ANGLES), cy + (b_in + th) * np.sin(OUTER_ANGLES)], -1)
            inner_pts = np.stack([cx + a * np.cos(INNER_ANGLES), cy + b_in * np.sin(INNER_ANGLES)], -1)
            out.append(np.concatenate([outer_pts, inner_pts]))
        return np.stack(out)


def write_corpus(samples, out_dir, prefix: str = "video") -> list[Path]:
    """Store full-length samples in the clip layout along with ground-truth tensors."""
    paths = []
    for i, s in enumerate(samples):
        meta = {
            "fps": FPS,
            "sample_rate": s.waveform.sample_rate,
            "true_delay": s.true_delay,
            "identity": s.identity.to_dict(),
            "cropped": True,
            "normalized": False,
            "n_frames": int(len(s.frames)),
        }
        paths.append(
            write_clip(
                out_dir, f"{prefix}{i:05d}", s.frames, s.waveform.samples, s.landmarks, meta,
                extra={"envelope": s.envelope.astype(np.float32), "aperture": s.aperture.astype(np.float32),
                       "true_delay": np.array([s.true_delay], dtype=np.int32)},
            )
        )
    return paths
