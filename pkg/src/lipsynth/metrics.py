"""Landmark distance, PSNR, SSIM and the external-metric plugin slot."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.ndimage import correlate1d

PSNR_CAP = 100.0
SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_WIN, SSIM_SIGMA = 11, 1.5


def lmd(fake_landmarks, real_landmarks) -> float:
    """Mean landmark distance after aligning each frame's mean lip point.

    Both inputs are (T, P, 2). The generated landmarks are translated so their
    per-frame centroid coincides with the reference centroid before averaging
    the point-wise Euclidean distances over frames and points.
    """
    lf = np.asarray(fake_landmarks, dtype=np.float64)
    lr = np.asarray(real_landmarks, dtype=np.float64)
    if lf.ndim != 3 or lf.shape[-1] != 2:
        raise ValueError(f"landmarks must be (T, P, 2), got {lf.shape}")
    if lf.shape != lr.shape:
        raise ValueError(f"landmark sequences differ in shape: {lf.shape} vs {lr.shape}")
    # centring both sides keeps identical inputs at exactly zero
    diff = (lr - lr.mean(axis=1, keepdims=True)) - (lf - lf.mean(axis=1, keepdims=True))
    return float(np.linalg.norm(diff, axis=-1).mean())


def _to_unit(x, normalized: bool):
    x = np.asarray(x, dtype=np.float64)
    return x * 0.5 + 0.5 if normalized else x


def psnr(fake, real, normalized: bool = True) -> float:
    """PSNR in dB over the whole clip with peak 1; +inf for identical inputs."""
    a, b = _to_unit(fake, normalized), _to_unit(real, normalized)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size=SSIM_WIN, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def ssim_image(x, y, data_range: float = 1.0) -> float:
    """Mean SSIM of two 2-D images over all fully-covered 11x11 Gaussian windows."""
    g = _gaussian_window()
    r = SSIM_WIN // 2

    def filt(img):
        out = correlate1d(correlate1d(img, g, axis=0, mode="reflect"), g, axis=1, mode="reflect")
        return out[r:-r, r:-r]

    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def ssim(fake, real, normalized: bool = True) -> float:
    """SSIM of clips (T, C, H, W) averaged over channels and frames."""
    a, b = _to_unit(fake, normalized), _to_unit(real, normalized)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        return ssim_image(a, b)
    a = a.reshape(-1, *a.shape[-2:])
    b = b.reshape(-1, *b.shape[-2:])
    return float(np.mean([ssim_image(p, q) for p, q in zip(a, b)]))


def sharpness(clip, normalized: bool = True) -> float:
    """Mean image-gradient magnitude; a cheap stand-in for a no-reference sharpness score."""
    x = _to_unit(clip, normalized)
    gx = np.diff(x, axis=-1)[..., :-1, :]
    gy = np.diff(x, axis=-2)[..., :, :-1]
    return float(np.mean(np.sqrt(gx**2 + gy**2)))


# name -> fn(clip in [-1, 1]) -> float; e.g. register a CPBD implementation here
EXTERNAL_METRICS: dict[str, Callable[[np.ndarray], float]] = {}


def register_metric(name: str, fn: Callable[[np.ndarray], float]) -> None:
    EXTERNAL_METRICS[name] = fn


@dataclass
class MetricReport:
    lmd: float
    psnr: float
    ssim: float
    per_video: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def row(self, name: str = "model") -> str:
        cols = [f"{name:<12}", f"LMD {self.lmd:.3f}", f"SSIM {self.ssim:.3f}", f"PSNR {self.psnr:.2f}"]
        cols += [f"{k.upper()} {v:.3f}" for k, v in sorted(self.extra.items())]
        return " | ".join(cols)

    def summary(self) -> dict:
        return {"lmd": self.lmd, "psnr": self.psnr, "ssim": self.ssim, **self.extra, "n_clips": len(self.per_video)}

    def write(self, table_path, summary_path) -> None:
        keys = list(self.per_video[0]) if self.per_video else ["clip", "lmd", "psnr", "ssim"]
        with open(table_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, keys, delimiter="\t")
            w.writeheader()
            w.writerows(self.per_video)
        with open(summary_path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)
            fh.write("\n")


def evaluate_clips(pairs) -> MetricReport:
    """``pairs`` yields ``(clip_id, fake, real, fake_landmarks, real_landmarks)`` with clips in [-1, 1]."""
    rows = []
    for clip_id, fake, real, lf, lr in pairs:
        row = {
            "clip": clip_id,
            "lmd": lmd(lf, lr),
            "psnr": min(psnr(fake, real), PSNR_CAP),
            "ssim": ssim(fake, real),
        }
        for name, fn in EXTERNAL_METRICS.items():
            row[name] = float(fn(np.asarray(fake)))
        rows.append(row)
    if not rows:
        raise ValueError("no clips to evaluate")
    mean = {k: float(np.mean([r[k] for r in rows])) for k in rows[0] if k != "clip"}
    extra = {k: v for k, v in mean.items() if k not in ("lmd", "psnr", "ssim")}
    return MetricReport(mean["lmd"], mean["psnr"], mean["ssim"], rows, extra)
