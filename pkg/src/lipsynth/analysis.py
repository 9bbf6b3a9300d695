"""Offset-Pearson delay analysis between audio change and visual motion."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .audio import FrontendConfig, log_mel
from .flow import BrightnessConstancyFlow, FlowEstimator
from .vision import normalize


@dataclass
class DelayReport:
    ids: list
    curves: np.ndarray  # (n_videos, max_offset + 1), NaN where undefined
    best_offset: np.ndarray  # (n_videos,), -1 when missing
    true_delay: list = field(default_factory=list)

    @property
    def max_offset(self) -> int:
        return self.curves.shape[1] - 1

    @property
    def valid(self) -> np.ndarray:
        return self.best_offset >= 0

    def histogram(self) -> np.ndarray:
        return np.bincount(self.best_offset[self.valid], minlength=self.max_offset + 1)

    def write(self, curves_path, histogram_path) -> None:
        with open(curves_path, "w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t")
            w.writerow(["video", "true_delay", "best_offset"] + [f"r{d}" for d in range(self.max_offset + 1)])
            for i, vid in enumerate(self.ids):
                td = self.true_delay[i] if self.true_delay else ""
                best = int(self.best_offset[i]) if self.best_offset[i] >= 0 else "NA"
                w.writerow([vid, td, best] + ["NA" if np.isnan(r) else f"{r:.6f}" for r in self.curves[i]])
        with open(histogram_path, "w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t")
            w.writerow(["offset", "count"])
            for d, n in enumerate(self.histogram()):
                w.writerow([d, int(n)])


TOP_DB = 80.0


def audio_change(samples, n_frames: int, cfg: FrontendConfig = FrontendConfig(), fps: float = 25.0,
                 top_db: float = TOP_DB) -> np.ndarray:
    """Mean absolute change of the log-mel spectrum between consecutive video frames, (n_frames - 1,).

    The spectrum is floored ``top_db`` below its peak so near-silent bands do not
    dominate the mean with log-domain jitter.
    """
    lms = log_mel(samples, cfg)
    lms = np.maximum(lms, lms.max() - top_db * np.log(10.0) / 20.0)
    per = int(round(cfg.sample_rate / fps / cfg.hop))
    lms = lms[: n_frames * per].reshape(n_frames, per, -1).mean(axis=1)
    return np.abs(np.diff(lms, axis=0)).mean(axis=1)


@torch.no_grad()
def motion_amount(frames, flow: FlowEstimator | None = None) -> np.ndarray:
    """Mean optical-flow magnitude of each consecutive frame pair; frames (T, 3, H, W) in [0, 1]."""
    flow = flow if flow is not None else BrightnessConstancyFlow()
    video = normalize(torch.as_tensor(np.asarray(frames), dtype=torch.float32)).unsqueeze(0)
    fields = flow(video)[0]
    return fields.norm(dim=1).mean(dim=(1, 2)).numpy().astype(np.float64)


def pearson(x, y, tol: float = 1e-12) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2 or x.std() < tol or y.std() < tol:
        return float("nan")
    return float(np.corrcoef(x, y)[0, 1])


def offset_curve(audio_series, motion_series, max_offset: int = 7) -> np.ndarray:
    """Pearson r between audio[t] and motion[t + d] for d = 0..max_offset."""
    n = len(audio_series)
    return np.array([pearson(audio_series[: n - d], motion_series[d:]) for d in range(max_offset + 1)])


def offset_pearson_analysis(corpus, max_offset: int = 7, flow: FlowEstimator | None = None,
                            cfg: FrontendConfig = FrontendConfig()) -> DelayReport:
    """Per-video offset curves and the offset maximising each.

    ``corpus`` items need ``frames`` (T, 3, H, W) in [0, 1] and a ``waveform``;
    an ``id`` and ``true_delay`` are reported when present.
    """
    flow = flow if flow is not None else BrightnessConstancyFlow()
    ids, curves, true = [], [], []
    for i, sample in enumerate(corpus):
        frames = np.asarray(sample.frames)
        if len(frames) < 16:
            raise ValueError(f"video {i} has {len(frames)} frames; need at least 16")
        a = audio_change(sample.waveform.samples, len(frames), cfg)
        m = motion_amount(frames, flow)
        curves.append(offset_curve(a, m, max_offset))
        ids.append(getattr(sample, "id", f"video{i:05d}"))
        if getattr(sample, "true_delay", None) is not None:
            true.append(int(sample.true_delay))
    curves = np.array(curves).reshape(len(ids), max_offset + 1)
    best = np.full(len(ids), -1, dtype=int)
    for i, c in enumerate(curves):
        if not np.all(np.isnan(c)):
            best[i] = int(np.nanargmax(c))
    return DelayReport(ids, curves, best, true if len(true) == len(ids) else [])


def plot_report(report: DelayReport, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9, 3.5))
    for c in report.curves[:4]:
        ax0.plot(range(report.max_offset + 1), c, marker="o")
    ax0.set_xlabel("flow shift (frames)")
    ax0.set_ylabel("Pearson r")
    ax1.bar(range(report.max_offset + 1), report.histogram())
    ax1.set_xlabel("best offset")
    ax1.set_ylabel("videos")
    fig.tight_layout()
    fig.savefig(Path(path))
    plt.close(fig)
