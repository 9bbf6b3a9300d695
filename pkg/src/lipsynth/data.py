"""Windowed training samples built from raw videos or from a preprocessed directory."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .audio import FrontendConfig, Waveform, compute_lms
from .vision import crop_clip, list_clips, normalize, read_clip, window_starts, write_clip


@dataclass
class ClipDataset:
    lms: torch.Tensor  # (N, 64, 128)
    video: torch.Tensor  # (N, 16, 3, 64, 64) in [-1, 1]
    landmarks: np.ndarray  # (N, 16, 20, 2)
    source: list  # source video id per window
    start: list
    pools: dict = field(default_factory=dict)  # source id -> (M, 3, 64, 64) frames in [-1, 1]
    meta: list = field(default_factory=list)

    def __len__(self):
        return self.lms.shape[0]

    def subset(self, idx) -> "ClipDataset":
        idx = list(idx)
        keep = {self.source[i] for i in idx}
        return ClipDataset(self.lms[idx], self.video[idx], self.landmarks[idx], [self.source[i] for i in idx],
                           [self.start[i] for i in idx], {k: v for k, v in self.pools.items() if k in keep},
                           [self.meta[i] for i in idx] if self.meta else [])

    def identity_frames(self, idx, rng: np.random.Generator) -> torch.Tensor:
        """One frame drawn uniformly from each window's source video."""
        out = []
        for i in idx:
            pool = self.pools[self.source[i]]
            out.append(pool[int(rng.integers(0, pool.shape[0]))])
        return torch.stack(out)

    def to(self, dtype) -> "ClipDataset":
        return ClipDataset(self.lms.to(dtype), self.video.to(dtype), self.landmarks, self.source, self.start,
                           {k: v.to(dtype) for k, v in self.pools.items()}, self.meta)


def video_windows(source_id: str, frames01, samples, landmarks, sample_rate: int, fps: float = 25.0,
                  window: int = 16, overlap: int = 8, cfg: FrontendConfig = FrontendConfig(), meta=None):
    """Yield window dicts for one video; frames (T, 3, 64, 64) in [0, 1]."""
    spf = sample_rate / fps
    wave = Waveform(samples, sample_rate)
    for s in window_starts(len(frames01), window, overlap):
        a = int(round(s * spf))
        seg = Waveform(wave.samples[a : a + int(round(window * spf))], sample_rate)
        yield {
            "source": source_id,
            "start": s,
            "frames": normalize(np.asarray(frames01[s : s + window], dtype=np.float32)),
            "audio": seg.samples.astype(np.float32),
            "lms": compute_lms(seg, cfg),
            "landmarks": np.asarray(landmarks[s : s + window]),
            "meta": dict(meta or {}, source=source_id, start=s, fps=fps, sample_rate=sample_rate),
        }


def _collate(windows, pools) -> ClipDataset:
    if not windows:
        raise ValueError("corpus produced no windows")
    return ClipDataset(
        lms=torch.as_tensor(np.stack([w["lms"] for w in windows])),
        video=torch.as_tensor(np.stack([w["frames"] for w in windows])),
        landmarks=np.stack([w["landmarks"] for w in windows]),
        source=[w["source"] for w in windows],
        start=[w["start"] for w in windows],
        pools=pools,
        meta=[w["meta"] for w in windows],
    )


def from_synth(samples, window: int = 16, overlap: int = 8, max_windows_per_video: int | None = None,
               cfg: FrontendConfig = FrontendConfig()) -> ClipDataset:
    windows, pools = [], {}
    for i, s in enumerate(samples):
        sid = f"video{i:05d}"
        meta = {"true_delay": s.true_delay, "identity": s.identity.to_dict()}
        ws = list(video_windows(sid, s.frames, s.waveform.samples, s.landmarks, s.waveform.sample_rate,
                                window=window, overlap=overlap, cfg=cfg, meta=meta))
        windows += ws[:max_windows_per_video]
        pools[sid] = torch.as_tensor(normalize(np.asarray(s.frames, dtype=np.float32)))
    return _collate(windows, pools)


def preprocess_dir(raw_dir, out_dir, window: int = 16, overlap: int = 8, margin: float = 0.1,
                   cfg: FrontendConfig = FrontendConfig()) -> int:
    """Turn full-length clip directories into windowed training samples; returns the window count.

    Raw clips that are not yet lip crops (``meta["cropped"]`` false) are cropped
    with a fixed per-video box from the first frame's landmarks.
    """
    n = 0
    for path in list_clips(raw_dir):
        clip = read_clip(path)
        meta = clip["meta"]
        frames, landmarks = clip["frames"], clip["landmarks"]
        if not meta.get("cropped", False):
            hwc = frames if frames.shape[-1] == 3 else np.moveaxis(frames, 1, -1)
            pixels, landmarks, _ = crop_clip(hwc, landmarks, margin)
            frames = pixels * 0.5 + 0.5
        keep = {k: meta[k] for k in ("identity", "true_delay") if k in meta}
        for w in video_windows(path.name, frames, clip["audio"], landmarks, int(meta["sample_rate"]),
                               float(meta.get("fps", 25.0)), window, overlap, cfg, keep):
            write_clip(out_dir, f"{path.name}_{w['start']:05d}", w["frames"], w["audio"], w["landmarks"],
                       w["meta"], extra={"lms": w["lms"]})
            n += 1
    return n


def from_dir(root) -> ClipDataset:
    """Load a preprocessed window directory; identity pools are the union of each source's windows."""
    windows, by_source = [], {}
    for path in list_clips(root):
        c = read_clip(path)
        m = c["meta"]
        w = {"source": m["source"], "start": m["start"], "frames": c["frames"], "lms": c["lms"],
             "landmarks": c["landmarks"], "meta": dict(m, clip=path.name)}
        windows.append(w)
        by_source.setdefault(m["source"], {}).update({m["start"] + k: f for k, f in enumerate(c["frames"])})
    pools = {s: torch.as_tensor(np.stack([fr[k] for k in sorted(fr)])) for s, fr in by_source.items()}
    return _collate(windows, pools)


def load_corpus(path) -> ClipDataset:
    path = Path(path)
    return from_dir(path)
