"""Lip-region cropping, normalisation, sliding windows and the on-disk clip layout."""

from __future__ import annotations

import json
import struct
import warnings
from pathlib import Path
from typing import Callable, Protocol

import numpy as np
from scipy.ndimage import map_coordinates

CLIP_SIZE = 64
N_LANDMARKS = 20


class DegenerateBoxError(ValueError):
    def __init__(self, frame_index, box):
        super().__init__(f"degenerate landmark bounding box {box} at frame {frame_index}")
        self.frame_index = frame_index


def normalize(x):
    return (x - 0.5) / 0.5


def denormalize(x):
    return x * 0.5 + 0.5


def landmark_box(landmarks: np.ndarray, margin: float = 0.1, frame_index: int = 0):
    """Crop box ``(x0, y0, w, h)`` around landmarks, padded by ``margin`` x bbox diagonal per side."""
    lo = landmarks.min(axis=0)
    hi = landmarks.max(axis=0)
    w, h = hi - lo
    if w <= 0 or h <= 0:
        raise DegenerateBoxError(frame_index, (float(lo[0]), float(lo[1]), float(w), float(h)))
    pad = margin * float(np.hypot(w, h))
    return (float(lo[0] - pad), float(lo[1] - pad), float(w + 2 * pad), float(h + 2 * pad))


def remap_landmarks(landmarks: np.ndarray, box, size: int = CLIP_SIZE) -> np.ndarray:
    x0, y0, w, h = box
    out = np.empty_like(landmarks, dtype=np.float64)
    out[..., 0] = (landmarks[..., 0] - x0) * size / w
    out[..., 1] = (landmarks[..., 1] - y0) * size / h
    return out


def _as_float_hwc(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.ndim == 2:
        frame = np.repeat(frame[..., None], 3, axis=-1)
    if np.issubdtype(frame.dtype, np.integer):
        return frame.astype(np.float64) / 255.0
    return frame.astype(np.float64)


def crop_resize(frame: np.ndarray, box, size: int = CLIP_SIZE) -> np.ndarray:
    """Bilinear crop of an H x W x 3 image into a 3 x size x size array in [0, 1]."""
    img = _as_float_hwc(frame)
    x0, y0, w, h = box
    centers = (np.arange(size) + 0.5) / size
    xs = x0 + centers * w - 0.5
    ys = y0 + centers * h - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    out = np.stack(
        [map_coordinates(img[..., c], [yy, xx], order=1, mode="nearest") for c in range(3)]
    )
    return out


def crop_and_normalize(frame, landmarks, margin: float = 0.1, box=None, size: int = CLIP_SIZE,
                       frame_index: int = 0):
    """Crop around the lip landmarks, resize to 64x64 and map intensities to [-1, 1].

    Returns ``(pixels, landmarks)`` with pixels of shape (3, size, size) and the
    landmarks expressed in the crop's pixel coordinates.
    """
    landmarks = np.asarray(landmarks, dtype=np.float64)
    if box is None:
        box = landmark_box(landmarks, margin, frame_index)
    pixels = normalize(crop_resize(frame, box, size))
    return pixels.astype(np.float32), remap_landmarks(landmarks, box, size)


def crop_clip(frames, landmarks, margin: float = 0.1, size: int = CLIP_SIZE):
    """Crop a whole video with one fixed box taken from the first frame's landmarks."""
    landmarks = np.asarray(landmarks, dtype=np.float64)
    box = landmark_box(landmarks[0], margin, frame_index=0)
    for i, lm in enumerate(landmarks):
        # every frame must still describe a non-degenerate mouth
        landmark_box(lm, 0.0, frame_index=i)
    pixels = np.stack([crop_and_normalize(f, l, box=box, size=size)[0] for f, l in zip(frames, landmarks)])
    return pixels, remap_landmarks(landmarks, box, size), box


def window_starts(n_frames: int, window: int = 16, overlap: int = 8) -> list[int]:
    stride = window - overlap
    if stride <= 0:
        raise ValueError(f"overlap {overlap} must be smaller than window {window}")
    if n_frames < window:
        return []
    return list(range(0, n_frames - window + 1, stride))


def sliding_windows(video, window: int = 16, overlap: int = 8) -> list:
    starts = window_starts(len(video), window, overlap)
    if not starts:
        warnings.warn(f"video of {len(video)} frames is shorter than one {window}-frame window")
    return [video[s : s + window] for s in starts]


class LandmarkProvider(Protocol):
    def __call__(self, frames) -> np.ndarray:
        """Return landmarks of shape (T, 20, 2) for frames of shape (T, ...)."""


class OracleLandmarks:
    """Landmarks known analytically, e.g. from the synthetic renderer."""

    def __init__(self, landmarks):
        self.landmarks = np.asarray(landmarks, dtype=np.float64)

    def __call__(self, frames=None):
        return self.landmarks


class ExternalDetectorAdapter:
    """Wrap a per-frame detector ``frame -> (20, 2)`` such as a dlib shape predictor."""

    def __init__(self, detect: Callable[[np.ndarray], np.ndarray], n_points: int = N_LANDMARKS):
        self.detect = detect
        self.n_points = n_points

    def __call__(self, frames) -> np.ndarray:
        out = []
        for i, frame in enumerate(frames):
            pts = np.asarray(self.detect(frame), dtype=np.float64)
            if pts.shape != (self.n_points, 2):
                raise ValueError(f"detector returned shape {pts.shape} at frame {i}, expected ({self.n_points}, 2)")
            out.append(pts)
        return np.stack(out)


# Binary tensor file: magic, version, dtype code, ndim, then little-endian
# uint64 dims and the raw little-endian payload.
_MAGIC = b"LSTN"
_DTYPES = {1: "<f4", 2: "<f8", 3: "<i4", 4: "<i8", 5: "u1", 6: "<i2"}
_CODES = {np.dtype(v).str: k for k, v in _DTYPES.items()}


def save_tensor(path, array) -> None:
    a = np.asarray(array)
    dt = a.dtype.newbyteorder("<") if a.dtype.byteorder == ">" else a.dtype
    code = _CODES.get(np.dtype(dt).str)
    if code is None:
        raise TypeError(f"unsupported tensor dtype {a.dtype}")
    a = np.ascontiguousarray(a, dtype=_DTYPES[code])
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<BBB", 1, code, a.ndim))
        fh.write(struct.pack(f"<{a.ndim}Q", *a.shape))
        fh.write(a.tobytes())


def load_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path} is not a tensor file")
    version, code, ndim = struct.unpack_from("<BBB", raw, 4)
    if version != 1:
        raise ValueError(f"unsupported tensor file version {version}")
    shape = struct.unpack_from(f"<{ndim}Q", raw, 7)
    offset = 7 + 8 * ndim
    return np.frombuffer(raw, dtype=_DTYPES[code], offset=offset).reshape(shape).copy()


def write_clip(root, clip_id: str, frames, audio, landmarks, meta: dict, extra: dict | None = None) -> Path:
    d = Path(root) / clip_id
    d.mkdir(parents=True, exist_ok=True)
    save_tensor(d / "frames.tensor", np.asarray(frames, dtype=np.float32))
    audio = np.asarray(audio)
    # keep double-precision audio exact; log-mel of quiet bands is sensitive to rounding
    save_tensor(d / "audio.tensor", audio if audio.dtype == np.float64 else audio.astype(np.float32))
    save_tensor(d / "landmarks.tensor", np.asarray(landmarks, dtype=np.float32))
    for name, arr in (extra or {}).items():
        save_tensor(d / f"{name}.tensor", np.asarray(arr))
    (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return d


def read_clip(path) -> dict:
    d = Path(path)
    out = {"id": d.name, "meta": json.loads((d / "meta.json").read_text())}
    for f in sorted(d.glob("*.tensor")):
        out[f.stem] = load_tensor(f)
    return out


def list_clips(root) -> list[Path]:
    return sorted(p for p in Path(root).iterdir() if (p / "meta.json").exists())


def read_frame_dir(path) -> np.ndarray:
    """Load an ordered directory of images as (T, H, W, 3) uint8."""
    from PIL import Image

    files = sorted(p for p in Path(path).iterdir() if p.suffix.lower() in {".png", ".jpg", ".jpeg", ".bmp"})
    return np.stack([np.asarray(Image.open(f).convert("RGB")) for f in files])


def read_video(path) -> tuple[np.ndarray, float]:
    """Decode a video container to (T, H, W, 3) uint8 RGB frames and its frame rate."""
    import cv2

    cap = cv2.VideoCapture(str(path))
    fps = cap.get(cv2.CAP_PROP_FPS) or 25.0
    frames = []
    while True:
        ok, bgr = cap.read()
        if not ok:
            break
        frames.append(bgr[..., ::-1])
    cap.release()
    if not frames:
        raise ValueError(f"no frames decoded from {path}")
    return np.stack(frames), float(fps)
