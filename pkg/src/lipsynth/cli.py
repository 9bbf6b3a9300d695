"""Command-line entry point: ``lipsynth <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from .audio import AudioError, FrontendConfig, Waveform, compute_lms, load_audio
from .vision import denormalize, list_clips, normalize, read_clip, write_clip

log = logging.getLogger("lipsynth")


def _synth(args) -> int:
    from .synth import SynthSpec, generate, write_corpus

    spec = SynthSpec(n_videos=args.n_videos, video_len=args.video_len, delay=args.delay, envelope_seed=args.seed,
                     noise_level=args.noise, envelope_kind=args.envelope)
    paths = write_corpus(generate(spec), args.out)
    print(f"wrote {len(paths)} videos to {args.out}")
    return 0


def _preprocess(args) -> int:
    from .data import preprocess_dir

    n = preprocess_dir(args.raw, args.out, args.window, args.overlap, args.margin)
    print(f"wrote {n} windows to {args.out}")
    return 0


def _train_perceptual(args) -> int:
    from .config import get_preset
    from .data import load_corpus
    from .objectives import reconstruction_error, save_perceptual, train_perceptual_autoencoder

    data = load_corpus(args.data)
    cfg = get_preset(args.model)
    model, history = train_perceptual_autoencoder(data.video, cfg, args.steps, args.batch_size, args.lr, args.seed)
    digest = save_perceptual(args.out, model, cfg)
    print(f"final loss {history[-1]:.5f}; reconstruction L1 {reconstruction_error(model, data.video):.5f}")
    print(f"sha256 {digest}")
    return 0


def _train(args) -> int:
    from .data import load_corpus
    from .objectives import LossWeights, file_hash
    from .training import ABLATIONS, TrainConfig, Trainer, run_training

    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    overrides = {}
    if args.ablation:
        overrides["ablation"] = ABLATIONS[args.ablation]
    if args.model:
        overrides["model"] = args.model
    for key in ("steps", "batch_size", "seed"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    if args.lr is not None:
        overrides["optimizer"] = {**cfg.optimizer, "lr": args.lr}
    if args.loss_weights is not None:
        overrides["loss_weights"] = LossWeights(*args.loss_weights)
    if args.perceptual:
        overrides["perceptual_ckpt"] = str(args.perceptual)
        overrides["perceptual_hash"] = file_hash(args.perceptual)
    cfg = replace(cfg, **overrides)
    data = load_corpus(args.data)
    trainer = Trainer(cfg, data)
    if args.resume:
        trainer.load_state(torch.load(args.resume, map_location="cpu", weights_only=False))
    _, history = run_training(cfg, data, args.out, trainer=trainer)
    if history:
        last = history[-1]
        print(f"step {last['step']} total {last['total']:.4f} pix {last['pix']:.4f}")
    return 0


def _load_identity(path) -> torch.Tensor:
    from PIL import Image

    img = Image.open(path).convert("RGB").resize((64, 64), Image.BILINEAR)
    return torch.as_tensor(normalize(np.asarray(img, dtype=np.float32) / 255.0)).permute(2, 0, 1)


def _write_frames(out_dir: Path, clip: np.ndarray) -> None:
    from PIL import Image

    out_dir.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(clip):
        pixels = np.clip(denormalize(frame.transpose(1, 2, 0)), 0, 1)
        Image.fromarray((pixels * 255).round().astype(np.uint8)).save(out_dir / f"frame_{t:02d}.png")


def _write_video(path: Path, clip: np.ndarray, fps: float = 25.0) -> None:
    import cv2

    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"mp4v"), fps, (64, 64))
    if not writer.isOpened():
        raise RuntimeError(f"could not open video writer for {path}")
    for frame in clip:
        rgb = (np.clip(denormalize(frame.transpose(1, 2, 0)), 0, 1) * 255).round().astype(np.uint8)
        writer.write(np.ascontiguousarray(rgb[..., ::-1]))
    writer.release()


def _generate(args) -> int:
    from .training import load_generator

    gen = load_generator(args.checkpoint)
    if args.windows:
        return _generate_windows(gen, args)
    if not (args.audio and args.identity):
        raise ValueError("generate needs --audio and --identity, or --windows")
    cfg = FrontendConfig(pad=True)
    wave = load_audio(args.audio)
    start = int(round(args.start * wave.sample_rate))
    seg = Waveform(wave.samples[start : start + cfg.window_samples], wave.sample_rate)
    lms = torch.as_tensor(compute_lms(seg, cfg))
    identity = _load_identity(args.identity)
    t0 = time.perf_counter()
    clip = gen.generate(lms, identity).numpy()
    latency = time.perf_counter() - t0
    out = Path(args.out)
    _write_frames(out, clip)
    if args.video:
        _write_video(Path(args.video), clip)
    print(f"wrote 16 frames to {out} in {latency:.3f} s")
    return 0


def _generate_windows(gen, args) -> int:
    """Generate one clip per preprocessed window, identity from the window's first frame."""
    n = 0
    for path in list_clips(args.windows):
        c = read_clip(path)
        lms = torch.as_tensor(c["lms"])
        identity = torch.as_tensor(c["frames"][0])
        clip = gen.generate(lms, identity).numpy()
        write_clip(args.out, path.name, clip, c["audio"], c["landmarks"], dict(c["meta"], generated=True))
        n += 1
    print(f"generated {n} clips into {args.out}")
    return 0


def _as_normalized(clip: dict) -> np.ndarray:
    frames = clip["frames"].astype(np.float64)
    return frames if clip["meta"].get("normalized", True) else normalize(frames)


def _evaluate(args) -> int:
    from .metrics import evaluate_clips
    from .synth import EllipseLandmarkDetector, Identity

    refs = {p.name: p for p in list_clips(args.ref)}
    pairs = []
    for p in list_clips(args.pred):
        if p.name not in refs:
            raise ValueError(f"no reference clip for prediction {p.name}")
        pred, ref = read_clip(p), read_clip(refs[p.name])
        fake, real = _as_normalized(pred), _as_normalized(ref)
        identity = ref["meta"].get("identity")
        if identity is not None:
            lf = EllipseLandmarkDetector(Identity.from_dict(identity))(denormalize(fake))
        elif "landmarks" in pred and not pred["meta"].get("generated", False):
            lf = pred["landmarks"]
        else:
            raise ValueError(f"cannot obtain landmarks for generated clip {p.name}")
        pairs.append((p.name, fake, real, lf, ref["landmarks"]))
    report = evaluate_clips(pairs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write(out / "metrics.tsv", out / "summary.json")
    print(report.row(args.name))
    return 0


class _CorpusVideo:
    def __init__(self, clip: dict):
        meta = clip["meta"]
        self.id = clip["id"]
        self.frames = denormalize(clip["frames"]) if meta.get("normalized", False) else clip["frames"]
        self.waveform = Waveform(clip["audio"].astype(np.float64), int(meta["sample_rate"]))
        self.true_delay = meta.get("true_delay")


def _analyze_delay(args) -> int:
    from .analysis import offset_pearson_analysis, plot_report

    corpus = [_CorpusVideo(read_clip(p)) for p in list_clips(args.corpus)]
    if not corpus:
        raise ValueError(f"no videos found in {args.corpus}")
    report = offset_pearson_analysis(corpus, args.max_offset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write(out / "curves.tsv", out / "histogram.tsv")
    if args.plot:
        plot_report(report, out / "delay.png")
    hist = report.histogram()
    summary = {"n_videos": len(corpus), "n_valid": int(report.valid.sum()), "histogram": hist.tolist(),
               "mode": int(np.argmax(hist)) if hist.sum() else None}
    if report.true_delay:
        truth = np.array(report.true_delay)
        summary["accuracy"] = float(np.mean(report.best_offset == truth))
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lipsynth", description="Speech-driven lip movement generation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic talking-ellipse corpus")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--n-videos", type=int, default=16)
    s.add_argument("--video-len", type=int, default=75)
    s.add_argument("--delay", type=int, default=None, help="fixed delay in frames; random per video if omitted")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--envelope", choices=["syllables", "constant"], default="syllables")
    s.set_defaults(func=_synth)

    s = sub.add_parser("preprocess", help="crop and cut full videos into 16-frame windows")
    s.add_argument("--raw", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--window", type=int, default=16)
    s.add_argument("--overlap", type=int, default=8)
    s.add_argument("--margin", type=float, default=0.1)
    s.set_defaults(func=_preprocess)

    s = sub.add_parser("train-perceptual", help="train the perceptual autoencoder")
    s.add_argument("--data", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--model", default="default")
    s.add_argument("--steps", type=int, default=2000)
    s.add_argument("--batch-size", type=int, default=8)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_train_perceptual)

    s = sub.add_parser("train", help="train the generator (and discriminator)")
    s.add_argument("--data", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--config", type=Path)
    s.add_argument("--ablation", choices=list("abcdefghi"))
    s.add_argument("--model")
    s.add_argument("--perceptual", type=Path)
    s.add_argument("--steps", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--loss-weights", type=float, nargs=3, metavar=("PIXEL", "PERCEPTUAL", "ADVERSARIAL"))
    s.add_argument("--seed", type=int)
    s.add_argument("--resume", type=Path)
    s.set_defaults(func=_train)

    s = sub.add_parser("generate", help="generate 16 lip frames from audio and an identity image")
    s.add_argument("--checkpoint", required=True, type=Path)
    s.add_argument("--audio", type=Path)
    s.add_argument("--identity", type=Path)
    s.add_argument("--start", type=float, default=0.0, help="audio offset in seconds")
    s.add_argument("--video", type=Path, help="also write an mp4 file")
    s.add_argument("--windows", type=Path, help="generate for every preprocessed window in this directory")
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=_generate)

    s = sub.add_parser("evaluate", help="LMD / PSNR / SSIM of generated clips against references")
    s.add_argument("--pred", required=True, type=Path)
    s.add_argument("--ref", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--name", default="model")
    s.set_defaults(func=_evaluate)

    s = sub.add_parser("analyze-delay", help="offset-Pearson analysis of audio change vs lip motion")
    s.add_argument("--corpus", required=True, type=Path)
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--max-offset", type=int, default=7)
    s.add_argument("--plot", action="store_true")
    s.set_defaults(func=_analyze_delay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (AudioError, ValueError, FileNotFoundError, KeyError, RuntimeError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
