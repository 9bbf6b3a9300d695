import numpy as np
import pytest
import torch

from lipsynth.data import from_dir, from_synth, load_corpus, preprocess_dir
from lipsynth.synth import SynthSpec, generate, write_corpus
from lipsynth.vision import list_clips, read_clip, write_clip


@pytest.fixture(scope="module")
def samples():
    return generate(SynthSpec(n_videos=3, video_len=40, envelope_seed=2))


def test_from_synth_windows(samples):
    ds = from_synth(samples)
    # 40 frames -> starts 0, 8, 16, 24
    assert len(ds) == 12
    assert ds.lms.shape == (12, 64, 128)
    assert ds.video.shape == (12, 16, 3, 64, 64)
    assert ds.video.min() >= -1 and ds.video.max() <= 1
    assert ds.start[:4] == [0, 8, 16, 24]
    assert set(ds.pools) == {"video00000", "video00001", "video00002"}
    np.testing.assert_allclose(ds.landmarks[1], samples[0].landmarks[8:24])
    assert ds.meta[5]["true_delay"] == samples[1].true_delay


def test_max_windows_and_subset(samples):
    ds = from_synth(samples, max_windows_per_video=1)
    assert len(ds) == 3
    sub = ds.subset([0, 2])
    assert sub.source == ["video00000", "video00002"]
    assert set(sub.pools) == {"video00000", "video00002"}


def test_identity_frames_come_from_the_same_video(samples):
    ds = from_synth(samples)
    rng = np.random.default_rng(0)
    frames = ds.identity_frames([0, 5, 11], rng)
    for f, src in zip(frames, [ds.source[i] for i in (0, 5, 11)]):
        pool = ds.pools[src]
        assert any(torch.equal(f, p) for p in pool)


def test_preprocess_synth_corpus(tmp_path, samples):
    write_corpus(samples, tmp_path / "raw")
    n = preprocess_dir(tmp_path / "raw", tmp_path / "win")
    assert n == 12
    ds = load_corpus(tmp_path / "win")
    ref = from_synth(samples)
    assert len(ds) == 12
    assert torch.allclose(ds.lms, ref.lms, atol=1e-5)
    assert torch.allclose(ds.video, ref.video)
    # pools rebuilt from overlapping windows cover every frame the windows touch
    assert ds.pools["video00000"].shape[0] == 40


def test_preprocess_crops_raw_frames(tmp_path):
    from lipsynth.synth import Identity, aperture_map, ellipse_landmarks, render_frame

    ident = Identity(center=(60.0, 50.0))
    ap = aperture_map(np.linspace(0.1, 0.6, 20))
    frames = np.stack([np.moveaxis(render_frame(ident, a, size=110), 0, -1) for a in ap])
    lm = ellipse_landmarks(ident, ap)
    audio = np.zeros(20 * 2048, dtype=np.float32)
    write_clip(tmp_path / "raw", "spk", frames, audio, lm, {"fps": 25.0, "sample_rate": 51200, "cropped": False})
    assert preprocess_dir(tmp_path / "raw", tmp_path / "win") == 1
    clip = read_clip(list_clips(tmp_path / "win")[0])
    assert clip["frames"].shape == (16, 3, 64, 64)
    # the box comes from frame 0, so only the first frame and the fixed width must fit
    lm_out = clip["landmarks"]
    assert lm_out[0].min() > 0 and lm_out[0].max() < 64
    assert lm_out[..., 0].min() > 0 and lm_out[..., 0].max() < 64


def test_empty_corpus(tmp_path):
    with pytest.raises(ValueError):
        from_dir(tmp_path)
