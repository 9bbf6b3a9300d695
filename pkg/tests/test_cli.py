import json

import numpy as np
import pytest
from PIL import Image
from scipy.io import wavfile

from lipsynth.cli import main
from lipsynth.vision import list_clips, read_clip


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "raw"), "--n-videos", "2", "--video-len", "24", "--delay", "2",
                 "--seed", "5"]) == 0
    assert main(["preprocess", "--raw", str(root / "raw"), "--out", str(root / "win")]) == 0
    return root


def test_synth_and_preprocess_layout(workdir):
    assert len(list_clips(workdir / "raw")) == 2
    wins = list_clips(workdir / "win")
    assert len(wins) == 4
    clip = read_clip(wins[0])
    assert clip["frames"].shape == (16, 3, 64, 64) and clip["lms"].shape == (64, 128)


def test_train_generate_evaluate(workdir, capsys):
    out = workdir / "run"
    assert main(["train", "--data", str(workdir / "win"), "--out", str(out), "--ablation", "b", "--model", "tiny",
                 "--steps", "2", "--batch-size", "2", "--lr", "1e-3"]) == 0
    assert (out / "last.pt").exists() and (out / "train_log.tsv").exists()
    assert main(["generate", "--checkpoint", str(out / "last.pt"), "--windows", str(workdir / "win"),
                 "--out", str(workdir / "pred")]) == 0
    assert len(list_clips(workdir / "pred")) == 4
    assert main(["evaluate", "--pred", str(workdir / "pred"), "--ref", str(workdir / "win"),
                 "--out", str(workdir / "eval")]) == 0
    summary = json.loads((workdir / "eval" / "summary.json").read_text())
    assert summary["n_clips"] == 4 and np.isfinite(summary["lmd"])
    assert "LMD" in capsys.readouterr().out


def test_resume_continues_step_count(workdir):
    out = workdir / "resume"
    base = ["train", "--data", str(workdir / "win"), "--out", str(out), "--ablation", "b", "--model", "tiny",
            "--batch-size", "2"]
    assert main(base + ["--steps", "1"]) == 0
    assert main(base + ["--steps", "2", "--resume", str(out / "last.pt")]) == 0
    rows = (out / "train_log.tsv").read_text().splitlines()
    assert [r.split("\t")[0] for r in rows[1:]] == ["1", "2"]


def test_loss_weights_flag(workdir):
    out = workdir / "weights"
    assert main(["train", "--data", str(workdir / "win"), "--out", str(out), "--ablation", "b", "--model", "tiny",
                 "--steps", "1", "--batch-size", "2", "--loss-weights", "1000", "1", "1"]) == 0
    cfg = json.loads((out / "train_config.json").read_text())
    assert cfg["loss_weights"]["lambda1"] == 1000.0


def test_generate_from_wav_and_image(workdir, tmp_path, capsys):
    ckpt = workdir / "run" / "last.pt"
    if not ckpt.exists():
        assert main(["train", "--data", str(workdir / "win"), "--out", str(workdir / "run"), "--ablation", "b",
                     "--model", "tiny", "--steps", "1", "--batch-size", "2"]) == 0
    rate = 16000
    t = np.arange(rate) / rate
    wavfile.write(tmp_path / "a.wav", rate, (0.3 * np.sin(2 * np.pi * 220 * t) * 32767).astype(np.int16))
    Image.fromarray(np.full((80, 90, 3), 128, np.uint8)).save(tmp_path / "id.png")
    args = ["generate", "--checkpoint", str(ckpt), "--audio", str(tmp_path / "a.wav"),
            "--identity", str(tmp_path / "id.png"), "--out", str(tmp_path / "frames")]
    assert main(args) == 0
    assert len(list((tmp_path / "frames").glob("frame_*.png"))) == 16
    assert " s" in capsys.readouterr().out


def test_analyze_delay(workdir):
    out = workdir / "delay"
    assert main(["analyze-delay", "--corpus", str(workdir / "raw"), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["n_videos"] == 2 and summary["accuracy"] == 1.0
    assert (out / "curves.tsv").exists()


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as err:
        main(["synth", "--bogus"])
    assert err.value.code == 2


def test_runtime_error_exits_1(tmp_path, capsys):
    assert main(["analyze-delay", "--corpus", str(tmp_path), "--out", str(tmp_path / "o")]) == 1
    assert "error:" in capsys.readouterr().err
    assert main(["synth", "--out", str(tmp_path / "x"), "--delay", "9"]) == 1
