import pytest
import torch

from lipsynth.config import PRESETS, ModelConfig, get_preset
from lipsynth.generator import (AudioEncoder, Decoder, Generator, IdentityEncoder, ResBlock3d, ShapeError,
                                count_parameters, fuse)

TINY = get_preset("tiny")


@pytest.fixture(scope="module")
def gen():
    torch.manual_seed(0)
    return Generator(TINY).eval()


def test_encoder_shapes():
    assert AudioEncoder((4, 4, 4, 4))(torch.randn(2, 64, 128)).shape == (2, 4, 16, 16)
    assert IdentityEncoder((4, 4, 4))(torch.randn(2, 3, 64, 64)).shape == (2, 4, 16, 16)


def test_encoder_shape_errors():
    with pytest.raises(ShapeError):
        AudioEncoder()(torch.randn(2, 60, 128))
    with pytest.raises(ShapeError):
        IdentityEncoder()(torch.randn(2, 3, 32, 32))


def test_zero_audio_gives_zero_feature():
    enc = AudioEncoder((4, 4, 4, 4)).eval()
    assert torch.count_nonzero(enc(torch.zeros(1, 64, 128))) == 0


def test_identity_encoder_not_flip_symmetric():
    torch.manual_seed(1)
    enc = IdentityEncoder((4, 4, 4)).eval()
    img = torch.rand(1, 3, 64, 64)
    with torch.no_grad():
        assert not torch.allclose(enc(img), enc(img.flip(-1)))
        assert torch.equal(enc(img), enc(img.clone()))


def test_fuse_index_oracle():
    f_s = torch.randn(2, 3, 16, 16)
    f_p = torch.randn(2, 5, 16, 16)
    out = fuse(f_s, f_p)
    assert out.shape == (2, 8, 16, 16, 16)
    for b in range(2):
        for t in range(16):
            for h in range(16):
                assert torch.equal(out[b, :3, t, h, :], f_s[b, :, t, :])
            assert torch.equal(out[b, 3:, t], f_p[b])


def test_fuse_ones_and_shape_check():
    out = fuse(torch.zeros(1, 2, 16, 16), torch.ones(1, 2, 16, 16))
    assert torch.all(out[:, 2:] == 1)
    with pytest.raises(ShapeError):
        fuse(torch.zeros(1, 2, 16, 8), torch.ones(1, 2, 16, 16))


def test_decoder_zero_input_gives_zero_clip():
    dec = Decoder(4, 9, (4, 4)).eval()
    torch.nn.init.zeros_(dec.to_rgb.bias)
    out = dec(torch.zeros(1, 4, 16, 16, 16))
    assert out.shape == (1, 16, 3, 64, 64)
    assert torch.count_nonzero(out) == 0


def test_decoder_shape_check():
    with pytest.raises(ShapeError):
        Decoder(4, 1, (4, 4))(torch.zeros(1, 4, 8, 16, 16))


def test_zero_initialised_block_is_identity():
    block = ResBlock3d(4)
    block.zero_init()
    x = torch.randn(2, 4, 3, 8, 8)
    assert torch.equal(block(x), x)


def test_generate_single_and_batched(gen):
    lms, img = torch.randn(64, 128), torch.rand(3, 64, 64) * 2 - 1
    one = gen.generate(lms, img)
    assert one.shape == (16, 3, 64, 64)
    assert one.min() >= -1 and one.max() <= 1
    batch = gen.generate(lms[None].repeat(2, 1, 1), img[None].repeat(2, 1, 1, 1))
    assert batch.shape == (2, 16, 3, 64, 64)
    assert torch.equal(gen.generate(lms, img), one)


def test_generate_restores_training_mode():
    g = Generator(TINY).train()
    g.generate(torch.randn(64, 128), torch.rand(3, 64, 64))
    assert g.training


def test_output_depends_on_both_inputs(gen):
    torch.manual_seed(3)
    lms, img = torch.randn(1, 64, 128), torch.rand(1, 3, 64, 64) * 2 - 1
    base = gen.generate(lms, img)
    assert (gen.generate(lms + 0.5 * torch.randn_like(lms), img) - base).norm() > 0
    assert (gen.generate(lms, img.flip(-1)) - base).norm() > 0


def test_audio_feature_returned():
    g = Generator(TINY)
    video, f_s = g(torch.randn(2, 64, 128), torch.rand(2, 3, 64, 64), return_audio_feature=True)
    assert video.shape == (2, 16, 3, 64, 64)
    assert f_s.shape == (2, TINY.audio_channels[-1], 16, 16)


def test_presets():
    assert PRESETS["wide"].fused_channels == 256
    assert ModelConfig().fused_channels == 128
    assert count_parameters(Generator(TINY)) <= 10_000
    assert get_preset("desk", n_res_blocks=3).n_res_blocks == 3
    with pytest.raises(ValueError):
        get_preset("huge")


def test_model_config_roundtrip(tmp_path):
    cfg = get_preset("desk")
    cfg.save(tmp_path / "m.json")
    assert ModelConfig.load(tmp_path / "m.json") == cfg
    with pytest.raises(ValueError):
        ModelConfig.from_dict({"colour": 1})
