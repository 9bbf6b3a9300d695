import math

import numpy as np
import pytest
import torch
from scipy.stats import chisquare

from lipsynth.config import get_preset
from lipsynth.discriminator import (EPS_P, VARIANTS, Discriminator, chance_level_loss, discriminator_loss,
                                    generator_adversarial_loss, sample_mismatch)
from lipsynth.generator import ShapeError, count_parameters

TINY = get_preset("tiny")


def _inputs(b=2):
    torch.manual_seed(0)
    return torch.randn(b, 64, 128), torch.rand(b, 16, 3, 64, 64) * 2 - 1


@pytest.mark.parametrize("variant", VARIANTS)
def test_probability_range(variant):
    d = Discriminator(TINY, variant)
    p = d(*_inputs())
    assert p.shape == (2,)
    assert torch.all((p > 0) & (p < 1))


def test_variants_differ_in_size():
    sizes = {v: count_parameters(Discriminator(TINY, v)) for v in VARIANTS}
    assert sizes["two_stream"] < sizes["three_stream"]
    assert sizes["three_stream"] != sizes["three_stream_frame_diff"]
    with pytest.raises(ValueError):
        Discriminator(TINY, "four_stream")


def test_precomputed_motion_matches():
    d = Discriminator(TINY).eval()
    lms, video = _inputs()
    assert torch.equal(d(lms, video), d(lms, video, d.flow(video)))


def test_shape_errors():
    d = Discriminator(TINY)
    lms, video = _inputs()
    with pytest.raises(ShapeError):
        d(lms, video[:, :8])
    with pytest.raises(ShapeError):
        d(lms[:1], video)


def _oracle_dis(r, f, m, lp=0.5, lu=0.5, eps=EPS_P):
    out = []
    for a, b, c in zip(r, f, m):
        a, b, c = (min(max(x, eps), 1 - eps) for x in (a, b, c))
        out.append(-math.log(a) - lp * math.log(1 - b) - lu * math.log(1 - c))
    return sum(out) / len(out)


def test_discriminator_loss_formula_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        r, f, m = (rng.uniform(0, 1, 6) for _ in range(3))
        got = discriminator_loss(*(torch.as_tensor(x) for x in (r, f, m))).item()
        assert got == pytest.approx(_oracle_dis(r, f, m), abs=1e-12)


def test_discriminator_loss_limits():
    one = torch.ones(3, dtype=torch.float64)
    perfect = discriminator_loss(one, 0 * one, 0 * one).item()
    assert perfect == pytest.approx(-math.log(1 - EPS_P) * 2.0, rel=1e-6)
    assert perfect >= 0
    assert chance_level_loss() == pytest.approx(2 * math.log(2))


def test_generator_adversarial_loss_cases():
    t = lambda x: torch.tensor([x], dtype=torch.float64)  # noqa: E731
    assert generator_adversarial_loss(t(1 - EPS_P)).item() == pytest.approx(0, abs=1e-6)
    assert generator_adversarial_loss(t(0.5)).item() == pytest.approx(math.log(2), abs=1e-12)
    assert generator_adversarial_loss(t(0.0)).item() == pytest.approx(-math.log(EPS_P))


def test_mismatch_forced_for_two():
    rng = np.random.default_rng(0)
    assert np.all(sample_mismatch(np.zeros(1000, dtype=int), 2, rng) == 1)


def test_mismatch_never_self():
    rng = np.random.default_rng(1)
    j = rng.integers(0, 7, size=10**6)
    assert not np.any(sample_mismatch(j, 7, rng) == j)


def test_mismatch_uniform_chi_square():
    rng = np.random.default_rng(2)
    k = sample_mismatch(np.full(10**5, 2), 5, rng)
    counts = np.bincount(k, minlength=5)
    assert counts[2] == 0
    assert chisquare(counts[[0, 1, 3, 4]]).pvalue > 0.01


def test_mismatch_needs_two():
    with pytest.raises(ValueError):
        sample_mismatch([0], 1, np.random.default_rng(0))
