import math

import numpy as np
import pytest

from crossalign.alignment_head import ProposalSample
from crossalign.deviation import decode, encode
from crossalign.geometry import RotatedBox
from crossalign.jitter import JitterConfig, jitter_box, jitter_dataset
from crossalign.pooling import FeatureMap, PooledFeature, rotated_roi_align
from crossalign.rng import SplitMix64

from experiments import jitter_moments

ZERO_SIGMA = JitterConfig(0, 0, 0, 0, 0)


def _fm():
    return FeatureMap(SplitMix64(0).normal(size=(2, 40, 40)))


def _positive(fm, proposal, sensed):
    phi = rotated_roi_align(fm, proposal, 3, 2)
    return ProposalSample(phi, phi, True, encode(proposal, sensed), sensed_proposal=proposal,
                          sensed_box=sensed, fm_sensed=fm)


def _negative():
    z = PooledFeature(np.zeros((2, 3, 3)))
    return ProposalSample(z, z, False)


def test_zero_sigma_unchanged():
    box = RotatedBox(10, 12, 8, 4, 1.3)
    assert jitter_box(box, ZERO_SIGMA, SplitMix64(1)) == box


def test_same_seed_same_output():
    box = RotatedBox(10, 12, 8, 4, 1.3)
    cfg = JitterConfig()
    assert jitter_box(box, cfg, SplitMix64(3)) == jitter_box(box, cfg, SplitMix64(3))
    assert jitter_box(box, cfg, SplitMix64(3)) != jitter_box(box, cfg, SplitMix64(4))


def test_negative_sigma_rejected():
    with pytest.raises(ValueError):
        JitterConfig(sigma_w=-0.1)


def test_sizes_stay_positive_under_large_jitter():
    rng = SplitMix64(5)
    cfg = JitterConfig(1, 1, 2, 2, 1)
    box = RotatedBox(0, 0, 4, 2, 0)
    for _ in range(500):
        j = jitter_box(box, cfg, rng)
        assert j.w > 0 and j.h > 0


def test_moments_small_sample():
    mean, std = jitter_moments(20_000, seed=11)
    assert np.all(np.abs(mean) <= 4 * 0.05 / math.sqrt(20_000))
    assert np.all(np.abs(std / 0.05 - 1) <= 0.03)


def test_dataset_counts_and_negatives():
    fm = _fm()
    pos = [_positive(fm, RotatedBox(20, 20, 10, 6, 0.2), RotatedBox(21, 19, 10, 6, 0.25)) for _ in range(3)]
    neg = [_negative(), _negative()]
    out = jitter_dataset(pos + neg, JitterConfig(seed=1), copies=4)
    assert len(out) == 3 * 4 + 2
    assert sum(not s.positive for s in out) == 2
    assert out[-1] is neg[-1]


def test_zero_sigma_single_copy_unchanged():
    fm = _fm()
    s = _positive(fm, RotatedBox(20, 20, 10, 6, 0.2), RotatedBox(21, 19, 10, 6, 0.25))
    (out,) = jitter_dataset([s], ZERO_SIGMA, copies=1)
    assert out.sensed_proposal == s.sensed_proposal
    assert np.array_equal(out.phi_s.data, s.phi_s.data)
    assert out.target.as_array() == pytest.approx(s.target.as_array(), abs=1e-15)


def test_retargeted_sample_decodes_to_sensed_box():
    fm = _fm()
    sensed = RotatedBox(21, 19, 10, 6, 0.25)
    s = _positive(fm, RotatedBox(20, 20, 10, 6, 0.2), sensed)
    for j in jitter_dataset([s], JitterConfig(0.1, 0.1, 0.1, 0.1, 0.1, seed=2), copies=10):
        assert j.sensed_proposal != s.sensed_proposal
        back = decode(j.sensed_proposal, j.target)
        assert back.as_tuple() == pytest.approx(sensed.as_tuple(), abs=1e-9)
        assert np.array_equal(j.phi_s.data, rotated_roi_align(fm, j.sensed_proposal, 3, 2).data)
        assert j.phi_r is s.phi_r


def test_dataset_deterministic():
    fm = _fm()
    s = _positive(fm, RotatedBox(20, 20, 10, 6, 0.2), RotatedBox(21, 19, 10, 6, 0.25))
    a = jitter_dataset([s, s], JitterConfig(seed=9), copies=3)
    b = jitter_dataset([s, s], JitterConfig(seed=9), copies=3)
    assert [x.sensed_proposal for x in a] == [x.sensed_proposal for x in b]


def test_custom_repool_hook():
    fm = _fm()
    s = _positive(fm, RotatedBox(20, 20, 10, 6, 0.2), RotatedBox(21, 19, 10, 6, 0.25))
    marker = PooledFeature(np.full((2, 3, 3), 7.0))
    (out,) = jitter_dataset([s], JitterConfig(seed=1), repool=lambda sample, box: marker)
    assert out.phi_s is marker


def test_copies_must_be_positive():
    with pytest.raises(ValueError):
        jitter_dataset([], JitterConfig(), copies=0)
