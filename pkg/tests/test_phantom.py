import numpy as np
import pytest
import torch

from genrecmr.numerics import Rng, fft2c
from genrecmr.phantom import (DOMAIN_TABLE, UNSEEN_DOMAIN_ID, make_dynamic_phantom,
                              simulate_coils, to_kspace_dataset)
from genrecmr.sampling import uniform_kt_mask


def test_same_seed_same_sequence():
    a = make_dynamic_phantom(32, 32, 5, domain_id=1, rng=Rng(77))
    b = make_dynamic_phantom(32, 32, 5, domain_id=1, rng=Rng(77))
    assert torch.equal(a.frames, b.frames)
    assert a.domain_id == b.domain_id == 1


def test_different_seeds_give_different_anatomy():
    a = make_dynamic_phantom(32, 32, 5, 0, Rng(1))
    b = make_dynamic_phantom(32, 32, 5, 0, Rng(2))
    assert not torch.equal(a.frames, b.frames)


def test_held_out_domain_parameters_are_distinct():
    held_out = DOMAIN_TABLE[UNSEEN_DOMAIN_ID]
    for d in range(UNSEEN_DOMAIN_ID):
        assert held_out.noise_sigma != DOMAIN_TABLE[d].noise_sigma
        assert held_out.contrast_gamma != DOMAIN_TABLE[d].contrast_gamma


def test_sequence_has_motion():
    seq = make_dynamic_phantom(48, 48, 8, 0, Rng(5)).frames
    for f in range(7):
        assert float((seq[f + 1] - seq[f]).abs().mean()) > 0


def test_magnitude_normalized_to_one():
    seq = make_dynamic_phantom(32, 32, 6, 2, Rng(9)).frames
    assert abs(float(seq.abs().max()) - 1.0) < 1e-12


def test_phantom_input_validation():
    with pytest.raises(ValueError):
        make_dynamic_phantom(16, 32, 5, 0, Rng(0))  # too small
    with pytest.raises(ValueError):
        make_dynamic_phantom(32, 32, 4, 0, Rng(0))  # too few frames
    with pytest.raises(ValueError):
        make_dynamic_phantom(32, 32, 5, len(DOMAIN_TABLE), Rng(0))
    with pytest.raises(ValueError):
        make_dynamic_phantom(32, 32, 5, -1, Rng(0))


# ------------------------------------------------------------------ coils

def test_coil_images_factor_into_truth_times_profiles():
    seq = make_dynamic_phantom(32, 32, 5, 0, Rng(3))
    mc, profiles = simulate_coils(seq, 4, Rng(4))
    assert mc.shape == (5, 4, 32, 32)
    rss_mc = (mc.abs() ** 2).sum(dim=1).sqrt()
    rss_maps = (profiles.maps.abs() ** 2).sum(dim=0).sqrt()
    want = seq.frames.abs() * rss_maps.unsqueeze(0)
    assert float((rss_mc - want).abs().max()) < 1e-12


def test_profiles_are_nonzero_everywhere_with_unit_rss_peak():
    seq = make_dynamic_phantom(32, 32, 5, 1, Rng(6))
    _, profiles = simulate_coils(seq, 3, Rng(7))
    assert float(profiles.maps.abs().min()) > 0
    rss = (profiles.maps.abs() ** 2).sum(dim=0).sqrt()
    assert float(rss.max()) <= 1.0 + 1e-12
    assert abs(float(rss.max()) - 1.0) < 1e-12


def test_single_coil_rejected():
    seq = make_dynamic_phantom(32, 32, 5, 0, Rng(0))
    with pytest.raises(ValueError):
        simulate_coils(seq, 1, Rng(0))


# ------------------------------------------------------------ k-space prep

@pytest.fixture()
def mc_frames():
    seq = make_dynamic_phantom(32, 32, 5, 0, Rng(11))
    mc, _ = simulate_coils(seq, 2, Rng(12))
    return mc


def test_full_mask_means_no_information_loss(mc_frames):
    mask = uniform_kt_mask(32, 32, frames=5, accel=1, acs_lines=0)
    k0, kg = to_kspace_dataset(mc_frames, mask, adjacent=3)
    assert len(k0) == len(kg) == 5
    for a, b in zip(k0, kg):
        assert torch.equal(a, b)


def test_masking_is_elementwise_and_zeroes_the_rest(mc_frames):
    mask = uniform_kt_mask(32, 32, frames=5, accel=4, acs_lines=8, rng=Rng(0))
    k0, kg = to_kspace_dataset(mc_frames, mask, adjacent=3)
    for central in range(5):
        idx = [max(central - 1, 0), central, min(central + 1, 4)]
        m = mask.mask[idx].unsqueeze(1).to(kg[central].real.dtype)
        assert torch.equal(k0[central], kg[central] * m)
        assert torch.all(k0[central][m.expand_as(k0[central]) == 0] == 0)


def test_ground_truth_stack_is_the_centered_fft(mc_frames):
    mask = uniform_kt_mask(32, 32, frames=5, accel=2, acs_lines=4)
    _, kg = to_kspace_dataset(mc_frames, mask, adjacent=3)
    want = fft2c(mc_frames[2])
    assert torch.equal(kg[2][1], want)  # central slot of the central frame


def test_adjacent_stack_clamps_at_sequence_edges(mc_frames):
    mask = uniform_kt_mask(32, 32, frames=5, accel=2, acs_lines=4)
    _, kg = to_kspace_dataset(mc_frames, mask, adjacent=5)
    k_full = fft2c(mc_frames)
    # central frame 0 -> indices (-2,-1,0,1,2) clamp to (0,0,0,1,2)
    assert torch.equal(kg[0][0], k_full[0])
    assert torch.equal(kg[0][1], k_full[0])
    assert torch.equal(kg[0][4], k_full[2])
    # central frame 4 -> (2,3,4,4,4)
    assert torch.equal(kg[4][3], k_full[4])
    assert torch.equal(kg[4][4], k_full[4])


def test_kspace_prep_input_validation(mc_frames):
    mask = uniform_kt_mask(32, 32, frames=5, accel=2, acs_lines=4)
    with pytest.raises(ValueError):
        to_kspace_dataset(mc_frames, mask, adjacent=4)  # even
    with pytest.raises(ValueError):
        to_kspace_dataset(mc_frames, mask, adjacent=7)  # longer than the sequence
    short = uniform_kt_mask(32, 32, frames=4, accel=2, acs_lines=4)
    with pytest.raises(ValueError):
        to_kspace_dataset(mc_frames, short, adjacent=3)
