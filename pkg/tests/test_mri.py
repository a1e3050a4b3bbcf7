import numpy as np
import pytest
import torch

from genrecmr.mri import (KSpaceVolume, SensitivityMaps, adjoint_operator, coil_combine,
                          coil_expand, data_consistency, estimate_sensitivities,
                          extract_acs, forward_operator)
from genrecmr.numerics import NonFiniteError, Rng, fft2c, ifft2c
from genrecmr.phantom import make_dynamic_phantom, simulate_coils
from genrecmr.sampling import acs_row_slice, uniform_kt_mask


def random_stack(rng, *shape):
    return torch.complex(torch.as_tensor(rng.normal(0, 1, size=shape)),
                         torch.as_tensor(rng.normal(0, 1, size=shape)))


@pytest.fixture()
def coil_scene():
    seq = make_dynamic_phantom(32, 32, 5, 0, Rng(21))
    mc, profiles = simulate_coils(seq, 4, Rng(22))
    return seq, mc, profiles


# ------------------------------------------------------------ kspace stack

def test_volume_shape_and_central_frame():
    rng = np.random.default_rng(0)
    k = KSpaceVolume(random_stack(rng, 5, 2, 8, 8))
    assert k.adjacent == 5
    assert k.coils == 2
    assert k.central_index == 2
    assert torch.equal(k.central, k.data[2])


def test_volume_rejects_bad_inputs():
    rng = np.random.default_rng(1)
    with pytest.raises(ValueError):
        KSpaceVolume(random_stack(rng, 2, 8, 8))
    with pytest.raises(ValueError):
        KSpaceVolume(random_stack(rng, 3, 2, 8, 8), central_index=0)
    bad = random_stack(rng, 3, 2, 8, 8)
    bad[0, 0, 0, 0] = complex(float("nan"), 0)
    with pytest.raises(NonFiniteError):
        KSpaceVolume(bad)


# ------------------------------------------------------------- acs extract

def test_extract_acs_full_height_is_identity():
    rng = np.random.default_rng(2)
    k = KSpaceVolume(random_stack(rng, 3, 2, 16, 16))
    out = extract_acs(k, 16)
    assert torch.equal(out.data, k.data)


def test_extract_acs_keeps_only_central_rows():
    rng = np.random.default_rng(3)
    k = KSpaceVolume(random_stack(rng, 3, 2, 16, 12))
    out = extract_acs(k, 6)
    rows = acs_row_slice(16, 6)
    assert torch.equal(out.data[:, :, rows, :], k.data[:, :, rows, :])
    keep = torch.zeros(16, dtype=torch.bool)
    keep[rows] = True
    assert torch.all(out.data[:, :, ~keep, :] == 0)


def test_extract_acs_checks_the_mask_band():
    rng = np.random.default_rng(4)
    k = KSpaceVolume(random_stack(rng, 3, 2, 16, 16))
    good = uniform_kt_mask(16, 16, frames=3, accel=2, acs_lines=6)
    extract_acs(k, 6, mask=good)  # fine
    hole = uniform_kt_mask(16, 16, frames=3, accel=2, acs_lines=6)
    hole.mask[1, acs_row_slice(16, 6), :] = 0.0
    with pytest.raises(ValueError):
        extract_acs(k, 6, mask=hole)


def test_extract_acs_rejects_empty_band_rows():
    data = torch.zeros(3, 2, 16, 16, dtype=torch.complex128)
    data[:, :, :4, :] = 1.0  # signal only far from the center
    with pytest.raises(ValueError):
        extract_acs(KSpaceVolume(data), 6)
    with pytest.raises(ValueError):
        extract_acs(KSpaceVolume(data), 17)


# ------------------------------------------------------------ sensitivities

def test_estimated_maps_have_unit_rss(coil_scene):
    seq, mc, _ = coil_scene
    k = fft2c(mc[:3])
    sens = estimate_sensitivities(KSpaceVolume(k))
    rss = sens.s.abs().pow(2).sum(dim=0).sqrt()
    # unit RSS wherever the scene has signal (the floor only matters in
    # the empty background)
    signal = mc[1].abs().sum(dim=0) > 1e-6
    assert float((rss[signal] - 1.0).abs().max()) < 1e-6


def test_estimated_maps_match_truth_up_to_a_common_phase(coil_scene):
    seq, mc, profiles = coil_scene
    k = fft2c(mc[:3])  # full sampling = perfect calibration data
    sens = estimate_sensitivities(KSpaceVolume(k))
    rss_true = profiles.maps.abs().pow(2).sum(dim=0).sqrt()
    s_true = profiles.maps / rss_true.clamp_min(1e-12)
    strong = seq.frames[1].abs() > 0.3
    assert strong.sum() > 50
    # magnitudes agree...
    mag_err = (sens.s.abs() - s_true.abs())[:, strong].abs().max()
    assert float(mag_err) < 1e-6
    # ...and the phase mismatch is a single per-pixel gauge angle shared
    # by all coils (the truth image's phase); the gauge magnitude still
    # scales with each coil's own profile, so compare unit phasors
    gauge = sens.s * s_true.conj()
    phasor = gauge / gauge.abs().clamp_min(1e-30)
    spread = (phasor - phasor.mean(dim=0, keepdim=True)).abs()[:, strong].max()
    assert float(spread) < 1e-6


def test_refined_maps_keep_unit_rss(coil_scene):
    _, mc, _ = coil_scene

    class Bump(torch.nn.Module):
        def forward(self, x):
            return 0.05 * torch.ones_like(x)

    sens = estimate_sensitivities(KSpaceVolume(fft2c(mc[:3])), refiner=Bump())
    rss = sens.s.abs().pow(2).sum(dim=0).sqrt()
    signal = mc[1].abs().sum(dim=0) > 1e-6
    assert float((rss[signal] - 1.0).abs().max()) < 1e-6


def test_all_zero_acs_rejected():
    z = torch.zeros(3, 2, 16, 16, dtype=torch.complex128)
    with pytest.raises(ValueError):
        estimate_sensitivities(KSpaceVolume(z))


# ----------------------------------------------------- combine / expand

def test_combine_then_expand_of_pure_profile_data(coil_scene):
    seq, mc, _ = coil_scene
    sens = estimate_sensitivities(KSpaceVolume(fft2c(mc[:3])))
    combined = coil_combine(mc[1], sens)
    back = coil_expand(combined, sens)
    # with exact maps (up to gauge) the SENSE model is consistent:
    # expand(combine(x)) reproduces the coil images where RSS(s) = 1
    signal = mc[1].abs().sum(dim=0) > 1e-6
    err = (back - mc[1]).abs()[:, signal].max()
    assert float(err) < 1e-6


def test_expand_is_the_adjoint_of_combine():
    rng = np.random.default_rng(5)
    s = random_stack(rng, 4, 12, 12)
    s = s / s.abs().pow(2).sum(dim=0).sqrt()
    sens = SensitivityMaps.from_maps(s)
    x = random_stack(rng, 12, 12)
    y = random_stack(rng, 4, 12, 12)
    lhs = torch.sum(coil_expand(x, sens) * y.conj())
    rhs = torch.sum(x * coil_combine(y, sens).conj())
    assert abs(complex(lhs - rhs)) < 1e-10


def test_masked_forward_and_adjoint_operators_are_adjoint():
    rng = np.random.default_rng(6)
    s = random_stack(rng, 3, 16, 16)
    s = s / s.abs().pow(2).sum(dim=0).sqrt()
    sens = SensitivityMaps.from_maps(s)
    mask = uniform_kt_mask(16, 16, frames=5, accel=4, acs_lines=4)
    mvol = mask.volume(2, 5).to(torch.float64)
    x = random_stack(rng, 16, 16)
    y = random_stack(rng, 5, 3, 16, 16)
    lhs = torch.sum(forward_operator(x, sens, mvol, adjacent=5) * y.conj())
    rhs = torch.sum(x * adjoint_operator(y, sens, mvol).conj())
    assert abs(complex(lhs - rhs)) / abs(complex(lhs)) < 1e-10


def test_coil_count_mismatch_rejected():
    rng = np.random.default_rng(7)
    s = random_stack(rng, 3, 8, 8)
    sens = SensitivityMaps.from_maps(s)
    with pytest.raises(ValueError):
        coil_combine(random_stack(rng, 4, 8, 8), sens)
    with pytest.raises(ValueError):
        coil_expand(random_stack(rng, 6, 6), sens)


# --------------------------------------------------------- data consistency

def test_data_consistency_matches_elementwise_formula():
    rng = np.random.default_rng(8)
    shape = (3, 2, 8, 8)
    k_t = random_stack(rng, *shape)
    k_0 = random_stack(rng, *shape)
    g_k = random_stack(rng, *shape)
    m = torch.as_tensor((rng.uniform(size=(3, 1, 8, 8)) < 0.4).astype(np.float64))
    eta = 0.37
    got = data_consistency(k_t, k_0, m, eta, g_k).numpy()
    want = k_t.numpy() - eta * (m.numpy() * (k_t.numpy() - k_0.numpy())) + g_k.numpy()
    assert np.abs(got - want).max() < 1e-12


def test_data_consistency_zero_step_is_identity_plus_generator_term():
    rng = np.random.default_rng(9)
    k_t = random_stack(rng, 2, 2, 6, 6)
    k_0 = random_stack(rng, 2, 2, 6, 6)
    m = torch.ones(2, 1, 6, 6, dtype=torch.float64)
    out = data_consistency(k_t, k_0, m, 0.0, torch.zeros_like(k_t))
    assert torch.equal(out, k_t)


def test_data_consistency_full_step_replaces_sampled_entries():
    rng = np.random.default_rng(10)
    k_t = random_stack(rng, 2, 2, 6, 6)
    k_0 = random_stack(rng, 2, 2, 6, 6)
    m = torch.zeros(2, 1, 6, 6, dtype=torch.float64)
    m[:, :, ::2, :] = 1.0
    g = random_stack(rng, 2, 2, 6, 6)
    out = data_consistency(k_t, k_0, m, 1.0, g)
    on = m.expand_as(k_t) == 1
    assert float((out - (k_0 + g))[on].abs().max()) < 1e-15
    assert float((out - (k_t + g))[~on].abs().max()) < 1e-15


def test_data_consistency_shape_checks():
    a = torch.zeros(2, 2, 4, 4, dtype=torch.complex128)
    b = torch.zeros(2, 2, 4, 5, dtype=torch.complex128)
    with pytest.raises(ValueError):
        data_consistency(a, b, torch.ones(2, 1, 4, 4), 1.0, a)
