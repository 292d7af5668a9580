import cmath

import numpy as np
import pytest
import torch

from evdistill.errors import ContractError
from evdistill.matching import (
    DirectionSet,
    LossWeights,
    amp_phase_loss,
    cf_spatial_loss,
    condense_loss,
    dm_loss,
    empirical_cf,
    sample_directions,
    spectral_stats,
    temporal_dft,
)
from evdistill.snn import LifParams, forward, init_network
from tests.test_snn import tiny_spec


def direction_rows(rows) -> DirectionSet:
    omega = torch.as_tensor(rows, dtype=torch.float64)
    return DirectionSet(omega=omega, seed=0)


# ---------------------------------------------------------------------------
# directions


def test_directions_deterministic():
    a = sample_directions(64, 128, seed=7)
    b = sample_directions(64, 128, seed=7)
    assert torch.equal(a.omega, b.omega)


def test_directions_degenerate_shape():
    d = sample_directions(1, 1, seed=0)
    assert d.omega.shape == (1, 1)


def test_directions_column_means_statistical():
    d = sample_directions(10_000, 4, seed=3, dtype=torch.float64)
    means = d.omega.mean(dim=0)
    bound = 5.0 / np.sqrt(10_000)  # 5 sigma / sqrt(M) for unit-variance rows
    assert torch.all(means.abs() < bound)


def test_directions_scale():
    base = sample_directions(8, 8, seed=1, dtype=torch.float64)
    scaled = sample_directions(8, 8, seed=1, dtype=torch.float64, scale=0.25)
    assert torch.allclose(scaled.omega, base.omega * 0.25)


# ---------------------------------------------------------------------------
# empirical CF


def test_cf_zero_features_is_one():
    feats = torch.zeros(3, 2, 5, dtype=torch.float64)
    z = empirical_cf(feats, sample_directions(4, 5, seed=1, dtype=torch.float64))
    assert torch.allclose(z, torch.ones_like(z))


def test_cf_conjugate_pair_cancels():
    # projections +pi/2 and -pi/2 average to cos(pi/2) = 0
    dirs = direction_rows([[1.0]])
    feats = torch.tensor([[[np.pi / 2]], [[-np.pi / 2]]], dtype=torch.float64)
    z = empirical_cf(feats, dirs)
    assert abs(z[0, 0]) < 1e-12


def test_cf_euler_identity():
    dirs = direction_rows([[1.0]])
    feats = torch.tensor([[[np.pi]]], dtype=torch.float64)
    z = empirical_cf(feats, dirs)
    assert z[0, 0].real == pytest.approx(-1.0, abs=1e-12)
    assert z[0, 0].imag == pytest.approx(0.0, abs=1e-12)


def test_cf_direct_summation_oracle():
    rng = np.random.default_rng(5)
    feats = torch.from_numpy(rng.normal(size=(7, 5, 6)))
    dirs = sample_directions(9, 6, seed=2, dtype=torch.float64)
    z = empirical_cf(feats, dirs)
    # independent elementwise oracle
    for m in range(9):
        for t in range(5):
            acc = 0j
            for b in range(7):
                acc += cmath.exp(1j * float(dirs.omega[m] @ feats[b, t]))
            assert abs(z[m, t].item() - acc / 7) < 1e-12


def test_cf_modulus_bound_fuzz():
    rng = np.random.default_rng(8)
    dirs = sample_directions(16, 4, seed=4, dtype=torch.float64)
    for _ in range(50):
        feats = torch.from_numpy(rng.normal(scale=rng.uniform(0.1, 30), size=(3, 2, 4)))
        z = empirical_cf(feats, dirs)
        assert z.abs().max().item() <= 1 + 1e-12


def test_cf_empty_batch_rejected():
    with pytest.raises(ContractError):
        empirical_cf(torch.zeros(0, 2, 3), sample_directions(2, 3, seed=0))


# ---------------------------------------------------------------------------
# temporal DFT


def test_dft_dc_only():
    z = torch.tensor([[1.0 + 0j, 1.0 + 0j]])
    f = temporal_dft(z)
    assert f[0, 0].item() == pytest.approx(1.0)
    assert abs(f[0, 1].item()) < 1e-15


def test_dft_nyquist_only():
    z = torch.tensor([[1.0 + 0j, -1.0 + 0j]])
    f = temporal_dft(z)
    assert abs(f[0, 0].item()) < 1e-15
    assert f[0, 1].item() == pytest.approx(1.0)


def test_dft_direct_summation_oracle():
    rng = np.random.default_rng(9)
    for t_len in (1, 3, 8, 16):
        z = torch.from_numpy(rng.normal(size=(5, t_len)) + 1j * rng.normal(size=(5, t_len)))
        f = temporal_dft(z)
        for m in range(5):
            for nu in range(t_len):
                acc = sum(
                    z[m, t].item() * cmath.exp(-2j * cmath.pi * nu * t / t_len)
                    for t in range(t_len)
                ) / t_len
                assert abs(f[m, nu].item() - acc) < 1e-12


# ---------------------------------------------------------------------------
# amplitude/phase loss


def test_amp_phase_identical_spectra_is_zero():
    rng = np.random.default_rng(1)
    f = torch.from_numpy(rng.normal(size=(4, 6)) + 1j * rng.normal(size=(4, 6)))
    assert amp_phase_loss(f, f.clone(), LossWeights(1.0, 1.0)).item() == 0.0


def test_amp_phase_pi_phase_flip_closed_form():
    f_r = torch.tensor([[1.0 + 0j]])
    f_s = torch.tensor([[-1.0 + 0j]])
    # amplitudes equal, phase difference pi: sqrt(2*1*1*(1-cos pi)) = 2
    assert amp_phase_loss(f_r, f_s, LossWeights(1.0, 1.0)).item() == pytest.approx(2.0)


def test_amp_phase_amplitude_only_term():
    f_r = torch.tensor([[1.0 + 0j]])
    f_s = torch.tensor([[0.0 + 0j]])
    for beta in (0.0, 0.5, 1.0):
        val = amp_phase_loss(f_r, f_s, LossWeights(1.0, beta)).item()
        assert val == pytest.approx(1.0)


def test_amp_phase_nonnegative_fuzz():
    rng = np.random.default_rng(2)
    for _ in range(100):
        f_r = torch.from_numpy(rng.normal(size=(3, 4)) + 1j * rng.normal(size=(3, 4)))
        f_s = torch.from_numpy(rng.normal(size=(3, 4)) + 1j * rng.normal(size=(3, 4)))
        w = LossWeights(rng.uniform(0, 1), rng.uniform(0, 1))
        assert amp_phase_loss(f_r, f_s, w).item() >= 0.0


def test_amp_phase_shape_mismatch():
    with pytest.raises(ContractError):
        amp_phase_loss(torch.zeros(2, 2, dtype=torch.complex128), torch.zeros(2, 3, dtype=torch.complex128))


def test_amp_phase_whole_sum_root_variant():
    rng = np.random.default_rng(3)
    f_r = torch.from_numpy(rng.normal(size=(2, 3)) + 1j * rng.normal(size=(2, 3)))
    f_s = torch.from_numpy(rng.normal(size=(2, 3)) + 1j * rng.normal(size=(2, 3)))
    w = LossWeights(1.0, 1.0)
    per_term = amp_phase_loss(f_r, f_s, w, per_term_root=True).item()
    whole = amp_phase_loss(f_r, f_s, w, per_term_root=False).item()
    bracket = (f_r - f_s).abs().pow(2)
    assert whole == pytest.approx((bracket.sum().sqrt() / bracket.numel()).item(), rel=1e-12)
    assert per_term != pytest.approx(whole)


def test_amp_phase_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    f_r = torch.from_numpy(rng.normal(size=(3, 5)) + 1j * rng.normal(size=(3, 5)))
    base = torch.from_numpy(rng.normal(size=(3, 5, 2)))
    w = LossWeights(0.7, 0.4)

    def loss_of(x):
        f_s = torch.complex(x[..., 0], x[..., 1])
        return amp_phase_loss(f_r, f_s, w)

    xa = base.clone().requires_grad_(True)
    analytic = torch.autograd.grad(loss_of(xa), xa)[0]
    h = 1e-6
    flat = base.flatten()
    for idx in rng.choice(flat.numel(), size=12, replace=False):
        e = torch.zeros_like(flat)
        e[idx] = h
        fd = (loss_of((flat + e).reshape(base.shape)).item()
              - loss_of((flat - e).reshape(base.shape)).item()) / (2 * h)
        an = analytic.flatten()[idx].item()
        assert abs(fd - an) / max(abs(fd), abs(an), 1e-9) < 1e-5


def test_phase_sensitivity_cyclic_shift():
    # one-bin cyclic shift: temporal matching sees it, mean matching cannot
    rng = np.random.default_rng(6)
    feats_r = torch.from_numpy(rng.normal(size=(4, 6, 5)))
    feats_s = torch.roll(feats_r, shifts=1, dims=1)
    dirs = sample_directions(8, 5, seed=1, dtype=torch.float64)
    st_r = spectral_stats(feats_r, dirs)
    st_s = spectral_stats(feats_s, dirs)
    st_loss = amp_phase_loss(st_r.f, st_s.f, LossWeights(0.5, 0.5))
    assert st_loss.item() > 1e-4
    mean_loss = dm_loss(feats_r.mean(dim=1), feats_s.mean(dim=1))
    assert mean_loss.item() <= 1e-12


# ---------------------------------------------------------------------------
# baselines


def test_dm_loss_examples():
    a = torch.tensor([[1.0, 2.0], [3.0, 4.0]])
    assert dm_loss(a, a.clone()).item() == 0.0
    b = a + torch.tensor([[1.0, 0.0]])
    assert dm_loss(a, b).item() == pytest.approx(1.0)


def test_dm_loss_two_pass_oracle():
    rng = np.random.default_rng(7)
    a = torch.from_numpy(rng.normal(size=(6, 9)))
    b = torch.from_numpy(rng.normal(size=(4, 9)))
    expected = float(((a.numpy().mean(axis=0) - b.numpy().mean(axis=0)) ** 2).sum())
    assert dm_loss(a, b).item() == pytest.approx(expected, abs=1e-12)


def test_dm_loss_empty_batch():
    with pytest.raises(ContractError):
        dm_loss(torch.zeros(0, 3), torch.zeros(2, 3))


def test_cf_spatial_identical_batches():
    rng = np.random.default_rng(8)
    a = torch.from_numpy(rng.normal(size=(5, 4)))
    dirs = sample_directions(6, 4, seed=2, dtype=torch.float64)
    assert cf_spatial_loss(a, a.clone(), dirs).item() == pytest.approx(0.0, abs=1e-24)


def test_cf_spatial_euler_case():
    dirs = direction_rows([[1.0]])
    a = torch.tensor([[0.0]], dtype=torch.float64)
    b = torch.tensor([[np.pi]], dtype=torch.float64)
    # |1 - (-1)|^2 = 4
    assert cf_spatial_loss(a, b, dirs).item() == pytest.approx(4.0, abs=1e-12)


def test_cf_spatial_relates_to_amp_phase_with_identity_transform():
    # with one direction the per-term amp/phase value is |dZ|, the spatial
    # loss is |dZ|^2: same quantity up to the documented normalization
    rng = np.random.default_rng(9)
    a = torch.from_numpy(rng.normal(size=(4, 3)))
    b = torch.from_numpy(rng.normal(size=(4, 3)))
    dirs = sample_directions(1, 3, seed=3, dtype=torch.float64)
    z_a = empirical_cf(a.unsqueeze(1), dirs)
    z_b = empirical_cf(b.unsqueeze(1), dirs)
    ap = amp_phase_loss(z_a, z_b, LossWeights(1.0, 1.0), per_term_root=True).item()
    sp = cf_spatial_loss(a, b, dirs).item()
    assert sp == pytest.approx(ap**2, rel=1e-9)


# ---------------------------------------------------------------------------
# condensation objective


@pytest.fixture(scope="module")
def tiny_net_and_trace():
    lif = LifParams(tau=0.5, v_th=0.5, surrogate_width=2.0)
    spec = tiny_spec(lif=lif)
    net = init_network(spec, seed=3)
    torch.manual_seed(0)
    x = (torch.rand(2, 4, 2, 8, 8) < 0.3).float()
    trace = forward(net, x)
    return spec, net, trace


def test_condense_matching_term_vanishes_on_own_stats(tiny_net_and_trace):
    spec, net, trace = tiny_net_and_trace
    layer = spec.feature_layer()
    dirs = sample_directions(8, spec.feature_dim(layer), seed=5)
    from evdistill.densify import flatten_features

    stats = spectral_stats(flatten_features(trace, layer).detach(), dirs)
    w = LossWeights(0.5, 0.5, lambda_in=1.0, lambda_inter=0.25)
    out = condense_loss(trace, stats, dirs, 0, w, layer=layer)
    assert out.match == pytest.approx(0.0, abs=1e-6)
    assert out.total.item() == pytest.approx(0.25 * out.ce, rel=1e-5)


def test_condense_reduces_to_ce_when_lambda_in_zero(tiny_net_and_trace):
    spec, net, trace = tiny_net_and_trace
    w = LossWeights(0.5, 0.5, lambda_in=0.0, lambda_inter=1.0)
    out = condense_loss(trace, None, None, 1, w, layer=spec.feature_layer())
    expected = torch.nn.functional.cross_entropy(
        trace.logits.mean(dim=1), torch.tensor([1, 1])
    ).item()
    assert out.total.item() == pytest.approx(expected, rel=1e-6)


def test_condense_pure_matching_when_lambda_inter_zero(tiny_net_and_trace):
    spec, net, trace = tiny_net_and_trace
    layer = spec.feature_layer()
    dirs = sample_directions(4, spec.feature_dim(layer), seed=6)
    from evdistill.densify import flatten_features

    real = torch.rand(5, 4, spec.feature_dim(layer))
    stats = spectral_stats(real, dirs)
    w = LossWeights(0.5, 0.5, lambda_in=2.0, lambda_inter=0.0)
    out = condense_loss(trace, stats, dirs, 0, w, layer=layer)
    assert out.total.item() == pytest.approx(2.0 * out.match, rel=1e-6)


def test_condense_label_out_of_range(tiny_net_and_trace):
    spec, net, trace = tiny_net_and_trace
    with pytest.raises(ContractError):
        condense_loss(trace, None, None, 5, LossWeights(lambda_in=0.0), layer=spec.feature_layer())


def test_loss_weights_validated():
    with pytest.raises(ContractError):
        LossWeights(alpha=1.5)
    with pytest.raises(ContractError):
        LossWeights(lambda_in=-1.0)
