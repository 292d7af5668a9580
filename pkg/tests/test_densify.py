import pytest
import torch
from hypothesis import given, strategies as st

from evdistill.densify import densify, flatten_features
from evdistill.errors import ContractError
from evdistill.snn import LifParams, forward, init_network
from tests.test_snn import tiny_spec


def test_spike_branch_is_one():
    out = densify(torch.tensor(1.0), torch.tensor(1.7), v_th=1.0)
    assert out.item() == 1.0


def test_subthreshold_branch_scales_by_threshold():
    out = densify(torch.tensor(0.0), torch.tensor(0.3), v_th=1.0)
    assert out.item() == pytest.approx(0.3)


def test_negative_residual():
    out = densify(torch.tensor(0.0), torch.tensor(-0.2), v_th=0.5)
    assert out.item() == pytest.approx(-0.4)


def test_invalid_threshold():
    with pytest.raises(ContractError):
        densify(torch.zeros(2), torch.zeros(2), v_th=0.0)


def test_shape_mismatch():
    with pytest.raises(ContractError):
        densify(torch.zeros(2), torch.zeros(3), v_th=1.0)


@given(st.integers(0, 2**32 - 1))
def test_range_never_exceeds_one(seed):
    gen = torch.Generator().manual_seed(seed)
    h = torch.randn(4, 5, generator=gen) * 3
    v_th = float(torch.rand(1, generator=gen).item()) + 0.1
    s = (h >= v_th).float()
    out = densify(s, h, v_th)
    assert out.max().item() <= 1.0 + 1e-6


def test_subthreshold_gradient_is_inverse_threshold():
    h = torch.randn(3, 4, requires_grad=True)
    s = torch.zeros(3, 4)
    v_th = 0.8
    out = densify(s, h, v_th)
    (grad,) = torch.autograd.grad(out.sum(), h)
    assert torch.allclose(grad, torch.full_like(grad, 1.0 / v_th))


def test_spiking_sites_carry_zero_gradient():
    h = torch.randn(10, requires_grad=True)
    s = (torch.arange(10) % 2 == 0).float()
    out = densify(s, h, v_th=1.0)
    (grad,) = torch.autograd.grad(out.sum(), h)
    assert torch.all(grad[s == 1] == 0)
    assert torch.all(grad[s == 0] == 1.0)


def test_flatten_features_shape_and_order():
    spec = tiny_spec(lif=LifParams(tau=0.5, v_th=0.5, surrogate_width=2.0))
    net = init_network(spec, seed=1)
    trace = forward(net, torch.rand(3, 2, 2, 8, 8))
    feats = flatten_features(trace, layer=0)
    cell = trace.cell(0)
    b, t = cell.densified.shape[:2]
    assert feats.shape == (b, t, cell.densified[0, 0].numel())
    # row-major (C, H, W) flattening preserves values bit-exactly
    assert torch.equal(feats[1, 1], cell.densified[1, 1].reshape(-1))


def test_flatten_features_spikes_kind():
    spec = tiny_spec()
    net = init_network(spec, seed=1)
    trace = forward(net, torch.rand(2, 2, 2, 8, 8))
    feats = flatten_features(trace, layer=0, kind="spikes")
    assert set(feats.unique().tolist()) <= {0.0, 1.0}


def test_flatten_features_rejects_non_lif_layer():
    spec = tiny_spec()
    net = init_network(spec, seed=1)
    trace = forward(net, torch.rand(1, 2, 2, 8, 8))
    with pytest.raises(ContractError):
        flatten_features(trace, layer=1)  # pooling layer, no cell
