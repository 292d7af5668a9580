import numpy as np
import pytest
import torch

from evdistill.errors import ConfigError, ContractError
from evdistill.snn import (
    AvgPool,
    Conv,
    Flatten,
    LifParams,
    Linear,
    Network,
    NetworkSpec,
    backward,
    default_network,
    forward,
    init_network,
    lif_step,
    load_weights,
    save_weights,
    surrogate,
    train_student,
    weights_fingerprint,
)

LIF = LifParams(tau=0.5, v_th=1.0, v_reset=0.0, surrogate_width=1.0)


def tiny_spec(lif=LIF, k=2, side=8, channels=(4, 8)):
    return NetworkSpec(
        input_shape=(2, side, side),
        layers=(
            Conv(channels[0], lif=lif),
            AvgPool(2),
            Conv(channels[1], lif=lif),
            AvgPool(2),
            Flatten(),
            Linear(k),
        ),
        class_count=k,
    )


# ---------------------------------------------------------------------------
# lif_step / surrogate


def test_lif_step_fires_and_resets():
    h, s, v = lif_step(torch.tensor(0.0), torch.tensor(2.0), LIF)
    assert (h.item(), s.item(), v.item()) == (1.0, 1.0, 0.0)


def test_lif_step_leaks_subthreshold():
    h, s, v = lif_step(torch.tensor(0.2), torch.tensor(0.0), LIF)
    assert h.item() == pytest.approx(0.1)
    assert s.item() == 0.0
    assert v.item() == pytest.approx(0.1)


def test_lif_step_fixed_point_at_reset():
    params = LifParams(tau=0.5, v_th=1.0, v_reset=0.3)
    h, s, v = lif_step(torch.tensor(0.3), torch.tensor(0.0), params)
    assert h.item() == pytest.approx(0.3)
    assert s.item() == 0.0
    assert v.item() == pytest.approx(0.3)


def test_surrogate_window():
    assert surrogate(torch.tensor(0.0), 1.0).item() == 1.0
    assert surrogate(torch.tensor(0.6), 1.0).item() == 0.0
    assert surrogate(torch.tensor(-0.5), 1.0).item() == 1.0  # boundary inclusive


def test_threshold_boundary_fires():
    # step(0) = 1: h exactly at threshold emits a spike
    h, s, v = lif_step(torch.tensor(0.0), torch.tensor(2.0), LifParams(tau=0.5, v_th=1.0))
    assert s.item() == 1.0


def test_lif_params_validation():
    with pytest.raises(ConfigError):
        LifParams(tau=1.5)
    with pytest.raises(ConfigError):
        LifParams(v_th=0.0, v_reset=0.0)


# ---------------------------------------------------------------------------
# forward traces


def test_forward_zero_input_zero_logits():
    spec = tiny_spec()
    net = init_network(spec, seed=1)
    x = torch.zeros(2, 3, 2, 8, 8)
    trace = forward(net, x)
    assert torch.all(trace.logits == 0)  # biases are zero-initialized
    for cell in trace.cells:
        assert torch.all(cell.s == 0)


def test_forward_strong_input_first_layer_fires_everywhere():
    lif = LifParams(tau=1.0, v_th=0.1, v_reset=0.0, surrogate_width=1.0)
    spec = tiny_spec(lif=lif)
    net = init_network(spec, seed=1)
    for key in net.params:
        if key.startswith("l0.") and key.endswith("bias"):
            net.params[key] = net.params[key] + 10.0  # drive every unit over threshold
    trace = forward(net, torch.zeros(1, 2, 2, 8, 8))
    assert torch.all(trace.cells[0].s[:, 0] == 1)


def test_forward_constant_frame_tau_one_constant_h():
    lif = LifParams(tau=1.0, v_th=0.7, v_reset=0.0)
    spec = tiny_spec(lif=lif)
    net = init_network(spec, seed=3)
    frame = torch.rand(1, 1, 2, 8, 8).repeat(1, 4, 1, 1, 1)
    trace = forward(net, frame)
    h = trace.cells[0].h
    for t in range(1, 4):
        # with tau=1 the membrane update collapses to h[t] = x[t]
        assert torch.allclose(h[:, t], h[:, 0], atol=1e-6)


def test_forward_trace_consistency_fuzz():
    spec = tiny_spec()
    net = init_network(spec, seed=9)
    x = (torch.rand(3, 4, 2, 8, 8) < 0.2).float() * 2.0
    trace = forward(net, x)
    for cell in trace.cells:
        lif = spec.layers[cell.layer_index].lif
        expected_s = (cell.h >= lif.v_th).to(cell.s.dtype)
        assert torch.equal(cell.s, expected_s)
        expected_v = cell.h * (1 - cell.s) + lif.v_reset * cell.s
        assert torch.allclose(cell.v, expected_v, atol=1e-6)


def test_forward_shape_mismatch_raises():
    net = init_network(tiny_spec(), seed=1)
    with pytest.raises(ConfigError, match="shape"):
        forward(net, torch.zeros(1, 3, 2, 9, 9))


def test_spec_validates_readout():
    with pytest.raises(ConfigError):
        NetworkSpec(input_shape=(2, 8, 8), layers=(Flatten(), Linear(3)), class_count=2)
    with pytest.raises(ConfigError):
        NetworkSpec(
            input_shape=(2, 8, 8),
            layers=(Flatten(), Linear(2, lif=LIF)),
            class_count=2,
        )


# ---------------------------------------------------------------------------
# backward


def test_backward_zero_upstream_gives_zero_grads():
    spec = tiny_spec()
    net = init_network(spec, seed=2)
    x = torch.rand(1, 3, 2, 8, 8, requires_grad=True)
    trace = forward(net, x)
    report = backward(net, trace, 0.0 * trace.logits.sum())
    assert torch.all(report.input_grad == 0)
    assert all(torch.all(g == 0) for g in report.weight_grads.values())
    assert report.loss == 0.0


def test_backward_subthreshold_densified_equals_scaled_h_grad():
    lif = LifParams(tau=0.5, v_th=2.0, v_reset=0.0)
    spec = tiny_spec(lif=lif)
    net = init_network(spec, seed=4)
    x = 0.01 * torch.rand(1, 3, 2, 8, 8)  # guaranteed subthreshold
    xa = x.clone().requires_grad_(True)
    trace = forward(net, xa)
    assert torch.all(trace.cells[0].s == 0)
    ga = torch.autograd.grad(trace.cells[0].densified.sum(), xa, retain_graph=True)[0]
    gb = torch.autograd.grad(trace.cells[0].h.sum() / lif.v_th, xa)[0]
    assert torch.allclose(ga, gb, atol=1e-7)


def test_backward_requires_matching_net():
    spec = tiny_spec()
    net_a = init_network(spec, seed=1)
    net_b = init_network(spec, seed=2)
    trace = forward(net_a, torch.zeros(1, 2, 2, 8, 8))
    with pytest.raises(ContractError):
        backward(net_b, trace, trace.logits.sum())


def test_relaxed_mode_gradient_matches_finite_differences():
    torch.manual_seed(0)
    lif = LifParams(tau=0.5, v_th=0.5, v_reset=0.0, surrogate_width=2.0)
    spec = tiny_spec(lif=lif, side=8, channels=(3, 5))
    net = init_network(spec, seed=5, dtype=torch.float64)
    x = torch.rand(1, 4, 2, 8, 8, dtype=torch.float64)

    def loss_at(inp):
        trace = forward(net, inp, relaxed=True)
        return trace.logits.double().pow(2).sum()

    xa = x.clone().requires_grad_(True)
    analytic = torch.autograd.grad(loss_at(xa), xa)[0]
    rng = np.random.default_rng(11)
    flat = x.flatten()
    h = 1e-5
    checked = 0
    for idx in rng.choice(flat.numel(), size=64, replace=False):
        e = torch.zeros_like(flat)
        e[idx] = h
        up = loss_at((flat + e).reshape(x.shape)).item()
        down = loss_at((flat - e).reshape(x.shape)).item()
        fd = (up - down) / (2 * h)
        an = analytic.flatten()[idx].item()
        scale = max(abs(fd), abs(an), 1e-8)
        assert abs(fd - an) / scale < 1e-4
        checked += 1
    assert checked == 64


# ---------------------------------------------------------------------------
# training


def _separable_toy(n=60, seed=0):
    # class 0 drives the left half of the frame, class 1 the right half
    rng = np.random.default_rng(seed)
    grids, labels = [], []
    for i in range(n):
        label = i % 2
        g = np.zeros((2, 2, 8, 8), dtype=np.int32)
        cols = slice(0, 4) if label == 0 else slice(4, 8)
        g[:, :, :, cols] = (rng.random((2, 2, 8, 4)) < 0.6).astype(np.int32)
        noise = (rng.random(g.shape) < 0.05).astype(np.int32)
        grids.append(np.maximum(g, noise))
        labels.append(label)
    return torch.from_numpy(np.stack(grids)).float(), torch.tensor(labels)


def test_train_student_learns_separable_toy():
    lif = LifParams(tau=0.5, v_th=0.5, surrogate_width=2.0)
    spec = tiny_spec(lif=lif)
    net = init_network(spec, seed=21)
    x, y = _separable_toy(80, seed=1)
    tx, ty = _separable_toy(40, seed=2)
    result = train_student(net, x, y, epochs=25, lr=0.05, seed=3, holdout=(tx, ty), batch_size=8)
    assert result.accuracy >= 0.95


def test_train_student_zero_epochs_returns_initial_weights():
    spec = tiny_spec()
    net = init_network(spec, seed=21)
    x, y = _separable_toy(20, seed=1)
    result = train_student(net, x, y, epochs=0, lr=0.1, seed=3, holdout=(x, y))
    for key in net.params:
        assert torch.equal(result.net.params[key], net.params[key])
    assert 0.2 <= result.accuracy <= 0.8  # chance within binomial noise


def test_train_student_seed_determinism():
    spec = tiny_spec()
    net = init_network(spec, seed=21)
    x, y = _separable_toy(30, seed=1)
    r1 = train_student(net, x, y, epochs=3, lr=0.05, seed=5, holdout=(x, y), batch_size=8)
    r2 = train_student(net, x, y, epochs=3, lr=0.05, seed=5, holdout=(x, y), batch_size=8)
    for key in r1.net.params:
        assert torch.equal(r1.net.params[key], r2.net.params[key])


def test_train_student_empty_dataset_raises():
    net = init_network(tiny_spec(), seed=1)
    with pytest.raises(ContractError):
        train_student(net, torch.zeros(0, 2, 2, 8, 8), torch.zeros(0, dtype=torch.long),
                      epochs=1, lr=0.1, seed=0, holdout=(torch.zeros(1, 2, 2, 8, 8), torch.tensor([0])))


# ---------------------------------------------------------------------------
# serialization


def test_weights_round_trip(tmp_path):
    spec = tiny_spec()
    net = init_network(spec, seed=77)
    path = tmp_path / "weights.evd"
    save_weights(net, path)
    loaded = load_weights(spec, path)
    assert weights_fingerprint(loaded) == weights_fingerprint(net)


def test_load_weights_shape_mismatch(tmp_path):
    net = init_network(tiny_spec(channels=(4, 8)), seed=77)
    path = tmp_path / "weights.evd"
    save_weights(net, path)
    with pytest.raises(ContractError):
        load_weights(tiny_spec(channels=(5, 8)), path)


def test_default_network_shapes():
    spec = default_network((2, 32, 32), 10)
    shapes = spec.layer_shapes()
    assert shapes[-1] == (10,)
    assert spec.feature_layer() == 2
    assert spec.feature_dim(2) == 64 * 16 * 16
