"""Leaky integrate-and-fire networks with surrogate-gradient reverse mode.

The membrane update per step is

    h[t] = v[t-1] + tau * (x[t] - (v[t-1] - v_reset))
    s[t] = step(h[t] - v_th)
    v[t] = h[t] * (1 - s[t]) + v_reset * s[t]

Hard mode fires Heaviside spikes (step(0) = 1) and substitutes a rectangular
pseudo-derivative of width ``surrogate_width`` for the step in the backward
pass; the reset multiplexer and the densified-feature path treat s as a
constant.  Relaxed mode swaps the Heaviside for a steep sigmoid and drops all
detaches, making the unrolled network differentiable end to end so gradients
can be checked against finite differences.

Forward runs record, per spiking cell and time step, the pre-reset potential,
spikes, post-reset potential, and densified features, plus the per-step
readout logits.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import torch
import torch.nn.functional as F

from .container import load_container, save_container
from .densify import densify
from .errors import ConfigError, ContractError
from .events import EventGrid


@dataclass(frozen=True)
class LifParams:
    """Leak factor, firing threshold, reset potential, surrogate width."""

    tau: float = 0.5
    v_th: float = 1.0
    v_reset: float = 0.0
    surrogate_width: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must be in (0, 1], got {self.tau}")
        if self.v_th <= self.v_reset:
            raise ConfigError(f"v_th ({self.v_th}) must exceed v_reset ({self.v_reset})")
        if self.v_th <= 0:
            raise ConfigError(f"v_th must be positive, got {self.v_th}")
        if self.surrogate_width <= 0:
            raise ConfigError(f"surrogate_width must be positive, got {self.surrogate_width}")


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    lif: Optional[LifParams] = None


@dataclass(frozen=True)
class AvgPool:
    k: int = 2


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Linear:
    out_features: int
    lif: Optional[LifParams] = None


LayerSpec = Union[Conv, AvgPool, Flatten, Linear]


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered feed-forward layer list plus the expected input shape."""

    input_shape: tuple[int, int, int]  # (C, H, W)
    layers: tuple[LayerSpec, ...]
    class_count: int

    def __post_init__(self):
        shapes = self.layer_shapes()
        last = self.layers[-1] if self.layers else None
        if not isinstance(last, Linear) or last.out_features != self.class_count:
            raise ConfigError("final layer must be a Linear readout with out_features == class_count")
        if last.lif is not None:
            raise ConfigError("readout layer is analog; it must not carry a spiking cell")
        del shapes

    def layer_shapes(self) -> list[tuple[int, ...]]:
        """Output shape after each layer; raises ConfigError on inconsistency."""
        shape: tuple[int, ...] = self.input_shape
        out = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv):
                if len(shape) != 3:
                    raise ConfigError(f"layer {i}: conv needs (C, H, W) input, got {shape}")
                c, h, w = shape
                ho = (h + 2 * layer.padding - layer.kernel) // layer.stride + 1
                wo = (w + 2 * layer.padding - layer.kernel) // layer.stride + 1
                if ho < 1 or wo < 1:
                    raise ConfigError(f"layer {i}: conv output collapsed to {ho}x{wo}")
                shape = (layer.out_channels, ho, wo)
            elif isinstance(layer, AvgPool):
                if len(shape) != 3:
                    raise ConfigError(f"layer {i}: pool needs (C, H, W) input, got {shape}")
                c, h, w = shape
                if h % layer.k or w % layer.k:
                    raise ConfigError(f"layer {i}: pool window {layer.k} does not divide {h}x{w}")
                shape = (c, h // layer.k, w // layer.k)
            elif isinstance(layer, Flatten):
                shape = (int(np.prod(shape)),)
            elif isinstance(layer, Linear):
                if len(shape) != 1:
                    raise ConfigError(f"layer {i}: linear needs flat input, got {shape}")
                shape = (layer.out_features,)
            else:
                raise ConfigError(f"layer {i}: unknown layer kind {layer!r}")
            out.append(shape)
        return out

    def lif_layers(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if getattr(l, "lif", None) is not None]

    def feature_layer(self) -> int:
        """Last spiking cell before the readout (the matching-loss layer)."""
        cells = self.lif_layers()
        if not cells:
            raise ConfigError("network has no spiking cell to take features from")
        return cells[-1]

    def feature_dim(self, layer: int) -> int:
        shapes = self.layer_shapes()
        return int(np.prod(shapes[layer]))


def default_network(
    input_shape: tuple[int, int, int],
    class_count: int,
    channels: tuple[int, int] = (32, 64),
    lif: LifParams = LifParams(),
) -> NetworkSpec:
    """Conv-LIF-Pool x2 -> Flatten -> analog Linear readout."""
    return NetworkSpec(
        input_shape=input_shape,
        layers=(
            Conv(channels[0], lif=lif),
            AvgPool(2),
            Conv(channels[1], lif=lif),
            AvgPool(2),
            Flatten(),
            Linear(class_count),
        ),
        class_count=class_count,
    )


# ---------------------------------------------------------------------------
# Spike nonlinearity


class _RectSpike(torch.autograd.Function):
    """Heaviside forward, rectangular pseudo-derivative backward."""

    @staticmethod
    def forward(ctx, x, width):
        ctx.save_for_backward(x)
        ctx.width = width
        return (x >= 0).to(x.dtype)

    @staticmethod
    def backward(ctx, grad_out):
        (x,) = ctx.saved_tensors
        w = ctx.width
        mask = (x.abs() <= w / 2).to(x.dtype)
        return grad_out * mask / w, None


def surrogate(v, width: float = 1.0):
    """Rectangular pseudo-derivative: 1/width inside |v| <= width/2 (boundary
    inclusive), 0 outside."""
    if width <= 0:
        raise ContractError(f"width must be positive, got {width}")
    v = torch.as_tensor(v)
    if not v.is_floating_point():
        v = v.to(torch.get_default_dtype())
    return (v.abs() <= width / 2).to(v.dtype) / width


def lif_step(v_prev, x, params: LifParams, relaxed: bool = False):
    """One membrane update; returns (h, s, v).

    In hard mode the spike seen by the reset multiplexer is detached, so
    temporal credit flows through h only where no spike occurred.
    """
    h = v_prev + params.tau * (x - (v_prev - params.v_reset))
    if relaxed:
        # steep sigmoid whose peak slope matches the rectangular surrogate
        beta = params.surrogate_width / 4.0
        s = torch.sigmoid((h - params.v_th) / beta)
        s_mux = s
    else:
        s = _RectSpike.apply(h - params.v_th, params.surrogate_width)
        s_mux = s.detach()
    v = h * (1.0 - s_mux) + params.v_reset * s_mux
    return h, s, v


# ---------------------------------------------------------------------------
# Network runtime


@dataclass
class Network:
    spec: NetworkSpec
    params: dict[str, torch.Tensor]
    dtype: torch.dtype = torch.float32

    def parameters(self) -> list[torch.Tensor]:
        return [self.params[k] for k in sorted(self.params)]

    def requires_grad_(self, flag: bool) -> "Network":
        for p in self.params.values():
            p.requires_grad_(flag)
        return self

    def clone(self) -> "Network":
        params = {k: v.detach().clone() for k, v in self.params.items()}
        return Network(self.spec, params, self.dtype)


def init_network(spec: NetworkSpec, seed: int, dtype: torch.dtype = torch.float32) -> Network:
    """Kaiming fan-in weight init, zero biases, fully seeded."""
    gen = torch.Generator().manual_seed(seed & 0x7FFF_FFFF_FFFF_FFFF)
    params: dict[str, torch.Tensor] = {}
    shapes = [spec.input_shape] + spec.layer_shapes()
    for i, layer in enumerate(spec.layers):
        shape = shapes[i]
        if isinstance(layer, Conv):
            c_in = shape[0]
            fan_in = c_in * layer.kernel * layer.kernel
            w = torch.randn(layer.out_channels, c_in, layer.kernel, layer.kernel, generator=gen, dtype=dtype)
            params[f"l{i}.weight"] = (w * math.sqrt(2.0 / fan_in)).requires_grad_(True)
            params[f"l{i}.bias"] = torch.zeros(layer.out_channels, dtype=dtype, requires_grad=True)
        elif isinstance(layer, Linear):
            fan_in = shape[0] if len(shape) == 1 else int(np.prod(shape))
            w = torch.randn(layer.out_features, fan_in, generator=gen, dtype=dtype)
            params[f"l{i}.weight"] = (w * math.sqrt(2.0 / fan_in)).requires_grad_(True)
            params[f"l{i}.bias"] = torch.zeros(layer.out_features, dtype=dtype, requires_grad=True)
    return Network(spec, params, dtype)


@dataclass
class CellTrace:
    """Per-timestep record of one spiking cell (all tensors (B, T, ...))."""

    layer_index: int
    h: torch.Tensor
    s: torch.Tensor
    v: torch.Tensor
    densified: torch.Tensor


@dataclass
class LayerTrace:
    cells: tuple[CellTrace, ...]
    logits: torch.Tensor  # (B, T, K)
    input: torch.Tensor
    net: Network
    relaxed: bool

    def cell(self, layer: int) -> CellTrace:
        for c in self.cells:
            if c.layer_index == layer:
                return c
        raise ContractError(f"layer {layer} is not a spiking cell of this trace")


@dataclass
class GradReport:
    input_grad: torch.Tensor
    weight_grads: dict[str, torch.Tensor]
    loss: float


def forward(net: Network, x: torch.Tensor, relaxed: bool = False) -> LayerTrace:
    """Unroll the network over time, recording a full trace.

    ``x`` is (B, T, C, H, W); dtype is cast to the network's dtype (the
    original tensor stays the gradient target).
    """
    if x.ndim != 5:
        raise ConfigError(f"input must be (B, T, C, H, W), got shape {tuple(x.shape)}")
    if tuple(x.shape[2:]) != net.spec.input_shape:
        raise ConfigError(
            f"input shape {tuple(x.shape[2:])} does not match configured {net.spec.input_shape}"
        )
    original = x
    if x.dtype != net.dtype:
        x = x.to(net.dtype)
    b, t_steps = x.shape[:2]
    state: dict[int, torch.Tensor] = {}
    recs: dict[int, list[tuple]] = {i: [] for i in net.spec.lif_layers()}
    logits = []
    for t in range(t_steps):
        cur = x[:, t]
        for i, layer in enumerate(net.spec.layers):
            if isinstance(layer, Conv):
                cur = F.conv2d(
                    cur, net.params[f"l{i}.weight"], net.params[f"l{i}.bias"],
                    stride=layer.stride, padding=layer.padding,
                )
            elif isinstance(layer, AvgPool):
                cur = F.avg_pool2d(cur, layer.k)
            elif isinstance(layer, Flatten):
                cur = cur.flatten(1)
            elif isinstance(layer, Linear):
                cur = F.linear(cur, net.params[f"l{i}.weight"], net.params[f"l{i}.bias"])
            lif = getattr(layer, "lif", None)
            if lif is not None:
                v_prev = state.get(i)
                if v_prev is None:
                    v_prev = torch.full_like(cur, lif.v_reset)
                h, s, v = lif_step(v_prev, cur, lif, relaxed=relaxed)
                d = densify(s, h, lif.v_th, detach_spikes=not relaxed)
                state[i] = v
                recs[i].append((h, s, v, d))
                cur = s
        logits.append(cur)
    cells = tuple(
        CellTrace(
            layer_index=i,
            h=torch.stack([r[0] for r in recs[i]], dim=1),
            s=torch.stack([r[1] for r in recs[i]], dim=1),
            v=torch.stack([r[2] for r in recs[i]], dim=1),
            densified=torch.stack([r[3] for r in recs[i]], dim=1),
        )
        for i in sorted(recs)
    )
    return LayerTrace(cells=cells, logits=torch.stack(logits, dim=1), input=original, net=net, relaxed=relaxed)


def backward(net: Network, trace: LayerTrace, loss: torch.Tensor) -> GradReport:
    """Reverse-mode gradients of a scalar loss built from trace tensors.

    Returns gradients w.r.t. the forward input and every weight; weights that
    sit outside the loss's dependency cone report zeros.
    """
    if trace.net is not net:
        raise ContractError("trace was produced by a different network")
    if loss.numel() != 1:
        raise ContractError("loss must be scalar")
    names = sorted(net.params)
    inputs = [net.params[k] for k in names]
    want_input = trace.input.requires_grad or trace.input.grad_fn is not None
    targets = ([trace.input] if want_input else []) + inputs
    grads = torch.autograd.grad(loss, targets, allow_unused=True)
    if want_input:
        input_grad, weight_grads = grads[0], grads[1:]
    else:
        input_grad, weight_grads = None, grads
    if input_grad is None:
        input_grad = torch.zeros_like(trace.input, dtype=net.dtype)
    out = {
        k: (g if g is not None else torch.zeros_like(net.params[k]))
        for k, g in zip(names, weight_grads)
    }
    return GradReport(input_grad=input_grad, weight_grads=out, loss=float(loss.detach()))


# ---------------------------------------------------------------------------
# Training / inference helpers


def mean_logits(net: Network, x: torch.Tensor, batch: int = 64) -> torch.Tensor:
    """Time-averaged readout logits for a stack of inputs, (N, K)."""
    outs = []
    with torch.no_grad():
        for start in range(0, x.shape[0], batch):
            trace = forward(net, x[start : start + batch])
            outs.append(trace.logits.mean(dim=1))
    return torch.cat(outs, dim=0)


def classify(net: Network, x: torch.Tensor, batch: int = 64) -> torch.Tensor:
    return mean_logits(net, x, batch).argmax(dim=1)


def _accuracy(net: Network, x: torch.Tensor, labels: torch.Tensor, batch: int = 64) -> float:
    pred = classify(net, x, batch)
    return float((pred == labels).to(torch.float64).mean())


@dataclass
class StudentResult:
    net: Network
    accuracy: float
    loss_history: list[float] = field(default_factory=list)


def train_student(
    net: Network,
    grids: torch.Tensor,
    labels: torch.Tensor,
    *,
    epochs: int,
    lr: float,
    seed: int,
    holdout: tuple[torch.Tensor, torch.Tensor],
    batch_size: int = 32,
    momentum: float = 0.9,
) -> StudentResult:
    """SGD training on time-averaged-logit cross-entropy; fully seeded.

    The input net is not mutated; a trained copy is returned together with
    accuracy on the holdout set.
    """
    n = grids.shape[0]
    if n == 0:
        raise ContractError("training set is empty")
    k = net.spec.class_count
    labels = torch.as_tensor(labels, dtype=torch.long)
    if labels.min() < 0 or labels.max() >= k:
        raise ContractError(f"labels must lie in [0, {k})")
    student = net.clone().requires_grad_(True)
    opt = torch.optim.SGD(student.parameters(), lr=lr, momentum=momentum)
    gen = torch.Generator().manual_seed(seed & 0x7FFF_FFFF_FFFF_FFFF)
    x = grids.to(student.dtype)
    history = []
    for _ in range(epochs):
        order = torch.randperm(n, generator=gen)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            trace = forward(student, x[idx])
            loss = F.cross_entropy(trace.logits.mean(dim=1), labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            history.append(float(loss.detach()))
    student.requires_grad_(False)
    hx, hy = holdout
    acc = _accuracy(student, hx.to(student.dtype), torch.as_tensor(hy, dtype=torch.long))
    return StudentResult(net=student, accuracy=acc, loss_history=history)


def grids_to_tensor(grids, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Stack EventGrids (or a (N, T, C, H, W) int array) into a float tensor."""
    if isinstance(grids, np.ndarray):
        arr = grids
    elif isinstance(grids, torch.Tensor):
        return grids.to(dtype)
    else:
        arr = np.stack([g.values if isinstance(g, EventGrid) else np.asarray(g) for g in grids])
    return torch.from_numpy(np.ascontiguousarray(arr)).to(dtype)


# ---------------------------------------------------------------------------
# Weight serialization


def save_weights(net: Network, path) -> None:
    tensors = {k: v.detach().cpu().numpy() for k, v in net.params.items()}
    save_container(path, tensors, meta={"kind": "weights", "dtype": str(net.dtype)})


def load_weights(spec: NetworkSpec, path, dtype: torch.dtype = torch.float32) -> Network:
    tensors, meta = load_container(path)
    if meta.get("kind") != "weights":
        raise ContractError(f"{path} is not a weights container")
    ref = init_network(spec, seed=0, dtype=dtype)
    params = {}
    for k, v in ref.params.items():
        if k not in tensors:
            raise ContractError(f"weights container missing tensor {k!r}")
        if tuple(tensors[k].shape) != tuple(v.shape):
            raise ContractError(
                f"tensor {k!r} shape {tensors[k].shape} does not match spec shape {tuple(v.shape)}"
            )
        params[k] = torch.from_numpy(tensors[k].copy()).to(dtype)
    return Network(spec, params, dtype)


def weights_fingerprint(net: Network) -> str:
    """SHA-256 over all weight bytes, in name order (frozen-teacher checks)."""
    digest = hashlib.sha256()
    for k in sorted(net.params):
        digest.update(k.encode())
        digest.update(net.params[k].detach().cpu().numpy().tobytes())
    return digest.hexdigest()
