"""Densified spike features: spikes with the residual membrane potential
injected at subthreshold sites.

A spiking site contributes exactly 1; a silent site contributes its
normalized pre-reset potential h / v_th.  This gives the matching losses a
continuous carrier with a non-zero gradient (1 - s) / v_th wherever no spike
fired, while spike decisions themselves stay out of the gradient path
(spikes are detached by default).
"""

from __future__ import annotations

import torch

from .errors import ContractError


def densify(s: torch.Tensor, h: torch.Tensor, v_th: float, detach_spikes: bool = True) -> torch.Tensor:
    """s + (1 - s) * h / v_th, elementwise.

    ``detach_spikes=False`` keeps gradients flowing through s as well; the
    relaxed (fully differentiable) network mode uses that path.
    """
    if v_th <= 0:
        raise ContractError(f"v_th must be positive, got {v_th}")
    if s.shape != h.shape:
        raise ContractError(f"shape mismatch: spikes {tuple(s.shape)} vs potentials {tuple(h.shape)}")
    sd = s.detach() if detach_spikes else s
    return sd + (1.0 - sd) * (h / v_th)


def flatten_features(trace, layer: int, kind: str = "densified") -> torch.Tensor:
    """Pull one spiking cell's features out of a forward trace as (B, T, D).

    ``layer`` is the network layer index of the cell; channel and spatial
    dims are flattened row-major (C, H, W).  ``kind`` selects ``densified``
    features or raw ``spikes``.
    """
    if kind not in ("densified", "spikes"):
        raise ContractError(f"unknown feature kind {kind!r}")
    for cell in trace.cells:
        if cell.layer_index == layer:
            x = cell.densified if kind == "densified" else cell.s
            b, t = x.shape[:2]
            return x.reshape(b, t, -1)
    raise ContractError(f"layer {layer} is not a spiking cell of this trace")
