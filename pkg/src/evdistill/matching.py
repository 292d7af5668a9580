"""Distribution-matching losses over spike features.

The primary loss projects (B, T, D) densified features onto M random
frequency directions, averages exp(i * projection) over the batch to get an
empirical characteristic function per time step, runs a forward-normalized
DFT along time to expose temporal phase, and penalizes amplitude and phase
mismatch between the real and synthetic spectra:

    loss = mean over (m, nu) of
        sqrt(alpha * (A_r - A_s)^2 + 2 beta * A_r A_s (1 - cos dphi))

The bracket equals (alpha - beta) * (A_r - A_s)^2 + beta * |F_r - F_s|^2,
which is how it is computed.  The square root is applied per (m, nu) term by
default; a whole-sum-root variant is selectable.

Also provided: the feature-mean-matching baseline and the spatial (per-batch,
no temporal transform) characteristic-function baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .densify import flatten_features
from .errors import ContractError


@dataclass(frozen=True)
class DirectionSet:
    """M x D standard-normal frequency directions, reproducible from seed."""

    omega: torch.Tensor
    seed: int

    @property
    def m(self) -> int:
        return self.omega.shape[0]

    @property
    def d(self) -> int:
        return self.omega.shape[1]


@dataclass
class SpectralStats:
    """Per-step empirical CFs Z (M x T) and their temporal spectra F (M x T)."""

    z: torch.Tensor
    f: torch.Tensor
    source: str = "real"


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.5
    beta: float = 0.5
    lambda_in: float = 1.0
    lambda_inter: float = 0.01

    def __post_init__(self):
        for name in ("alpha", "beta", "lambda_in", "lambda_inter"):
            val = getattr(self, name)
            if not np.isfinite(val) or val < 0:
                raise ContractError(f"{name} must be finite and non-negative, got {val}")
        if self.alpha > 1 or self.beta > 1:
            raise ContractError("alpha and beta must lie in [0, 1]")


def sample_directions(
    m: int, d: int, seed: int, dtype: torch.dtype = torch.float32, scale: float = 1.0
) -> DirectionSet:
    """Draw M i.i.d. standard-normal direction rows from a seeded generator.

    ``scale`` multiplies the rows; with unit scale the projections of
    high-dimensional features wrap phases many times around the circle and
    the empirical CF degenerates to batch noise, so callers matching wide
    features pick a bandwidth-matched scale (see the distillation loop).
    """
    if m < 1 or d < 1:
        raise ContractError(f"direction matrix must be at least 1x1, got {m}x{d}")
    rng = np.random.Generator(np.random.PCG64(seed))
    omega = rng.standard_normal((m, d))
    if scale != 1.0:
        omega = omega * scale
    return DirectionSet(omega=torch.from_numpy(omega).to(dtype), seed=seed)


def iteration_direction_seed(base_seed: int, iteration: int) -> int:
    """Stable per-iteration seed for direction resampling."""
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=(iteration,))
    return int(ss.generate_state(1, dtype=np.uint64)[0] & 0x7FFF_FFFF_FFFF_FFFF)


def empirical_cf(feats: torch.Tensor, directions: DirectionSet) -> torch.Tensor:
    """Empirical characteristic function per time step.

    feats: (B, T, D) real features.  Returns complex (M, T) with entries
    (1/B) * sum_b exp(i * omega_m . x_{b,t}).
    """
    if feats.ndim != 3:
        raise ContractError(f"features must be (B, T, D), got shape {tuple(feats.shape)}")
    b, _, d = feats.shape
    if b < 1:
        raise ContractError("empirical CF needs at least one sample")
    if d != directions.d:
        raise ContractError(f"feature dim {d} does not match direction dim {directions.d}")
    omega = directions.omega.to(feats.dtype)
    proj = feats @ omega.T  # (B, T, M)
    re = torch.cos(proj).mean(dim=0)
    im = torch.sin(proj).mean(dim=0)
    return torch.complex(re, im).transpose(0, 1)  # (M, T)


def temporal_dft(z: torch.Tensor) -> torch.Tensor:
    """Forward-normalized DFT along the time axis of an (M, T) matrix:
    F(m, nu) = (1/T) * sum_t Z(m, t) * exp(-i 2 pi nu t / T)."""
    if z.ndim != 2:
        raise ContractError(f"expected (M, T), got shape {tuple(z.shape)}")
    return torch.fft.fft(z, dim=1, norm="forward")


def spectral_stats(feats: torch.Tensor, directions: DirectionSet, source: str = "real") -> SpectralStats:
    z = empirical_cf(feats, directions)
    return SpectralStats(z=z, f=temporal_dft(z), source=source)


def _safe_sqrt(x: torch.Tensor) -> torch.Tensor:
    # keeps backward finite at exact zeros (subgradient 0 there)
    positive = x > 0
    return torch.where(positive, torch.sqrt(torch.where(positive, x, torch.ones_like(x))), torch.zeros_like(x))


def amp_phase_loss(
    f_real: torch.Tensor,
    f_syn: torch.Tensor,
    weights: LossWeights = LossWeights(),
    per_term_root: bool = True,
) -> torch.Tensor:
    """Amplitude/phase mismatch between two complex (M, T) spectra."""
    if f_real.shape != f_syn.shape:
        raise ContractError(f"shape mismatch: {tuple(f_real.shape)} vs {tuple(f_syn.shape)}")
    diff = f_real - f_syn
    d2 = diff.real**2 + diff.imag**2
    a2 = (f_real.abs() - f_syn.abs()) ** 2
    # alpha*(Ar-As)^2 + 2 beta Ar As (1 - cos dphi); clamp kills float cancellation dust
    bracket = torch.clamp(weights.alpha * a2 + weights.beta * (d2 - a2), min=0.0)
    if per_term_root:
        return _safe_sqrt(bracket).mean()
    return _safe_sqrt(bracket.sum()) / bracket.numel()


def amp_phase_parts(f_real: torch.Tensor, f_syn: torch.Tensor) -> tuple[float, float]:
    """Diagnostic means of |A_r - A_s| and the pure phase term (no grad)."""
    with torch.no_grad():
        diff = f_real - f_syn
        d2 = diff.real**2 + diff.imag**2
        a2 = (f_real.abs() - f_syn.abs()) ** 2
        amp = _safe_sqrt(a2).mean()
        phase = _safe_sqrt(torch.clamp(d2 - a2, min=0.0)).mean()
    return float(amp), float(phase)


def dm_loss(f_real: torch.Tensor, f_syn: torch.Tensor) -> torch.Tensor:
    """Squared distance of batch feature means: ||mean(real) - mean(syn)||^2."""
    if f_real.ndim != 2 or f_syn.ndim != 2:
        raise ContractError("feature batches must be (B, D)")
    if f_real.shape[0] == 0 or f_syn.shape[0] == 0:
        raise ContractError("feature batch is empty")
    if f_real.shape[1] != f_syn.shape[1]:
        raise ContractError(f"feature dims differ: {f_real.shape[1]} vs {f_syn.shape[1]}")
    delta = f_real.mean(dim=0) - f_syn.mean(dim=0)
    return (delta**2).sum()


def cf_spatial_loss(f_real: torch.Tensor, f_syn: torch.Tensor, directions: DirectionSet) -> torch.Tensor:
    """Spatial-only CF matching: sum over directions of |phi_syn - phi_real|^2
    for (B, D) feature batches (no temporal transform)."""
    if f_real.ndim != 2 or f_syn.ndim != 2:
        raise ContractError("feature batches must be (B, D)")
    if f_real.shape[0] == 0 or f_syn.shape[0] == 0:
        raise ContractError("feature batch is empty")
    phi_r = empirical_cf(f_real.unsqueeze(1), directions)[:, 0]
    phi_s = empirical_cf(f_syn.unsqueeze(1), directions)[:, 0]
    diff = phi_r - phi_s
    return (diff.real**2 + diff.imag**2).sum()


@dataclass
class CondenseLoss:
    total: torch.Tensor  # scalar with graph; the gradient source
    match: float
    ce: float
    amp: float
    phase: float


def condense_loss(
    trace_syn,
    stats_real: SpectralStats | None,
    directions: DirectionSet | None,
    label: int,
    weights: LossWeights,
    *,
    layer: int,
    densified: bool = True,
    use_dft: bool = True,
    per_term_root: bool = True,
) -> CondenseLoss:
    """Full condensation objective for one class batch:
    lambda_in * matching + lambda_inter * CE(time-averaged logits, label).

    Matching compares spectra of the synthetic trace's layer features against
    precomputed real-batch stats (F with the temporal DFT, Z without).  The
    stats and directions may be omitted only when lambda_in is zero.
    """
    k = trace_syn.logits.shape[2]
    if not 0 <= label < k:
        raise ContractError(f"label {label} out of range for {k} classes")
    amp = phase = 0.0
    match = trace_syn.logits.new_zeros(())
    if weights.lambda_in != 0.0:
        if stats_real is None or directions is None:
            raise ContractError("matching term requires real stats and directions")
        feats = flatten_features(trace_syn, layer, "densified" if densified else "spikes")
        z_syn = empirical_cf(feats, directions)
        if use_dft:
            ref, syn = stats_real.f, temporal_dft(z_syn)
        else:
            ref, syn = stats_real.z, z_syn
        match = amp_phase_loss(ref, syn, weights, per_term_root)
        amp, phase = amp_phase_parts(ref.detach(), syn.detach())
    targets = torch.full((trace_syn.logits.shape[0],), label, dtype=torch.long)
    ce = F.cross_entropy(trace_syn.logits.mean(dim=1), targets)
    total = weights.lambda_in * match + weights.lambda_inter * ce
    return CondenseLoss(total=total, match=float(match.detach()), ce=float(ce.detach()), amp=amp, phase=phase)
