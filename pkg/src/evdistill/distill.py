"""The condensation loop: optimize synthetic event-grid logits against a
frozen teacher.

Each iteration visits one class (round-robin), draws a real batch of that
class, resamples the frequency directions, computes real-feature spectra,
quantizes the class's synthetic samples, runs them through the teacher, and
steps the logits on the combined matching + cross-entropy objective.  Only
the synthetic logits ever change; the teacher is fingerprinted before and
after as a guard.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .container import load_container, save_container
from .datasets import LabeledGrids
from .densify import flatten_features
from .errors import CheckpointMismatchError, ConfigError, ContractError
from .events import GridMode
from .matching import (
    DirectionSet,
    LossWeights,
    cf_spatial_loss,
    condense_loss,
    dm_loss,
    iteration_direction_seed,
    sample_directions,
    spectral_stats,
)
from .quantizer import SynthSet, init_synth_set, quantize_set
from .snn import Network, NetworkSpec, forward, init_network, train_student, weights_fingerprint
from .seeding import seed_stream

MATCH_KINDS = ("amp-phase", "spatial-cf", "feature-mean")
OPTIMIZERS = ("sgd", "adaptive")
AUGMENTS = ("none", "flip", "flip-tcrop")


@dataclass
class DistillConfig:
    """Knobs of one distillation run.  ``lr`` and ``n_levels`` default by
    grid mode: bin -> (1.0, 2), int -> (1e-2, 8)."""

    ipc: int = 1
    iterations: int = 5000
    mode: GridMode = GridMode.BIN
    lr: Optional[float] = None
    n_levels: Optional[int] = None
    optimizer: str = "sgd"
    momentum: float = 0.5
    m_directions: int = 64
    alpha: float = 0.5
    beta: float = 0.5
    lambda_in: float = 1.0
    lambda_inter: float = 0.01
    real_batch: int = 64
    cf_bandwidth: float = 2.0
    temperature: float = 1.0
    bin_init_bias: float = 1.0
    anneal: str = "none"
    anneal_floor: float = 0.1
    feature_layer: Optional[int] = None
    densify_features: bool = True
    use_temporal_dft: bool = True
    per_term_root: bool = True
    match_kind: str = "amp-phase"
    augment: str = "none"
    resample_directions: bool = True
    cache_real_features: bool = True
    data_seed: int = 1
    direction_seed: int = 2
    init_seed: int = 3

    def __post_init__(self):
        if self.lr is None:
            self.lr = 1.0 if self.mode is GridMode.BIN else 1e-2
        if self.n_levels is None:
            self.n_levels = 2 if self.mode is GridMode.BIN else 8
        if self.mode is GridMode.BIN and self.n_levels != 2:
            raise ConfigError("bin mode requires n_levels == 2")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.match_kind not in MATCH_KINDS:
            raise ConfigError(f"match_kind must be one of {MATCH_KINDS}, got {self.match_kind!r}")
        if self.augment not in AUGMENTS:
            raise ConfigError(f"augment must be one of {AUGMENTS}, got {self.augment!r}")
        if self.anneal not in ("none", "linear"):
            raise ConfigError(f"anneal must be 'none' or 'linear', got {self.anneal!r}")

    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta, self.lambda_in, self.lambda_inter)


def config_hash(cfg: DistillConfig) -> str:
    payload = asdict(cfg)
    payload["mode"] = cfg.mode.value
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


@dataclass
class TeacherHandle:
    """A trained network frozen for the duration of distillation."""

    net: Network
    accuracy: float = float("nan")
    fingerprint: str = ""

    def __post_init__(self):
        self.net.requires_grad_(False)
        if not self.fingerprint:
            self.fingerprint = weights_fingerprint(self.net)


def pretrain_teacher(
    spec: NetworkSpec,
    train: LabeledGrids,
    *,
    epochs: int,
    lr: float,
    batch_size: int,
    seed: int,
    holdout: tuple[torch.Tensor, torch.Tensor],
    momentum: float = 0.9,
) -> TeacherHandle:
    """Train the feature network on real data, then freeze it.

    epochs=0 yields a frozen random network (quality warning printed)."""
    net = init_network(spec, seed_stream(seed, "teacher-init"))
    result = train_student(
        net,
        train.to_tensor(),
        train.label_tensor(),
        epochs=epochs,
        lr=lr,
        seed=seed_stream(seed, "teacher-train"),
        holdout=holdout,
        batch_size=batch_size,
        momentum=momentum,
    )
    if epochs == 0:
        print("warning: teacher trained for 0 epochs; distilling against a random network")
    return TeacherHandle(net=result.net, accuracy=result.accuracy)


# ---------------------------------------------------------------------------
# Real-feature cache


class FeatureCache:
    """Per-class layer features of the frozen teacher, flattened to (n, T, D).

    Caches pre-reset potentials and spikes so either densified or raw-spike
    features can be served without re-running the teacher.  Valid only while
    the teacher stays frozen and no input augmentation is used.
    """

    def __init__(self, h: dict[int, torch.Tensor], s: dict[int, torch.Tensor], v_th: float):
        self._h = h
        self._s = s
        self._v_th = v_th

    @staticmethod
    def build(teacher: TeacherHandle, data: LabeledGrids, layer: int, batch: int = 64) -> "FeatureCache":
        h_map: dict[int, torch.Tensor] = {}
        s_map: dict[int, torch.Tensor] = {}
        lif = teacher.net.spec.layers[layer].lif
        x = data.to_tensor(teacher.net.dtype)
        for cls in range(data.classes):
            idx = data.class_indices(cls)
            hs, ss = [], []
            with torch.no_grad():
                for start in range(0, idx.size, batch):
                    chunk = torch.from_numpy(idx[start : start + batch])
                    trace = forward(teacher.net, x[chunk])
                    cell = trace.cell(layer)
                    b, t = cell.h.shape[:2]
                    hs.append(cell.h.reshape(b, t, -1))
                    ss.append(cell.s.reshape(b, t, -1).to(torch.uint8))
            h_map[cls] = torch.cat(hs)
            s_map[cls] = torch.cat(ss)
        return FeatureCache(h_map, s_map, lif.v_th)

    def batch(self, cls: int, rows: np.ndarray, densified: bool) -> torch.Tensor:
        rows_t = torch.from_numpy(np.asarray(rows))
        s = self._s[cls][rows_t].to(self._h[cls].dtype)
        if not densified:
            return s
        h = self._h[cls][rows_t]
        return s + (1.0 - s) * (h / self._v_th)


def extract_features(
    teacher: TeacherHandle,
    grids: torch.Tensor,
    layer: int,
    *,
    densified: bool = True,
    batch: int = 64,
    time_averaged: bool = False,
) -> torch.Tensor:
    """Teacher features of a grid stack, (N, T, D) or time-averaged (N, D)."""
    outs = []
    with torch.no_grad():
        for start in range(0, grids.shape[0], batch):
            trace = forward(teacher.net, grids[start : start + batch])
            feats = flatten_features(trace, layer, "densified" if densified else "spikes")
            outs.append(feats.mean(dim=1) if time_averaged else feats)
    return torch.cat(outs)


# ---------------------------------------------------------------------------
# Augmentation (off by default)


def augment_batch(x: torch.Tensor, kind: str, rng: np.random.Generator) -> torch.Tensor:
    if kind == "none":
        return x
    if rng.random() < 0.5:
        x = x.flip(-1)
    if kind == "flip-tcrop":
        t = x.shape[1]
        drop = int(rng.integers(0, 2))
        if drop and t > 1:
            start = int(rng.integers(0, drop + 1))
            out = torch.zeros_like(x)
            out[:, : t - drop] = x[:, start : start + t - drop]
            x = out
    return x


# ---------------------------------------------------------------------------
# Main loop


@dataclass
class HistoryRow:
    iteration: int
    label: int
    amp: float
    phase: float
    match: float
    ce: float
    total: float


@dataclass
class DistillResult:
    synth: SynthSet
    history: list[HistoryRow] = field(default_factory=list)
    seconds_per_iteration: Optional[float] = None


def _temperature_at(cfg: DistillConfig, iteration: int) -> float:
    if cfg.anneal == "none" or cfg.iterations <= 1:
        return cfg.temperature
    frac = iteration / (cfg.iterations - 1)
    return cfg.temperature + (cfg.anneal_floor - cfg.temperature) * frac


def distill_run(cfg: DistillConfig, teacher: TeacherHandle, real: LabeledGrids) -> DistillResult:
    """Optimize a fresh SynthSet against the frozen teacher on ``real``."""
    spec = teacher.net.spec
    k = spec.class_count
    for cls in range(k):
        if real.class_indices(cls).size == 0:
            raise ContractError(f"real dataset is missing class {cls}")
    t_bins, channels, height, width = real.grid_shape
    synth = init_synth_set(
        k, cfg.ipc, t_bins, channels, height, width,
        cfg.mode, cfg.n_levels, seed=cfg.init_seed, temperature=cfg.temperature,
        zero_bias=cfg.bin_init_bias, dtype=teacher.net.dtype,
    )
    if cfg.optimizer == "sgd":
        opt = torch.optim.SGD([synth.logits], lr=cfg.lr, momentum=cfg.momentum)
    else:
        opt = torch.optim.Adam([synth.logits], lr=cfg.lr)
    layer = cfg.feature_layer if cfg.feature_layer is not None else spec.feature_layer()
    dim = spec.feature_dim(layer)
    weights = cfg.weights()
    fingerprint_before = weights_fingerprint(teacher.net)

    use_cache = cfg.cache_real_features and cfg.augment == "none" and weights.lambda_in != 0.0
    cache = FeatureCache.build(teacher, real, layer) if use_cache else None
    real_x = None if use_cache else real.to_tensor(teacher.net.dtype)

    # bandwidth-matched frequency scale: keeps CF projections at ~cf_bandwidth
    # radians instead of wrapping uniformly in high feature dimensions
    dir_scale = 1.0
    if cfg.cf_bandwidth > 0 and weights.lambda_in != 0.0:
        if cache is not None:
            probe = torch.cat(
                [cache.batch(c, np.arange(min(32, real.class_indices(c).size)), cfg.densify_features)
                 for c in range(k)]
            )
        else:
            with torch.no_grad():
                probe_trace = forward(teacher.net, real_x[: min(64, len(real))])
                probe = flatten_features(
                    probe_trace, layer, "densified" if cfg.densify_features else "spikes"
                )
        rms = float(probe.pow(2).mean().sqrt())
        dir_scale = cfg.cf_bandwidth / (max(rms, 1e-6) * dim**0.5)

    rng_data = np.random.Generator(np.random.PCG64(cfg.data_seed))
    rng_aug = np.random.Generator(np.random.PCG64(cfg.data_seed ^ 0x5DEECE66D))
    fixed_dirs = None
    if not cfg.resample_directions:
        fixed_dirs = sample_directions(
            cfg.m_directions, dim, cfg.direction_seed, teacher.net.dtype, scale=dir_scale
        )

    history: list[HistoryRow] = []
    started = time.perf_counter()
    for it in range(cfg.iterations):
        cls = it % k
        tau = _temperature_at(cfg, it)
        y = quantize_set(synth, rows=synth.class_rows(cls), temperature=tau)

        dirs = None
        feats_r = None
        if weights.lambda_in != 0.0:
            dirs = fixed_dirs or sample_directions(
                cfg.m_directions, dim, iteration_direction_seed(cfg.direction_seed, it),
                teacher.net.dtype, scale=dir_scale,
            )
            idx = real.class_indices(cls)
            take = min(cfg.real_batch, idx.size)
            rows = rng_data.choice(idx.size, size=take, replace=False)
            if cache is not None:
                feats_r = cache.batch(cls, rows, cfg.densify_features)
            else:
                batch_x = real_x[torch.from_numpy(idx[rows])]
                batch_x = augment_batch(batch_x, cfg.augment, rng_aug)
                with torch.no_grad():
                    trace_r = forward(teacher.net, batch_x)
                    feats_r = flatten_features(
                        trace_r, layer, "densified" if cfg.densify_features else "spikes"
                    ).detach()
            y = augment_batch(y, cfg.augment, rng_aug)

        trace_s = forward(teacher.net, y)
        if cfg.match_kind == "amp-phase":
            stats_r = None
            if feats_r is not None:
                with torch.no_grad():
                    stats_r = spectral_stats(feats_r, dirs, source="real")
            loss = condense_loss(
                trace_s, stats_r, dirs, cls, weights,
                layer=layer, densified=cfg.densify_features,
                use_dft=cfg.use_temporal_dft, per_term_root=cfg.per_term_root,
            )
            total = loss.total
            row = HistoryRow(it, cls, loss.amp, loss.phase, loss.match, loss.ce, float(total.detach()))
        else:
            targets = torch.full((y.shape[0],), cls, dtype=torch.long)
            ce = F.cross_entropy(trace_s.logits.mean(dim=1), targets)
            if weights.lambda_in != 0.0:
                feats_s = flatten_features(
                    trace_s, layer, "densified" if cfg.densify_features else "spikes"
                )
                if cfg.match_kind == "spatial-cf":
                    match = cf_spatial_loss(feats_r.mean(dim=1), feats_s.mean(dim=1), dirs)
                else:
                    match = dm_loss(feats_r.mean(dim=1), feats_s.mean(dim=1))
            else:
                match = trace_s.logits.new_zeros(())
            total = weights.lambda_in * match + weights.lambda_inter * ce
            row = HistoryRow(it, cls, 0.0, 0.0, float(match.detach()), float(ce.detach()), float(total.detach()))

        opt.zero_grad()
        total.backward()
        opt.step()
        history.append(row)

    elapsed = time.perf_counter() - started
    if weights_fingerprint(teacher.net) != fingerprint_before:
        raise ContractError("teacher weights changed during distillation")
    synth.logits.requires_grad_(False)
    return DistillResult(
        synth=synth,
        history=history,
        seconds_per_iteration=(elapsed / cfg.iterations) if cfg.iterations else None,
    )


def write_history_csv(path, history: list[HistoryRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "label", "amp", "phase", "match", "ce", "total"])
        for row in history:
            writer.writerow(
                [row.iteration, row.label, repr(row.amp), repr(row.phase), repr(row.match), repr(row.ce), repr(row.total)]
            )


# ---------------------------------------------------------------------------
# Checkpoints


def checkpoint(synth: SynthSet, cfg: DistillConfig, path) -> None:
    """Bit-exact snapshot of logits, labels, and the config hash."""
    meta = {
        "kind": "checkpoint",
        "config_sha": config_hash(cfg),
        "mode": synth.mode.value,
        "n_levels": synth.n_levels,
        "temperature": synth.temperature,
        "ipc": synth.ipc,
    }
    save_container(
        path,
        {"logits": synth.logits.detach().cpu().numpy(), "labels": synth.labels},
        meta=meta,
    )


def restore(path, cfg: Optional[DistillConfig] = None) -> SynthSet:
    """Load a checkpoint; verifies the config hash when a config is given."""
    tensors, meta = load_container(path)
    if meta.get("kind") != "checkpoint":
        raise CheckpointMismatchError(f"{path} is not a distillation checkpoint")
    if cfg is not None and meta.get("config_sha") != config_hash(cfg):
        raise CheckpointMismatchError(
            f"{path} was produced under a different configuration "
            f"(stored {meta.get('config_sha', '?')[:12]}, requested {config_hash(cfg)[:12]})"
        )
    logits = torch.from_numpy(tensors["logits"].copy())
    return SynthSet(
        logits=logits,
        labels=tensors["labels"],
        mode=GridMode(meta["mode"]),
        n_levels=int(meta["n_levels"]),
        temperature=float(meta["temperature"]),
        ipc=int(meta["ipc"]),
    )
