"""Synthetic moving-bar event streams for desk-scale experiments.

Every sample superimposes two motion patterns on background noise:

* the class cue, a horizontal bar on a time-locked vertical sweep: class 0
  enters near the top and sweeps down, class 1 enters near the bottom and
  sweeps up.  Its start row jitters by a couple of pixels but its phase is
  locked to the bin clock, the way saccade-driven recordings are.
* a distractor, a vertical bar sweeping left or right (drawn per sample)
  from a uniformly random start column, wrapping around.

Leading edges fire ON events and trailing edges OFF events, with per-event
dropout.  A single real sample is an ambiguous teacher, since the distractor
is as salient as the class cue; the class-conditional distribution is not,
because the distractor's direction and phase average out across a batch.
That makes the task a minimal testbed for distribution-level distillation
versus per-sample selection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .datasets import LabeledGrids
from .errors import ContractError
from .events import GridMode, voxelize

_BIN_US = 1000  # microseconds per time bin in generated streams


@dataclass(frozen=True)
class ToyConfig:
    samples_per_class: int = 500
    test_per_class: int = 150
    height: int = 32
    width: int = 32
    t_bins: int = 6
    bar_width: int = 3
    speed: int = 3           # pixels per bin
    edge_margin: int = 2     # sweep start distance from the field edge
    offset_jitter: int = 2   # +/- start-row jitter of the class bar
    keep_prob: float = 0.8   # survival probability of each bar event
    noise_events: int = 20   # uniform background events per bin
    intensity: int = 1       # repeats per surviving bar event (int-mode richness)
    distractor: bool = True
    mode: GridMode = GridMode.BIN

    def __post_init__(self):
        if self.speed < 1:
            raise ContractError("bar speed must be >= 1 pixel per bin")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ContractError("keep_prob must lie in (0, 1]")
        span = self.edge_margin + 2 * self.offset_jitter + self.speed * (self.t_bins - 1) + self.bar_width
        if span > self.height:
            raise ContractError(
                f"class sweep would leave the field: needs {span} rows, have {self.height}"
            )


def _emit(rng, cfg, rows_or_cols, lane_extent, vertical_motion, pol, t):
    """Events for a set of bar rows (or columns) spanning the cross lane."""
    pos = np.asarray(sorted(rows_or_cols), dtype=np.int64)
    if pos.size == 0:
        return None
    lane = np.arange(lane_extent)
    moving = np.repeat(pos, lane_extent)
    fixed = np.tile(lane, pos.size)
    keep = rng.random(moving.size) < cfg.keep_prob
    moving, fixed = moving[keep], fixed[keep]
    if cfg.intensity > 1:
        moving = np.repeat(moving, cfg.intensity)
        fixed = np.repeat(fixed, cfg.intensity)
    xs, ys = (fixed, moving) if vertical_motion else (moving, fixed)
    ts = t * _BIN_US + rng.integers(0, _BIN_US, size=xs.size)
    return np.stack([ts, xs, ys, np.full_like(xs, pol)], axis=1)


def _class_bar_events(cfg: ToyConfig, rng: np.random.Generator, direction: int) -> list[np.ndarray]:
    """Time-locked vertical sweep, no wrap-around."""
    jitter = int(rng.integers(-cfg.offset_jitter, cfg.offset_jitter + 1))
    if direction > 0:
        start = cfg.edge_margin + cfg.offset_jitter + jitter
    else:
        start = cfg.height - cfg.edge_margin - cfg.offset_jitter - cfg.bar_width + jitter
    chunks = []
    prev: set[int] = set()
    for t in range(cfg.t_bins):
        pos = start + direction * cfg.speed * t
        body = set(range(pos, pos + cfg.bar_width))
        for positions, pol in ((body - prev, 1), (prev - body, 0)):
            chunk = _emit(rng, cfg, positions, cfg.width, True, pol, t)
            if chunk is not None:
                chunks.append(chunk)
        prev = body
    return chunks


def _distractor_events(cfg: ToyConfig, rng: np.random.Generator, direction: int) -> list[np.ndarray]:
    """Phase-free horizontal sweep with wrap-around."""
    offset = int(rng.integers(cfg.width))
    chunks = []
    prev = {(offset - direction * cfg.speed + i) % cfg.width for i in range(cfg.bar_width)}
    for t in range(cfg.t_bins):
        pos = offset + direction * cfg.speed * t
        body = {(pos + i) % cfg.width for i in range(cfg.bar_width)}
        for positions, pol in ((body - prev, 1), (prev - body, 0)):
            chunk = _emit(rng, cfg, positions, cfg.height, False, pol, t)
            if chunk is not None:
                chunks.append(chunk)
        prev = body
    return chunks


def _noise_events(cfg: ToyConfig, rng: np.random.Generator) -> list[np.ndarray]:
    chunks = []
    for t in range(cfg.t_bins):
        if cfg.noise_events:
            xs = rng.integers(0, cfg.width, size=cfg.noise_events)
            ys = rng.integers(0, cfg.height, size=cfg.noise_events)
            ps = rng.integers(0, 2, size=cfg.noise_events)
            ts = t * _BIN_US + rng.integers(0, _BIN_US, size=cfg.noise_events)
            chunks.append(np.stack([ts, xs, ys, ps], axis=1))
    return chunks


def sample_events(
    cfg: ToyConfig,
    class_direction: int,
    rng: np.random.Generator,
    distractor_direction: int | None = None,
) -> np.ndarray:
    """One stream as an (n, 4) array (t, x, y, p), sorted by t.

    ``class_direction`` +1 sweeps down (class 0), -1 sweeps up (class 1).
    The distractor's sweep sign is drawn at random unless pinned.
    """
    chunks = _class_bar_events(cfg, rng, class_direction)
    if cfg.distractor:
        if distractor_direction is None:
            distractor_direction = 1 if rng.random() < 0.5 else -1
        chunks += _distractor_events(cfg, rng, distractor_direction)
    chunks += _noise_events(cfg, rng)
    arr = np.concatenate(chunks, axis=0) if chunks else np.zeros((0, 4), dtype=np.int64)
    return arr[np.argsort(arr[:, 0], kind="stable")]


def sample_grid(
    cfg: ToyConfig,
    class_direction: int,
    rng: np.random.Generator,
    distractor_direction: int | None = None,
) -> np.ndarray:
    events = sample_events(cfg, class_direction, rng, distractor_direction)
    return voxelize(events, cfg.t_bins, 2, cfg.height, cfg.width, cfg.mode).values


def _build_split(cfg: ToyConfig, per_class: int, rng: np.random.Generator) -> LabeledGrids:
    grids, labels = [], []
    for label, direction in ((0, 1), (1, -1)):
        for _ in range(per_class):
            grids.append(sample_grid(cfg, direction, rng))
            labels.append(label)
    return LabeledGrids(np.stack(grids), np.asarray(labels), cfg.mode)


def make_toy_dataset(cfg: ToyConfig, seed: int) -> tuple[LabeledGrids, LabeledGrids]:
    """Seeded train/test split of the two-class task."""
    rng = np.random.Generator(np.random.PCG64(seed))
    train = _build_split(cfg, cfg.samples_per_class, rng)
    test = _build_split(cfg, cfg.test_per_class, rng)
    return train, test


def sample_records(cfg: ToyConfig, class_direction: int, seed: int):
    """EventRecord view of one generated stream (handy for format tests)."""
    from .events import array_to_records

    rng = np.random.Generator(np.random.PCG64(seed))
    return array_to_records(sample_events(cfg, class_direction, rng))
