"""Event-stream parsing, binning, and spatial resampling.

Two on-disk formats are supported (documented in FORMATS.md):

* the 5-byte-per-event N-MNIST binary layout (34x34 sensor): byte0 = x, byte1 = y, byte2 bit7 = polarity, byte2
  bits6-0 = timestamp bits 22-16, bytes3-4 = timestamp bits 15-0
  big-endian, timestamps in microseconds;
* a plain-text interchange format, one ``t x y p`` line per event.

Parsed streams are stably sorted by timestamp.  ``voxelize`` packs a stream
into a (T, C, H, W) integer grid; ``bin`` mode clamps each voxel to 0/1 while
``int`` mode keeps per-voxel counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ContractError, EventFormatError

NMNIST_SENSOR = (34, 34)  # (H, W) of the N-MNIST sensor
_TS_BITS = 23  # timestamp field width in the binary layout


class EventRecord(NamedTuple):
    """One asynchronous camera event."""

    t: int  # microseconds, non-negative
    x: int  # column
    y: int  # row
    p: int  # polarity, 0 = OFF, 1 = ON


class GridMode(str, Enum):
    BIN = "bin"
    INT = "int"


@dataclass(eq=False)
class EventGrid:
    """Events binned into a (T, C, H, W) integer tensor.

    ``bin`` mode keeps at most one spike per voxel; ``int`` mode keeps raw
    counts (unbounded until a quantizer clamps them).
    """

    values: np.ndarray
    mode: GridMode
    bin_width_us: float = field(default=1.0)

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 4:
            raise ContractError(f"grid must be (T, C, H, W), got shape {self.values.shape}")
        if not np.issubdtype(self.values.dtype, np.integer):
            raise ContractError(f"grid values must be integers, got dtype {self.values.dtype}")
        if self.values.size and self.values.min() < 0:
            raise ContractError("grid values must be non-negative")
        if self.mode is GridMode.BIN and self.values.size and self.values.max() > 1:
            raise ContractError("bin-mode grid holds values above 1")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return tuple(self.values.shape)


# ---------------------------------------------------------------------------
# Parsers / serializers


def decode_nmnist_bytes(data: bytes) -> np.ndarray:
    """Vectorized decode of the 5-byte binary layout to an (n, 4) int64 array
    with columns (t, x, y, p), stably sorted by t."""
    if len(data) % 5 != 0:
        raise EventFormatError(
            f"malformed event file: {len(data)} bytes is not a multiple of 5"
        )
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, 5)
    x = raw[:, 0].astype(np.int64)
    y = raw[:, 1].astype(np.int64)
    h, w = NMNIST_SENSOR
    bad = np.flatnonzero((x >= w) | (y >= h))
    if bad.size:
        i = int(bad[0])
        col = 0 if x[i] >= w else 1
        raise EventFormatError(
            f"coordinate out of range at byte offset {5 * i + col}: "
            f"event {i} has x={x[i]}, y={y[i]} on a {w}x{h} sensor"
        )
    p = (raw[:, 2] >> 7).astype(np.int64)
    t = (
        ((raw[:, 2].astype(np.int64) & 0x7F) << 16)
        | (raw[:, 3].astype(np.int64) << 8)
        | raw[:, 4].astype(np.int64)
    )
    order = np.argsort(t, kind="stable")
    return np.stack([t, x, y, p], axis=1)[order]


def parse_nmnist(data: bytes) -> list[EventRecord]:
    """Parse 5-byte binary event content into sorted EventRecords."""
    return array_to_records(decode_nmnist_bytes(data))


def serialize_nmnist(records: Iterable[EventRecord]) -> bytes:
    """Inverse of parse_nmnist, for writing test fixtures."""
    out = bytearray()
    h, w = NMNIST_SENSOR
    for rec in records:
        if not (0 <= rec.x < w and 0 <= rec.y < h):
            raise ContractError(f"coordinate ({rec.x}, {rec.y}) outside {w}x{h} sensor")
        if rec.p not in (0, 1):
            raise ContractError(f"polarity must be 0 or 1, got {rec.p}")
        if not 0 <= rec.t < (1 << _TS_BITS):
            raise ContractError(f"timestamp {rec.t} does not fit in {_TS_BITS} bits")
        out.append(rec.x)
        out.append(rec.y)
        out.append((rec.p << 7) | ((rec.t >> 16) & 0x7F))
        out.append((rec.t >> 8) & 0xFF)
        out.append(rec.t & 0xFF)
    return bytes(out)


def parse_evt_text(text: str) -> list[EventRecord]:
    """Parse the ``t x y p`` text interchange format.

    Lines starting with '#' are comments; blank lines are skipped.
    """
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        if len(parts) != 4:
            raise EventFormatError(f"line {lineno}: expected 4 fields 't x y p', got {len(parts)}")
        try:
            t, x, y, p = (int(tok) for tok in parts)
        except ValueError as exc:
            raise EventFormatError(f"line {lineno}: non-integer token in {stripped!r}") from exc
        if p not in (0, 1):
            raise EventFormatError(f"line {lineno}: polarity must be 0 or 1, got {p}")
        if t < 0 or x < 0 or y < 0:
            raise EventFormatError(f"line {lineno}: negative field in {stripped!r}")
        records.append(EventRecord(t, x, y, p))
    records.sort(key=lambda r: r.t)
    return records


def format_evt_text(records: Iterable[EventRecord]) -> str:
    """Render records as text interchange lines."""
    return "".join(f"{r.t} {r.x} {r.y} {r.p}\n" for r in records)


def records_to_array(records: Sequence[EventRecord]) -> np.ndarray:
    """(n, 4) int64 array with columns (t, x, y, p)."""
    if not len(records):
        return np.zeros((0, 4), dtype=np.int64)
    return np.asarray([(r.t, r.x, r.y, r.p) for r in records], dtype=np.int64)


def array_to_records(arr: np.ndarray) -> list[EventRecord]:
    return [EventRecord(int(t), int(x), int(y), int(p)) for t, x, y, p in arr]


# ---------------------------------------------------------------------------
# Binning and resampling


def voxelize(
    events: Sequence[EventRecord] | np.ndarray,
    t_bins: int,
    channels: int,
    height: int,
    width: int,
    mode: GridMode = GridMode.INT,
) -> EventGrid:
    """Pack a sorted event stream into a (T, C, H, W) grid.

    Event i lands in bin floor((t_i - t_first) * T / (duration + 1)), which
    maps the final event to bin T-1 without a special case.  With C=2 the
    polarity selects the channel; with C=1 both polarities share channel 0.
    """
    if t_bins < 1:
        raise ContractError(f"t_bins must be >= 1, got {t_bins}")
    if channels not in (1, 2):
        raise ContractError(f"channels must be 1 or 2, got {channels}")
    arr = events if isinstance(events, np.ndarray) else records_to_array(events)
    values = np.zeros((t_bins, channels, height, width), dtype=np.int32)
    if arr.shape[0] == 0:
        return EventGrid(values, mode, bin_width_us=1.0)
    t, x, y, p = arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]
    if np.any(np.diff(t) < 0):
        raise ContractError("events must be sorted by timestamp")
    if np.any((x < 0) | (x >= width) | (y < 0) | (y >= height)):
        raise ContractError(f"event coordinates outside {width}x{height} frame")
    duration = int(t[-1] - t[0])
    bins = (t - t[0]) * t_bins // (duration + 1)  # exact integer floor
    chan = p if channels == 2 else np.zeros_like(p)
    np.add.at(values, (bins, chan, y, x), 1)
    if mode is GridMode.BIN:
        np.minimum(values, 1, out=values)
    return EventGrid(values, mode, bin_width_us=(duration + 1) / t_bins)


def resample_spatial(grid: EventGrid, h_out: int, w_out: int) -> EventGrid:
    """Count-preserving downsampling by bucket-sum pooling.

    Output cell (i, j) sums the source rectangle
    rows [floor(i*H/h_out), floor((i+1)*H/h_out)) x the analogous columns.
    Bin mode re-clamps to 0/1 afterwards.  Upsampling is not supported
    (use pad_spatial to place a grid on a larger canvas).
    """
    _, _, h, w = grid.shape
    if h_out > h or w_out > w:
        raise ContractError(
            f"upsampling not supported: source {h}x{w}, requested {h_out}x{w_out}"
        )
    if h_out < 1 or w_out < 1:
        raise ContractError("target size must be positive")
    row_starts = (np.arange(h_out) * h) // h_out
    col_starts = (np.arange(w_out) * w) // w_out
    pooled = np.add.reduceat(grid.values, row_starts, axis=2)
    pooled = np.add.reduceat(pooled, col_starts, axis=3)
    if grid.mode is GridMode.BIN:
        pooled = np.minimum(pooled, 1)
    return EventGrid(pooled.astype(grid.values.dtype), grid.mode, grid.bin_width_us)


def pad_spatial(grid: EventGrid, h_out: int, w_out: int) -> EventGrid:
    """Center a grid on a larger all-zero canvas (counts preserved)."""
    _, _, h, w = grid.shape
    if h_out < h or w_out < w:
        raise ContractError(f"pad target {h_out}x{w_out} smaller than source {h}x{w}")
    top = (h_out - h) // 2
    left = (w_out - w) // 2
    out = np.zeros(grid.shape[:2] + (h_out, w_out), dtype=grid.values.dtype)
    out[:, :, top : top + h, left : left + w] = grid.values
    return EventGrid(out, grid.mode, grid.bin_width_us)


def grid_to_events(grid: EventGrid, bin_width_us: int = 1000) -> list[EventRecord]:
    """Expand a C=2 grid back into an event list for text interchange.

    Each voxel count c emits c events stamped at the bin start.  Re-binning
    with the same T recovers the grid exactly whenever the first and last
    bins are non-empty.
    """
    t_bins, channels, _, _ = grid.shape
    if channels != 2:
        raise ContractError("grid_to_events requires two polarity channels")
    if bin_width_us < 1:
        raise ContractError("bin_width_us must be >= 1")
    records = []
    for tb in range(t_bins):
        for ch in range(2):
            ys, xs = np.nonzero(grid.values[tb, ch])
            counts = grid.values[tb, ch, ys, xs]
            for yy, xx, cnt in zip(ys.tolist(), xs.tolist(), counts.tolist()):
                records.extend(EventRecord(tb * bin_width_us, xx, yy, ch) for _ in range(cnt))
    return records
