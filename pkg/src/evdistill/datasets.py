"""Labeled grid datasets: in-memory stacks plus loaders for the supported
on-disk sources (N-MNIST directories, grid containers)."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import torch

from .container import load_container, save_container
from .errors import ContractError
from .events import EventGrid, GridMode, decode_nmnist_bytes, pad_spatial, resample_spatial, voxelize


@dataclass
class LabeledGrids:
    """A stack of event grids with class labels.

    grids: (N, T, C, H, W) non-negative ints; labels: (N,) int64.
    """

    grids: np.ndarray
    labels: np.ndarray
    mode: GridMode

    def __post_init__(self):
        self.grids = np.asarray(self.grids)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.grids.ndim != 5:
            raise ContractError(f"grids must be (N, T, C, H, W), got shape {self.grids.shape}")
        if self.labels.shape != (self.grids.shape[0],):
            raise ContractError("labels must have one entry per grid")

    def __len__(self) -> int:
        return self.grids.shape[0]

    @property
    def classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self) else 0

    @property
    def grid_shape(self) -> tuple[int, int, int, int]:
        return tuple(self.grids.shape[1:])

    def class_indices(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)

    def subset(self, indices) -> "LabeledGrids":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledGrids(self.grids[idx], self.labels[idx], self.mode)

    def to_tensor(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        return torch.from_numpy(np.ascontiguousarray(self.grids)).to(dtype)

    def label_tensor(self) -> torch.Tensor:
        return torch.from_numpy(self.labels)


def save_grids(path, data: LabeledGrids, meta: dict | None = None) -> None:
    full_meta = {"kind": "grids", "mode": data.mode.value}
    full_meta.update(meta or {})
    save_container(
        path,
        {"grids": data.grids.astype(np.int32), "labels": data.labels},
        meta=full_meta,
    )


def load_grids(path) -> LabeledGrids:
    tensors, meta = load_container(path)
    if meta.get("kind") != "grids" or "grids" not in tensors or "labels" not in tensors:
        raise ContractError(f"{path} is not a labeled-grids container")
    return LabeledGrids(tensors["grids"], tensors["labels"], GridMode(meta["mode"]))


def load_nmnist_split(
    root: str,
    split: str,
    *,
    t_bins: int,
    mode: GridMode,
    limit_per_class: int = 0,
    pad_to: int = 0,
    resize_to: int = 0,
) -> LabeledGrids:
    """Load a Train/ or Test/ directory of per-digit .bin event files.

    Files are taken in sorted order per class; ``limit_per_class`` of 0 means
    all.  The 34x34 sensor frame can be centered on a larger zero canvas
    (``pad_to``) or bucket-sum downsampled (``resize_to``).
    """
    base = os.path.join(root, split)
    if not os.path.isdir(base):
        raise FileNotFoundError(f"dataset split directory not found: {base}")
    grids, labels = [], []
    class_dirs = sorted(d for d in os.listdir(base) if os.path.isdir(os.path.join(base, d)))
    if not class_dirs:
        raise FileNotFoundError(f"no class subdirectories under {base}")
    for cls_name in class_dirs:
        label = int(cls_name)
        files = sorted(f for f in os.listdir(os.path.join(base, cls_name)) if f.endswith(".bin"))
        if limit_per_class:
            files = files[:limit_per_class]
        for fname in files:
            with open(os.path.join(base, cls_name, fname), "rb") as fh:
                arr = decode_nmnist_bytes(fh.read())
            grid = voxelize(arr, t_bins, 2, 34, 34, mode)
            if pad_to:
                grid = pad_spatial(grid, pad_to, pad_to)
            elif resize_to:
                grid = resample_spatial(grid, resize_to, resize_to)
            grids.append(grid.values)
            labels.append(label)
    return LabeledGrids(np.stack(grids), np.asarray(labels), mode)
