"""Real-sample selection baselines: random, herding, k-center.

Herding and k-center operate on per-sample feature vectors (time-averaged
densified teacher features in this artifact's pipeline) with Euclidean
distance.  All selectors return exactly ipc distinct global indices per
class; ties resolve toward the lowest index.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError


def _class_index_map(labels: np.ndarray) -> dict[int, np.ndarray]:
    labels = np.asarray(labels)
    return {int(c): np.flatnonzero(labels == c) for c in np.unique(labels)}


def _check_ipc(idx_map: dict[int, np.ndarray], ipc: int) -> None:
    if ipc < 1:
        raise ContractError(f"ipc must be >= 1, got {ipc}")
    for cls, idx in idx_map.items():
        if idx.size < ipc:
            raise ContractError(f"class {cls} holds {idx.size} samples, fewer than ipc={ipc}")


def random_select(labels: np.ndarray, ipc: int, seed: int) -> dict[int, np.ndarray]:
    """ipc uniform draws per class, without replacement, seeded."""
    idx_map = _class_index_map(labels)
    _check_ipc(idx_map, ipc)
    rng = np.random.Generator(np.random.PCG64(seed))
    return {cls: rng.choice(idx, size=ipc, replace=False) for cls, idx in sorted(idx_map.items())}


def herding_select(features: np.ndarray, labels: np.ndarray, ipc: int) -> dict[int, np.ndarray]:
    """Greedy herding: repeatedly add the sample that pulls the running
    selected-mean closest to the class mean."""
    features = np.asarray(features, dtype=np.float64)
    if not np.all(np.isfinite(features)):
        raise ContractError("features must be finite")
    idx_map = _class_index_map(labels)
    _check_ipc(idx_map, ipc)
    out = {}
    for cls, idx in sorted(idx_map.items()):
        feats = features[idx]
        mu = feats.mean(axis=0)
        chosen: list[int] = []
        running = np.zeros_like(mu)
        taken = np.zeros(len(idx), dtype=bool)
        for step in range(ipc):
            cand_means = (running + feats) / (step + 1)
            dist = np.linalg.norm(mu - cand_means, axis=1)
            dist[taken] = np.inf
            j = int(np.argmin(dist))  # argmin returns the first (lowest) index on ties
            chosen.append(j)
            taken[j] = True
            running = running + feats[j]
        out[cls] = idx[np.asarray(chosen)]
    return out


def kcenter_select(features: np.ndarray, labels: np.ndarray, ipc: int) -> dict[int, np.ndarray]:
    """Greedy farthest-point traversal seeded at the mean-closest sample."""
    features = np.asarray(features, dtype=np.float64)
    if not np.all(np.isfinite(features)):
        raise ContractError("features must be finite")
    idx_map = _class_index_map(labels)
    _check_ipc(idx_map, ipc)
    out = {}
    for cls, idx in sorted(idx_map.items()):
        feats = features[idx]
        mu = feats.mean(axis=0)
        first = int(np.argmin(np.linalg.norm(feats - mu, axis=1)))
        chosen = [first]
        min_dist = np.linalg.norm(feats - feats[first], axis=1)
        min_dist[first] = -np.inf
        for _ in range(ipc - 1):
            j = int(np.argmax(min_dist))  # first occurrence wins ties
            chosen.append(j)
            d = np.linalg.norm(feats - feats[j], axis=1)
            min_dist = np.minimum(min_dist, d)
            min_dist[j] = -np.inf
        out[cls] = idx[np.asarray(chosen)]
    return out


def coverage_radius(features: np.ndarray, selected: np.ndarray) -> float:
    """Max over samples of the distance to the nearest selected sample."""
    features = np.asarray(features, dtype=np.float64)
    sel = features[np.asarray(selected)]
    dists = np.linalg.norm(features[:, None, :] - sel[None, :, :], axis=2)
    return float(dists.min(axis=1).max())


def flatten_selection(selection: dict[int, np.ndarray]) -> np.ndarray:
    """Concatenate per-class indices in ascending class order."""
    return np.concatenate([np.asarray(selection[c]) for c in sorted(selection)])
