"""Student training protocol and efficiency accounting.

The protocol trains n_sets x n_models fresh students (independent seeds
derived from one master seed), scores each on a held-out test set, and
reports mean and population standard deviation over all trials.  Accuracies
are sorted before aggregation so the reduction is order-independent.
"""

from __future__ import annotations

import csv
import resource
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch

from .errors import ContractError
from .seeding import seed_stream
from .snn import Network, NetworkSpec, init_network, mean_logits, train_student


@dataclass
class TrialResult:
    set_index: int
    model_index: int
    seed: int
    accuracy: float


@dataclass
class ProtocolResult:
    trials: list[TrialResult]
    mean: float
    std: float
    single_trial: bool

    @property
    def accuracies(self) -> list[float]:
        return [t.accuracy for t in self.trials]


def summarize_accuracies(accs: Sequence[float]) -> tuple[float, float]:
    """Mean and population std of a trial list (sorted before reduction)."""
    if not len(accs):
        raise ContractError("no trials to summarize")
    ordered = np.sort(np.asarray(accs, dtype=np.float64))
    return float(ordered.mean()), float(ordered.std(ddof=0))


def evaluate_protocol(
    train_sets: Sequence[tuple[torch.Tensor, torch.Tensor]],
    spec: NetworkSpec,
    test_grids: torch.Tensor,
    test_labels: torch.Tensor,
    *,
    n_models: int,
    epochs: int,
    lr: float,
    batch_size: int,
    master_seed: int,
    momentum: float = 0.9,
) -> ProtocolResult:
    """Train and score fresh students on every (grids, labels) training set."""
    if len(train_sets) < 1 or n_models < 1:
        raise ContractError("need at least one training set and one model")
    if test_grids.shape[0] == 0:
        raise ContractError("test set is empty")
    test_labels = torch.as_tensor(test_labels, dtype=torch.long)
    trials = []
    for i, (grids, labels) in enumerate(train_sets):
        for j in range(n_models):
            seed = seed_stream(master_seed, f"student/{i}/{j}")
            net = init_network(spec, seed_stream(master_seed, f"student-init/{i}/{j}"))
            result = train_student(
                net,
                grids,
                labels,
                epochs=epochs,
                lr=lr,
                seed=seed,
                holdout=(test_grids, test_labels),
                batch_size=batch_size,
                momentum=momentum,
            )
            trials.append(TrialResult(i, j, seed, result.accuracy))
    mean, std = summarize_accuracies([t.accuracy for t in trials])
    return ProtocolResult(trials=trials, mean=mean, std=std, single_trial=len(trials) == 1)


def confusion_matrix(net: Network, grids: torch.Tensor, labels: torch.Tensor, batch: int = 64) -> np.ndarray:
    """K x K count matrix; accuracy equals trace / total."""
    k = net.spec.class_count
    pred = mean_logits(net, grids, batch).argmax(dim=1).cpu().numpy()
    true = np.asarray(labels, dtype=np.int64)
    out = np.zeros((k, k), dtype=np.int64)
    np.add.at(out, (true, pred), 1)
    return out


def classification_accuracy(net: Network, grids: torch.Tensor, labels: torch.Tensor, batch: int = 64) -> float:
    cm = confusion_matrix(net, grids, labels, batch)
    return float(np.trace(cm)) / float(cm.sum())


def write_results_csv(path, result: ProtocolResult) -> None:
    """One row per trial plus a summary row; floats use repr for exact
    cross-run byte comparisons."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "set_index", "model_index", "seed", "accuracy", "mean", "std", "single_trial"])
        for t in result.trials:
            writer.writerow(["trial", t.set_index, t.model_index, t.seed, repr(t.accuracy), "", "", ""])
        writer.writerow(["summary", "", "", "", "", repr(result.mean), repr(result.std), int(result.single_trial)])


# ---------------------------------------------------------------------------
# Efficiency accounting


@dataclass
class EfficiencyReport:
    stored_samples: int
    full_samples: int
    storage_ratio: float
    peak_rss_bytes: int
    seconds_per_iteration: Optional[float] = None
    accuracy: Optional[float] = None


def peak_rss_bytes() -> int:
    """Peak resident set size of this process (Linux reports KiB)."""
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


def efficiency_report(
    *,
    stored_samples: int,
    full_samples: int,
    seconds_per_iteration: Optional[float] = None,
    accuracy: Optional[float] = None,
) -> EfficiencyReport:
    if full_samples <= 0:
        raise ContractError("full dataset size must be positive")
    return EfficiencyReport(
        stored_samples=stored_samples,
        full_samples=full_samples,
        storage_ratio=stored_samples / full_samples,
        peak_rss_bytes=peak_rss_bytes(),
        seconds_per_iteration=seconds_per_iteration,
        accuracy=accuracy,
    )


def write_efficiency_csv(path, report: EfficiencyReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["accuracy", "seconds_per_iteration", "stored_samples", "full_samples", "storage_ratio", "peak_rss_bytes"]
        )
        writer.writerow(
            [
                "" if report.accuracy is None else repr(report.accuracy),
                "" if report.seconds_per_iteration is None else repr(report.seconds_per_iteration),
                report.stored_samples,
                report.full_samples,
                repr(report.storage_ratio),
                report.peak_rss_bytes,
            ]
        )
