"""Classifier training on condensed sets and equalized-odds reporting.

The conditional-accuracy matrix P[y][a] = P(pred=y | target=y, group=a)
drives both gap metrics: the worst-case gap (max over classes of the max
pairwise group difference) and the class-averaged gap, both on a 0-100
scale.  Lower is fairer, and the average can never exceed the maximum.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from . import autodiff as ad
from .datasets import LabeledDataset
from .matching import SyntheticSet
from .models import NetworkParams, build_arch, init_network, logits


class FairnessError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    arch: str = "convnet"
    epochs: int = 100
    lr: float = 0.01
    batch: int = 64

    def __post_init__(self):
        if self.epochs < 0 or self.lr <= 0 or self.batch < 1:
            raise FairnessError("invalid eval config: %r" % (self,))


@dataclass
class ConditionalAccuracy:
    matrix: np.ndarray  # [num_classes, num_groups] in [0,1]
    counts: np.ndarray  # [num_classes, num_groups] >= 1

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.matrix.shape != self.counts.shape or self.matrix.ndim != 2:
            raise FairnessError("matrix %s vs counts %s" % (self.matrix.shape, self.counts.shape))
        if np.any(self.counts < 1):
            raise FairnessError("every (class, group) cell needs at least one example")
        if np.any(self.matrix < 0) or np.any(self.matrix > 1):
            raise FairnessError("conditional accuracies must lie in [0,1]")


@dataclass
class FairnessReport:
    accuracy: float
    deo_m: float
    deo_a: float
    accuracy_std: float
    deo_m_std: float
    deo_a_std: float
    matrix: List[List[float]]
    counts: List[List[int]]
    seeds: List[int]
    config: Dict = field(default_factory=dict)

    def to_json(self, path=None) -> str:
        text = json.dumps(asdict(self), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text)
        return text

    def flat_row(self) -> Dict[str, float]:
        return {
            "acc": round(self.accuracy, 4), "acc_std": round(self.accuracy_std, 4),
            "deo_m": round(self.deo_m, 4), "deo_m_std": round(self.deo_m_std, 4),
            "deo_a": round(self.deo_a, 4), "deo_a_std": round(self.deo_a_std, 4),
        }


def _training_arrays(source: Union[SyntheticSet, LabeledDataset]) -> Tuple[np.ndarray, np.ndarray, int]:
    if isinstance(source, SyntheticSet):
        return source.pixels.data, np.asarray(source.labels), source.num_classes
    return source.images, source.targets, source.num_classes


def train_classifier(source: Union[SyntheticSet, LabeledDataset], arch: str,
                     epochs: int, lr: float, seed: int, batch: int = 64) -> NetworkParams:
    """SGD on softmax cross-entropy over shuffled minibatches, seed-deterministic."""
    images, labels, num_classes = _training_arrays(source)
    if len(images) == 0:
        raise FairnessError("cannot train on an empty set")
    params = init_network(build_arch(arch, images.shape[1], images.shape[2:], num_classes),
                          seed=seed)
    rng = np.random.default_rng((seed, 0x5D))
    n = len(images)
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch):
            sel = order[lo:lo + batch]
            loss = ad.softmax_cross_entropy(logits(params, images[sel]), labels[sel])
            ad.backward(loss)
            ad.sgd_update(params.tensors, lr)
    return params


def predict(params: NetworkParams, images: np.ndarray, batch: int = 256) -> np.ndarray:
    preds = np.empty(len(images), dtype=np.int64)
    frozen = params.detached()
    for lo in range(0, len(images), batch):
        scores = logits(frozen, images[lo:lo + batch]).data
        preds[lo:lo + batch] = np.argmax(scores, axis=1)
    return preds


def conditional_accuracy(params: NetworkParams, test: LabeledDataset) -> ConditionalAccuracy:
    """Empirical P(pred=y | target=y, group=a) per cell; demands a balanced test."""
    preds = predict(params, test.images)
    k, g = test.num_classes, test.num_groups
    matrix = np.zeros((k, g))
    counts = np.zeros((k, g), dtype=np.int64)
    for y in range(k):
        for a in range(g):
            cell = (test.targets == y) & (test.protected == a)
            counts[y, a] = cell.sum()
            if counts[y, a] == 0:
                raise FairnessError(
                    "test set has no examples with class %d and group %d; "
                    "a balanced test set is required" % (y, a))
            matrix[y, a] = np.mean(preds[cell] == y)
    return ConditionalAccuracy(matrix, counts)


def deo(ca: ConditionalAccuracy) -> Tuple[float, float]:
    """Worst-case and class-averaged equalized-odds gaps, percent."""
    if ca.matrix.shape[1] < 2:
        raise FairnessError("equalized-odds gaps need at least 2 groups")
    gaps = ca.matrix.max(axis=1) - ca.matrix.min(axis=1)
    return 100.0 * float(gaps.max()), 100.0 * float(gaps.mean())


def evaluate(source: Union[SyntheticSet, LabeledDataset], test: LabeledDataset,
             config: EvalConfig, seeds: Sequence[int]) -> FairnessReport:
    """Train one classifier per seed and report mean +/- std metrics."""
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise FairnessError("evaluate needs at least one seed")
    accs, deoms, deoas, matrices = [], [], [], []
    counts = None
    for seed in seeds:
        params = train_classifier(source, config.arch, config.epochs, config.lr,
                                  seed=seed, batch=config.batch)
        preds = predict(params, test.images)
        accs.append(100.0 * float(np.mean(preds == test.targets)))
        ca = conditional_accuracy(params, test)
        m, a = deo(ca)
        deoms.append(m)
        deoas.append(a)
        matrices.append(ca.matrix)
        counts = ca.counts
    mean_matrix = np.mean(matrices, axis=0)
    return FairnessReport(
        accuracy=float(np.mean(accs)), deo_m=float(np.mean(deoms)), deo_a=float(np.mean(deoas)),
        accuracy_std=float(np.std(accs)), deo_m_std=float(np.std(deoms)),
        deo_a_std=float(np.std(deoas)),
        matrix=[[float(v) for v in row] for row in mean_matrix],
        counts=[[int(v) for v in row] for row in counts],
        seeds=seeds,
        config=asdict(config),
    )


def write_report_csv(path, rows: List[Dict]) -> None:
    """Flat CSV rows: experiment identity columns then metric columns."""
    if not rows:
        raise FairnessError("no rows to write")
    fields = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
