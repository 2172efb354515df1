"""Outer optimization: condense a biased dataset into a synthetic set.

Each iteration samples a fresh random extractor, draws per-group real
batches, evaluates the configured matching loss, and takes one projected
SGD step on the synthetic pixels (clamped back to [0,1]).  No inner
network training happens; the theta stream is seed + iteration, so runs
are bit-reproducible.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .datasets import LabeledDataset, partition_groups
from .matching import MatchSpec, SyntheticSet, match_loss
from .models import build_arch, init_network

INIT_STRATEGIES = ("random_real", "noise", "hybrid")


class DistillError(RuntimeError):
    pass


@dataclass(frozen=True)
class DistillConfig:
    ipc: int = 10
    iterations: int = 500
    lr_pixels: float = 5.0
    theta_seed_stream: int = 0
    init: str = "random_real"
    match: MatchSpec = field(default_factory=MatchSpec)
    group_batch: int = 64
    arch: str = "convnet"

    def __post_init__(self):
        if self.ipc < 1:
            raise ValueError("ipc must be >= 1")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.lr_pixels <= 0:
            raise ValueError("lr_pixels must be positive")
        if self.init not in INIT_STRATEGIES:
            raise ValueError("init %r not in %s" % (self.init, INIT_STRATEGIES))
        if self.group_batch < 1:
            raise ValueError("group_batch must be >= 1")


def init_synthetic(strategy: str, ipc: int, ds: LabeledDataset, seed: int) -> SyntheticSet:
    """Seed the synthetic pixels from real draws, clamped noise, or a mix."""
    if strategy not in INIT_STRATEGIES:
        raise ValueError("init %r not in %s" % (strategy, INIT_STRATEGIES))
    rng = np.random.default_rng(seed)
    c, (h, w) = ds.channels, ds.resolution
    m = ds.num_classes * ipc
    if strategy in ("random_real", "hybrid"):
        real = np.empty((m, c, h, w))
        for y in range(ds.num_classes):
            idx = np.flatnonzero(ds.targets == y)
            if len(idx) < ipc:
                raise DistillError("class %d has %d examples, need %d for %s init"
                                   % (y, len(idx), ipc, strategy))
            picks = rng.choice(idx, size=ipc, replace=False)
            real[y * ipc:(y + 1) * ipc] = ds.images[picks]
    if strategy == "random_real":
        pixels = real
    elif strategy == "noise":
        pixels = np.clip(rng.standard_normal((m, c, h, w)), 0.0, 1.0)
    else:
        noise = np.clip(rng.standard_normal((m, c, h, w)), 0.0, 1.0)
        use_real = rng.random(m) < 0.5
        pixels = np.where(use_real[:, None, None, None], real, noise)
    labels = np.repeat(np.arange(ds.num_classes), ipc)
    return SyntheticSet(Tensor(pixels, requires_grad=True, name="synthetic"),
                        labels, ipc, ds.num_classes)


def _draw_batches(part, ds: LabeledDataset, rng, group_batch: int):
    batches = {}
    for (y, a), idx in part.indices.items():
        take = min(len(idx), group_batch)
        picks = rng.choice(idx, size=take, replace=False)
        batches.setdefault(y, {})[a] = ds.images[picks]
    return batches


def distill(config: DistillConfig, ds: LabeledDataset) -> Tuple[SyntheticSet, List[float]]:
    """Run the outer loop; returns the synthetic set and per-iteration losses."""
    part = partition_groups(ds)
    arch = build_arch(config.arch, ds.channels, ds.resolution, ds.num_classes)
    synthetic = init_synthetic(config.init, config.ipc, ds, config.theta_seed_stream)
    labels_before = synthetic.labels.copy()
    trace: List[float] = []
    for it in range(config.iterations):
        theta = init_network(arch, seed=config.theta_seed_stream + it)
        batch_rng = np.random.default_rng((config.theta_seed_stream, it))
        batches = _draw_batches(part, ds, batch_rng, config.group_batch)
        try:
            loss = match_loss(config.match, theta, batches, part.ratios, synthetic)
            ad.backward(loss)
        except Exception as exc:
            raise DistillError("iteration %d: %s" % (it, exc)) from exc
        ad.sgd_update([synthetic.pixels], config.lr_pixels)
        synthetic.pixels.data = np.clip(synthetic.pixels.data, 0.0, 1.0)
        trace.append(loss.item())
    if not np.array_equal(synthetic.labels, labels_before):
        raise DistillError("synthetic labels changed during distillation")
    return synthetic, trace


def save_synthetic(path, synthetic: SyntheticSet, config: DistillConfig,
                   trace: List[float]) -> None:
    """Write the FDDS container, a JSON manifest (config echo + trace), and
    the loss trace as CSV for external plotting."""
    from .container import write_dataset

    write_dataset(path, synthetic.pixels.data, synthetic.labels,
                  np.zeros(len(synthetic.labels), dtype=np.int64),
                  synthetic.num_classes, 1)
    manifest = {
        "config": asdict(config),
        "trace": [float(v) for v in trace],
        "ipc": synthetic.ipc,
        "num_classes": synthetic.num_classes,
    }
    Path(str(path) + ".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    lines = ["iteration,loss"] + ["%d,%.17g" % (i, v) for i, v in enumerate(trace)]
    Path(str(path) + ".trace.csv").write_text("\n".join(lines) + "\n")


def load_synthetic(path) -> SyntheticSet:
    from .container import read_dataset

    images, targets, _, num_classes, _ = read_dataset(path)
    if len(targets) % num_classes:
        raise DistillError("synthetic container rows not divisible by class count")
    ipc = len(targets) // num_classes
    return SyntheticSet(Tensor(images, requires_grad=True, name="synthetic"),
                        targets, ipc, num_classes)
