"""Matching losses: class-level distribution/gradient alignment with group weighting.

Three weightings share one structure.  ``vanilla_ratio`` matches the
synthetic class signal against the ratio-weighted mixture of group
signals, so majority groups dominate.  ``fairdd_uniform`` matches against
every group signal separately with equal weight, and ``inverse_ratio``
down-weights large groups by 1/(|A| r), reducing to the uniform form on
balanced data.

Distance terms use the sum convention: mse sums squared coordinate
differences and mae sums absolute ones, so the stationary points worked
out for the weighted/arithmetic means hold without scale factors.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .models import NetworkParams, embed, logits

MATCHERS = ("distribution", "gradient")
DISTANCES = ("mse", "mae", "cosine")
WEIGHTINGS = ("vanilla_ratio", "fairdd_uniform", "inverse_ratio")


class MatchingError(ValueError):
    pass


@dataclass(frozen=True)
class MatchSpec:
    matcher: str = "distribution"
    distance: str = "mse"
    weighting: str = "fairdd_uniform"

    def __post_init__(self):
        if self.matcher not in MATCHERS:
            raise MatchingError("matcher %r not in %s" % (self.matcher, MATCHERS))
        if self.distance not in DISTANCES:
            raise MatchingError("distance %r not in %s" % (self.distance, DISTANCES))
        if self.weighting not in WEIGHTINGS:
            raise MatchingError("weighting %r not in %s" % (self.weighting, WEIGHTINGS))


@dataclass
class SyntheticSet:
    """Learnable pixels with fixed class-major labels, ipc per class."""

    pixels: Tensor
    labels: np.ndarray = field(repr=False)
    ipc: int = 1
    num_classes: int = 1

    def __post_init__(self):
        expected = np.repeat(np.arange(self.num_classes), self.ipc)
        if not np.array_equal(np.asarray(self.labels), expected):
            raise MatchingError("labels must be class-major with %d per class" % self.ipc)
        if self.pixels.shape[0] != self.num_classes * self.ipc:
            raise MatchingError("pixels hold %d rows, labels %d"
                                % (self.pixels.shape[0], len(expected)))
        self.labels = expected
        self.labels.setflags(write=False)

    def class_rows(self, y: int):
        return y * self.ipc, (y + 1) * self.ipc

    def class_labels(self, y: int) -> np.ndarray:
        return np.full(self.ipc, y, dtype=np.int64)


GroupBatches = Dict[int, Dict[int, np.ndarray]]
GroupRatios = Dict[int, Dict[int, float]]


def distance(kind: str, u: Tensor, v: Tensor) -> Tensor:
    """Distance term between two equal-length signal vectors (sum convention)."""
    if kind not in DISTANCES:
        raise MatchingError("distance %r not in %s" % (kind, DISTANCES))
    if u.shape != v.shape:
        raise MatchingError("distance: shapes %s vs %s" % (u.shape, v.shape))
    if kind == "mse":
        return ad.scalar_mul(ad.mse(u, v), float(max(u.size, 1)))
    if kind == "mae":
        return ad.scalar_mul(ad.mae(u, v), float(max(u.size, 1)))
    return ad.cosine_distance(u, v)


def _check_batches(batches: GroupBatches, ratios: GroupRatios) -> None:
    for y, groups in sorted(batches.items()):
        if y not in ratios:
            raise MatchingError("class %d has batches but no ratios" % y)
        for a, batch in sorted(groups.items()):
            if batch is None or len(batch) == 0:
                raise MatchingError("empty real batch for class %d, group %d" % (y, a))
            if a not in ratios[y]:
                raise MatchingError("class %d group %d missing from ratios" % (y, a))


def _group_weights(weighting: str, ratios_y: Dict[int, float]) -> Dict[int, float]:
    n_groups = len(ratios_y)
    if weighting == "fairdd_uniform":
        return {a: 1.0 for a in ratios_y}
    if weighting == "inverse_ratio":
        return {a: 1.0 / (n_groups * r) for a, r in ratios_y.items()}
    raise MatchingError("no per-group weights for %r" % weighting)


def dm_loss(spec: MatchSpec, params: NetworkParams, batches: GroupBatches,
            ratios: GroupRatios, synthetic: SyntheticSet) -> Tensor:
    """Distribution-matching loss over mean embeddings, per class.

    vanilla_ratio:   sum_y D(sum_a r_y^a mu_y^a, m_y)
    fairdd_uniform:  sum_y sum_a D(mu_y^a, m_y)
    inverse_ratio:   sum_y sum_a D(mu_y^a, m_y) / (|A| r_y^a)

    Differentiable with respect to the synthetic pixels only.
    """
    _check_batches(batches, ratios)
    frozen = params.detached()
    syn_emb = embed(frozen, synthetic.pixels)

    # one forward pass over all real group batches, then segment means
    spans = {}
    stacked = []
    offset = 0
    for y in sorted(batches):
        for a, batch in sorted(batches[y].items()):
            spans[(y, a)] = (offset, offset + len(batch))
            stacked.append(np.asarray(batch, dtype=np.float64))
            offset += len(batch)
    real_emb = embed(frozen, np.concatenate(stacked)).data

    total = ad.constant(0.0)
    for y in sorted(batches):
        start, stop = synthetic.class_rows(y)
        if stop > synthetic.pixels.shape[0]:
            raise MatchingError("class %d outside synthetic set" % y)
        m_y = ad.mean_axis(ad.slice_rows(syn_emb, start, stop), 0)
        mus = {a: real_emb[spans[(y, a)][0]:spans[(y, a)][1]].mean(axis=0)
               for a in sorted(batches[y])}
        if spec.weighting == "vanilla_ratio":
            target = sum(ratios[y][a] * mu for a, mu in sorted(mus.items()))
            total = ad.add(total, distance(spec.distance, ad.constant(target), m_y))
        else:
            weights = _group_weights(spec.weighting, ratios[y])
            for a, mu in sorted(mus.items()):
                term = distance(spec.distance, ad.constant(mu), m_y)
                total = ad.add(total, ad.scalar_mul(term, weights[a]))
    return total


def gradient_signal(params: NetworkParams, batch: Union[Tensor, np.ndarray],
                    labels: np.ndarray) -> List[Tensor]:
    """Per-parameter flattened gradients of the mean cross-entropy.

    Parameter gradients are taken on a fresh graph whose leaves are the
    (copied) parameters; the returned vectors remain differentiable with
    respect to the batch pixels when the batch requires grad.
    """
    live = params if all(t.requires_grad for t in params.tensors) else params.copy(True)
    inner = ad.softmax_cross_entropy(logits(live, batch), labels)
    grads = ad.grad(inner, live.tensors)
    return [ad.reshape(g, (g.size,)) for g in grads]


def _signal_distance(kind: str, target: List[np.ndarray], moving: List[Tensor]) -> Tensor:
    if kind == "cosine":
        total = ad.constant(0.0)
        for t, m in zip(target, moving):
            total = ad.add(total, ad.cosine_distance(ad.constant(t), m))
        return total
    return distance(kind, ad.constant(np.concatenate(target)), ad.concat(moving))


def gm_loss(spec: MatchSpec, params: NetworkParams, batches: GroupBatches,
            ratios: GroupRatios, synthetic: SyntheticSet) -> Tensor:
    """Gradient-matching loss, per class.

    The synthetic class batch produces one gradient signal; vanilla
    matches it against the pooled real class batch, the group weightings
    against each group's signal.  Cosine applies per layer and sums,
    mse/mae act on the concatenated vector.
    """
    _check_batches(batches, ratios)
    total = ad.constant(0.0)
    for y in sorted(batches):
        start, stop = synthetic.class_rows(y)
        syn_batch = ad.slice_rows(synthetic.pixels, start, stop)
        syn_signal = gradient_signal(params, syn_batch, synthetic.class_labels(y))
        if spec.weighting == "vanilla_ratio":
            pooled = np.concatenate([batches[y][a] for a in sorted(batches[y])])
            pooled_labels = np.full(len(pooled), y, dtype=np.int64)
            target = [g.data for g in gradient_signal(params, pooled, pooled_labels)]
            total = ad.add(total, _signal_distance(spec.distance, target, syn_signal))
        else:
            weights = _group_weights(spec.weighting, ratios[y])
            for a, batch in sorted(batches[y].items()):
                labels_y = np.full(len(batch), y, dtype=np.int64)
                target = [g.data for g in gradient_signal(params, batch, labels_y)]
                term = _signal_distance(spec.distance, target, syn_signal)
                total = ad.add(total, ad.scalar_mul(term, weights[a]))
    return total


def match_loss(spec: MatchSpec, params: NetworkParams, batches: GroupBatches,
               ratios: GroupRatios, synthetic: SyntheticSet) -> Tensor:
    fn = dm_loss if spec.matcher == "distribution" else gm_loss
    return fn(spec, params, batches, ratios, synthetic)
