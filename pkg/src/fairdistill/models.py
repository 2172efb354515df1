"""Randomly initialized feature extractors and evaluation classifiers.

An architecture is a stack of conv+pool blocks followed by dense layers;
the final listed layer is the embedding, and a dense head on top of it
produces logits.  The desk-scale ladder (convnet / mlp / deep / wide)
stands in for the usual model zoo in cross-architecture checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .container import read_params, write_params

KERNEL = 3


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "conv" (conv + 2x2 avg pool) or "dense"
    width: int


@dataclass(frozen=True)
class Arch:
    name: str
    in_channels: int
    resolution: Tuple[int, int]
    layers: Tuple[LayerSpec, ...]
    num_classes: int

    def __post_init__(self):
        h, w = self.resolution
        seen_dense = False
        for spec in self.layers:
            if spec.width <= 0:
                raise ModelError("layer width must be positive")
            if spec.kind == "conv":
                if seen_dense:
                    raise ModelError("conv layer after dense layer does not compose")
                if h % 2 or w % 2:
                    raise ModelError("conv+pool needs even spatial dims, got %dx%d" % (h, w))
                h, w = h // 2, w // 2
            elif spec.kind == "dense":
                seen_dense = True
            else:
                raise ModelError("unknown layer kind %r" % spec.kind)
        if h < 1 or w < 1:
            raise ModelError("spatial dims collapsed below 1x1")
        if not self.layers:
            raise ModelError("empty architecture")

    @property
    def embed_dim(self) -> int:
        h, w = self.resolution
        channels = self.in_channels
        flat: Optional[int] = None
        for spec in self.layers:
            if spec.kind == "conv":
                channels = spec.width
                h, w = h // 2, w // 2
                flat = None
            else:
                flat = spec.width
        return flat if flat is not None else channels * h * w


_LADDER = {
    "convnet": (("conv", 32), ("conv", 32), ("dense", 64)),
    "mlp": (("dense", 128), ("dense", 128)),
    "deep_convnet": (("conv", 32), ("conv", 32), ("conv", 32), ("dense", 64)),
    "wide_convnet": (("conv", 64), ("conv", 64), ("dense", 64)),
}


def arch_names() -> List[str]:
    return sorted(_LADDER)


def build_arch(name: str, in_channels: int, resolution: Tuple[int, int],
               num_classes: int) -> Arch:
    if name not in _LADDER:
        raise ModelError("unknown architecture %r (choose from %s)" % (name, arch_names()))
    layers = tuple(LayerSpec(kind, width) for kind, width in _LADDER[name])
    return Arch(name, in_channels, tuple(resolution), layers, num_classes)


@dataclass
class NetworkParams:
    arch: Arch
    tensors: List[Tensor]  # weight, bias per layer; dense head last

    @property
    def embed_dim(self) -> int:
        return self.arch.embed_dim

    def detached(self) -> "NetworkParams":
        return NetworkParams(self.arch, [t.detach() for t in self.tensors])

    def copy(self, requires_grad: bool) -> "NetworkParams":
        return NetworkParams(self.arch, [
            Tensor(t.data.copy(), requires_grad=requires_grad, name=t.name)
            for t in self.tensors
        ])


def init_network(arch: Arch, seed: int) -> NetworkParams:
    """Kaiming-scaled normal weights (std = sqrt(2/fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    tensors: List[Tensor] = []
    channels = arch.in_channels
    h, w = arch.resolution
    flat: Optional[int] = None
    for li, spec in enumerate(arch.layers):
        if spec.kind == "conv":
            fan_in = channels * KERNEL * KERNEL
            weight = rng.standard_normal((spec.width, channels, KERNEL, KERNEL))
            weight *= np.sqrt(2.0 / fan_in)
            bias = np.zeros(spec.width)
            channels, h, w = spec.width, h // 2, w // 2
        else:
            fan_in = flat if flat is not None else channels * h * w
            weight = rng.standard_normal((fan_in, spec.width)) * np.sqrt(2.0 / fan_in)
            bias = np.zeros(spec.width)
            flat = spec.width
        tensors.append(Tensor(weight, requires_grad=True, name="layer%d.weight" % li))
        tensors.append(Tensor(bias, requires_grad=True, name="layer%d.bias" % li))
    embed_dim = flat if flat is not None else channels * h * w
    head = rng.standard_normal((embed_dim, arch.num_classes)) * np.sqrt(2.0 / embed_dim)
    tensors.append(Tensor(head, requires_grad=True, name="head.weight"))
    tensors.append(Tensor(np.zeros(arch.num_classes), requires_grad=True, name="head.bias"))
    return NetworkParams(arch, tensors)


def _as_batch(arch: Arch, batch: Union[Tensor, np.ndarray]) -> Tensor:
    x = batch if isinstance(batch, Tensor) else ad.constant(np.asarray(batch, dtype=np.float64))
    expected = (arch.in_channels,) + arch.resolution
    if x.data.ndim != 4 or x.shape[1:] != expected:
        raise ModelError("batch shape %s does not match architecture input %s"
                         % (x.shape, ("B",) + expected))
    return x


def embed(params: NetworkParams, batch: Union[Tensor, np.ndarray]) -> Tensor:
    """Penultimate representation [B, embed_dim], differentiable in batch and params."""
    x = _as_batch(params.arch, batch)
    it = iter(params.tensors)
    flattened = False
    for spec in params.arch.layers:
        weight, bias = next(it), next(it)
        if spec.kind == "conv":
            x = ad.avg_pool2(ad.relu(ad.conv2d(x, weight, bias)))
        else:
            if not flattened:
                x = ad.flatten(x)
                flattened = True
            x = ad.relu(ad.add(ad.matmul(x, weight), bias))
    if not flattened:
        x = ad.flatten(x)
    return x


def logits(params: NetworkParams, batch: Union[Tensor, np.ndarray]) -> Tensor:
    """Class scores [B, num_classes]: embedding through the dense head."""
    emb = embed(params, batch)
    head_w, head_b = params.tensors[-2], params.tensors[-1]
    return ad.add(ad.matmul(emb, head_w), head_b)


def save_network(path, params: NetworkParams) -> None:
    write_params(path, [t.data for t in params.tensors])


def load_network(path, arch: Arch, requires_grad: bool = False) -> NetworkParams:
    arrays = read_params(path)
    reference = init_network(arch, seed=0)
    if len(arrays) != len(reference.tensors):
        raise ModelError("checkpoint has %d tensors, architecture needs %d"
                         % (len(arrays), len(reference.tensors)))
    tensors = []
    for arr, ref in zip(arrays, reference.tensors):
        if arr.shape != ref.data.shape:
            raise ModelError("checkpoint tensor %s has shape %s, expected %s"
                             % (ref.name, arr.shape, ref.data.shape))
        tensors.append(Tensor(arr, requires_grad=requires_grad, name=ref.name))
    return NetworkParams(arch, tensors)
