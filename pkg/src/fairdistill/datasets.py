"""Procedural glyph datasets with controllable protected-attribute bias.

Each class gets a deterministic stroke-pattern glyph; per-example jitter
(shift, brightness, stroke noise) comes from the dataset seed.  Color or
grayscale bias then correlates the class label with a protected group at
a chosen biased ratio, and balanced test sets undo that correlation.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .container import read_dataset, write_dataset

_GLYPH_FAMILY_SALT = 9176  # namespaces the per-class stroke RNG
_LUMA = np.array([0.299, 0.587, 0.114])


class DatasetError(ValueError):
    pass


@dataclass
class LabeledDataset:
    """Images [N,C,H,W] in [0,1] plus target and protected labels."""

    images: np.ndarray
    targets: np.ndarray
    protected: np.ndarray
    num_classes: int
    num_groups: int

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.int64)
        self.protected = np.asarray(self.protected, dtype=np.int64)
        n = self.images.shape[0]
        if self.targets.shape != (n,) or self.protected.shape != (n,):
            raise DatasetError("labels do not match N=%d" % n)
        if self.images.ndim != 4:
            raise DatasetError("images must be [N,C,H,W], got %s" % (self.images.shape,))
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise DatasetError("pixel values outside [0,1]")
        present = np.unique(self.targets)
        if len(present) != self.num_classes or present.min() != 0:
            raise DatasetError("every class in [0,%d) must appear" % self.num_classes)

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def channels(self) -> int:
        return self.images.shape[1]

    @property
    def resolution(self) -> Tuple[int, int]:
        return self.images.shape[2], self.images.shape[3]

    def save(self, path) -> None:
        write_dataset(path, self.images, self.targets, self.protected,
                      self.num_classes, self.num_groups)

    @staticmethod
    def load(path) -> "LabeledDataset":
        images, targets, protected, num_classes, num_groups = read_dataset(path)
        return LabeledDataset(images, targets, protected, num_classes, num_groups)


@dataclass(frozen=True)
class BiasSpec:
    num_classes: int
    num_groups: int
    br: float
    mode: str = "foreground"  # foreground | background | grayscale
    minority_weights: Optional[Tuple[float, ...]] = None
    resolution: Tuple[int, int] = (16, 16)
    per_class_count: int = 200

    def __post_init__(self):
        if self.mode not in ("foreground", "background", "grayscale"):
            raise DatasetError("unknown bias mode %r" % self.mode)
        # the balanced point br = 1/|A| is allowed (it is how balanced sets are painted)
        if self.num_groups > 1 and not (1.0 / self.num_groups - 1e-12 <= self.br <= 1.0):
            raise DatasetError("br=%g outside [1/%d, 1]" % (self.br, self.num_groups))
        if self.minority_weights is not None:
            w = np.asarray(self.minority_weights, dtype=np.float64)
            if w.shape != (self.num_groups - 1,) or np.any(w <= 0):
                raise DatasetError("minority_weights must be %d positive numbers"
                                   % (self.num_groups - 1))
            if abs(w.sum() - 1.0) > 1e-9:
                raise DatasetError("minority_weights must sum to 1")
        if self.mode == "grayscale" and self.num_groups != 2:
            raise DatasetError("grayscale bias requires exactly 2 groups")


@dataclass
class GroupPartition:
    """Per-(class, group) index lists and sample ratios."""

    indices: Dict[Tuple[int, int], np.ndarray]
    ratios: Dict[int, Dict[int, float]]
    classes: List[int] = field(default_factory=list)
    groups: List[int] = field(default_factory=list)

    def class_size(self, y: int) -> int:
        return sum(len(self.indices[(y, a)]) for a in self.groups if (y, a) in self.indices)


# ---------------------------------------------------------------------------
# glyph generation
# ---------------------------------------------------------------------------

def _class_glyph(cls: int, h: int, w: int) -> np.ndarray:
    """Deterministic stroke mask for one class, padded by 1 pixel for shifting."""
    rng = np.random.default_rng(_GLYPH_FAMILY_SALT + cls)
    canvas = np.zeros((h + 2, w + 2), dtype=np.float64)
    margin = 2
    for _ in range(3):
        while True:
            y0, y1 = rng.integers(margin, h - margin + 1, size=2) + 1
            x0, x1 = rng.integers(margin, w - margin + 1, size=2) + 1
            if abs(int(y1) - int(y0)) + abs(int(x1) - int(x0)) >= h // 3:
                break
        steps = 2 * max(abs(int(y1) - int(y0)), abs(int(x1) - int(x0))) + 1
        ys = np.round(np.linspace(y0, y1, steps)).astype(int)
        xs = np.round(np.linspace(x0, x1, steps)).astype(int)
        canvas[ys, xs] = 1.0
        canvas[ys + 1, xs] = 1.0  # 2px thickness keeps glyphs visible after pooling
    return canvas


def generate_glyph_dataset(spec: BiasSpec, seed: int) -> LabeledDataset:
    """Grayscale glyph images, one shape family per class, jittered per example."""
    h, w = spec.resolution
    if h < 8 or w < 8:
        raise DatasetError("resolution %s below 8x8" % (spec.resolution,))
    if spec.per_class_count < spec.num_groups:
        raise DatasetError("per_class_count=%d cannot populate %d groups"
                           % (spec.per_class_count, spec.num_groups))
    rng = np.random.default_rng(seed)
    n = spec.num_classes * spec.per_class_count
    images = np.zeros((n, 1, h, w), dtype=np.float64)
    targets = np.repeat(np.arange(spec.num_classes), spec.per_class_count)
    for cls in range(spec.num_classes):
        base = _class_glyph(cls, h, w)
        for j in range(spec.per_class_count):
            i = cls * spec.per_class_count + j
            dy, dx = rng.integers(-1, 2, size=2)
            window = base[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
            brightness = rng.uniform(0.75, 1.0)
            noise = 1.0 + 0.1 * rng.standard_normal((h, w))
            images[i, 0] = np.clip(window * brightness * noise, 0.0, 1.0)
    protected = np.zeros(n, dtype=np.int64)
    return LabeledDataset(images, targets, protected, spec.num_classes, 1)


def default_palette(num_groups: int) -> Tuple[Tuple[float, float, float], ...]:
    """Evenly spaced fully saturated hues."""
    return tuple(colorsys.hsv_to_rgb(i / num_groups, 1.0, 1.0) for i in range(num_groups))


# ---------------------------------------------------------------------------
# bias application
# ---------------------------------------------------------------------------

def apportion(total: int, weights: Sequence[float]) -> np.ndarray:
    """Largest-remainder apportionment of ``total`` items over ``weights``.

    Ties in the fractional remainders break toward lower index, so the
    split is deterministic and sums exactly to ``total``.
    """
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or w.sum() <= 0:
        raise DatasetError("apportion: weights must be nonnegative with positive sum")
    quota = total * w / w.sum()
    counts = np.floor(quota).astype(np.int64)
    remainder = total - counts.sum()
    order = np.lexsort((np.arange(len(w)), -(quota - counts)))
    counts[order[:remainder]] += 1
    return counts


def _group_quotas(spec: BiasSpec, class_count: int, majority: int) -> np.ndarray:
    weights = np.empty(spec.num_groups)
    weights[majority] = spec.br
    minority = [a for a in range(spec.num_groups) if a != majority]
    if spec.minority_weights is not None:
        for a, mw in zip(minority, spec.minority_weights):
            weights[a] = (1.0 - spec.br) * mw
    else:
        for a in minority:
            weights[a] = (1.0 - spec.br) / max(len(minority), 1)
    return apportion(class_count, weights)


def _paint(gray: np.ndarray, color: np.ndarray, mode: str) -> np.ndarray:
    """Turn a [1,H,W] glyph into an RGB image, coloring glyph or ground."""
    g = gray[0]
    mask = g > 0
    out = np.empty((3,) + g.shape)
    if mode == "foreground":
        for c in range(3):
            out[c] = g * color[c]
    else:
        for c in range(3):
            out[c] = np.where(mask, g, color[c])
    return out


def apply_color_bias(ds: LabeledDataset, spec: BiasSpec,
                     palette: Sequence[Tuple[float, float, float]], seed: int) -> LabeledDataset:
    """Correlate class with color at ratio ``spec.br``; majority color is y mod groups."""
    if ds.channels != 1:
        raise DatasetError("apply_color_bias expects grayscale input")
    if spec.mode not in ("foreground", "background"):
        raise DatasetError("apply_color_bias: mode %r is not a color mode" % spec.mode)
    pal = np.asarray(palette, dtype=np.float64)
    if pal.shape != (spec.num_groups, 3):
        raise DatasetError("palette has %d colors, expected %d" % (pal.shape[0], spec.num_groups))
    if len(np.unique(pal, axis=0)) != spec.num_groups:
        raise DatasetError("palette colors must be pairwise distinct")
    if np.any(pal < 0) or np.any(pal > 1):
        raise DatasetError("palette colors must lie in [0,1]")

    h, w = ds.resolution
    images = np.empty((len(ds), 3, h, w))
    protected = np.empty(len(ds), dtype=np.int64)
    for y in range(ds.num_classes):
        idx = np.flatnonzero(ds.targets == y)
        rng = np.random.default_rng((seed, y))
        idx = rng.permutation(idx)
        majority = y % spec.num_groups
        counts = _group_quotas(spec, len(idx), majority)
        order = [majority] + [a for a in range(spec.num_groups) if a != majority]
        pos = 0
        for a in order:
            for i in idx[pos:pos + counts[a]]:
                images[i] = _paint(ds.images[i], pal[a], spec.mode)
                protected[i] = a
            pos += counts[a]
    return LabeledDataset(images, ds.targets.copy(), protected, ds.num_classes, spec.num_groups)


def to_grayscale(images: np.ndarray) -> np.ndarray:
    """Replicate luminance 0.299R + 0.587G + 0.114B across all channels."""
    luma = np.tensordot(_LUMA, images, axes=([0], [1]))
    return np.repeat(luma[:, None], 3, axis=1)


def colorize_uniform(ds: LabeledDataset, palette: Sequence[Tuple[float, float, float]],
                     seed: int) -> LabeledDataset:
    """Paint each example a random palette color with no class correlation."""
    if ds.channels != 1:
        raise DatasetError("colorize_uniform expects grayscale input")
    pal = np.asarray(palette, dtype=np.float64)
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(pal), size=len(ds))
    images = np.empty((len(ds), 3) + ds.resolution)
    for i in range(len(ds)):
        images[i] = _paint(ds.images[i], pal[picks[i]], "foreground")
    return LabeledDataset(images, ds.targets.copy(), np.zeros(len(ds), dtype=np.int64),
                          ds.num_classes, 1)


def apply_grayscale_bias(ds: LabeledDataset, br: float, seed: int) -> LabeledDataset:
    """Grayscale-vs-color protected attribute: group 0 = color, 1 = grayscale.

    The first half of the classes has grayscale as its majority group, the
    second half color, each at ratio ``br``.
    """
    if ds.channels != 3:
        raise DatasetError("apply_grayscale_bias expects 3-channel input")
    images = ds.images.copy()
    protected = np.zeros(len(ds), dtype=np.int64)
    gray_major_limit = (ds.num_classes + 1) // 2
    for y in range(ds.num_classes):
        idx = np.flatnonzero(ds.targets == y)
        rng = np.random.default_rng((seed, y))
        idx = rng.permutation(idx)
        n_major = apportion(len(idx), [br, 1.0 - br])[0]
        gray_is_major = y < gray_major_limit
        gray_idx = idx[:n_major] if gray_is_major else idx[n_major:]
        images[gray_idx] = to_grayscale(images[gray_idx])
        protected[gray_idx] = 1
    return LabeledDataset(images, ds.targets.copy(), protected, ds.num_classes, 2)


def build_balanced_test(spec: BiasSpec, palette: Sequence[Tuple[float, float, float]],
                        seed: int) -> LabeledDataset:
    """Test set with exactly equal group counts per class.

    Color modes paint per_class_count/num_groups examples per color;
    grayscale mode duplicates every image and grayscales the copies.
    """
    base = generate_glyph_dataset(spec, seed)
    if spec.mode == "grayscale":
        colored = colorize_uniform(base, palette, seed + 1)
        gray = LabeledDataset(to_grayscale(colored.images), colored.targets.copy(),
                              np.ones(len(colored), dtype=np.int64), colored.num_classes, 2)
        images = np.concatenate([colored.images, gray.images])
        targets = np.concatenate([colored.targets, gray.targets])
        protected = np.concatenate([np.zeros(len(colored), dtype=np.int64), gray.protected])
        return LabeledDataset(images, targets, protected, spec.num_classes, 2)

    if spec.per_class_count % spec.num_groups != 0:
        raise DatasetError("per_class_count=%d not divisible by %d groups: balance must be exact"
                           % (spec.per_class_count, spec.num_groups))
    balanced = BiasSpec(spec.num_classes, spec.num_groups, 1.0 / spec.num_groups
                        if spec.num_groups > 1 else 1.0,
                        mode=spec.mode, resolution=spec.resolution,
                        per_class_count=spec.per_class_count)
    # br = 1/|A| with even minority split gives exactly equal quotas
    return apply_color_bias(base, balanced, palette, seed)


# ---------------------------------------------------------------------------
# partitions, corruption, measurement
# ---------------------------------------------------------------------------

def partition_groups(ds: LabeledDataset) -> GroupPartition:
    if len(ds) == 0:
        raise DatasetError("partition_groups: empty dataset")
    indices: Dict[Tuple[int, int], np.ndarray] = {}
    ratios: Dict[int, Dict[int, float]] = {}
    classes = sorted(int(y) for y in np.unique(ds.targets))
    groups = sorted(int(a) for a in np.unique(ds.protected))
    for y in classes:
        class_mask = ds.targets == y
        total = int(class_mask.sum())
        ratios[y] = {}
        for a in groups:
            sel = np.flatnonzero(class_mask & (ds.protected == a))
            if len(sel):
                indices[(y, a)] = sel
                ratios[y][a] = len(sel) / total
    return GroupPartition(indices, ratios, classes, groups)


def corrupt_group_labels(ds: LabeledDataset, fraction: float, seed: int) -> LabeledDataset:
    """Resample protected labels uniformly for a random fraction of examples."""
    if not 0.0 <= fraction <= 1.0:
        raise DatasetError("fraction %g outside [0,1]" % fraction)
    rng = np.random.default_rng(seed)
    n_corrupt = int(np.floor(fraction * len(ds)))
    protected = ds.protected.copy()
    chosen = rng.choice(len(ds), size=n_corrupt, replace=False)
    protected[chosen] = rng.integers(0, ds.num_groups, size=n_corrupt)
    return LabeledDataset(ds.images.copy(), ds.targets.copy(), protected,
                          ds.num_classes, ds.num_groups)


def measured_bias_ratio(ds: LabeledDataset) -> Dict[int, float]:
    """Largest group share per class: equals BR on a freshly biased dataset."""
    part = partition_groups(ds)
    return {y: max(part.ratios[y].values()) for y in part.classes}


def idx_to_dataset(images_path, labels_path, num_classes: Optional[int] = None) -> LabeledDataset:
    """Wrap a pair of IDX image/label files as a grayscale LabeledDataset."""
    from .container import read_idx

    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.ndim != 3 or labels.ndim != 1 or images.shape[0] != labels.shape[0]:
        raise DatasetError("IDX pair mismatch: images %s, labels %s"
                           % (images.shape, labels.shape))
    pixels = (images.astype(np.float64) / 255.0)[:, None]
    classes = num_classes or int(labels.max()) + 1
    return LabeledDataset(pixels, labels.astype(np.int64),
                          np.zeros(len(labels), dtype=np.int64), classes, 1)
