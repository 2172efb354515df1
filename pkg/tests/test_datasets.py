import numpy as np
import pytest

from fairdistill import container
from fairdistill.datasets import (BiasSpec, DatasetError, LabeledDataset, apply_color_bias,
                                  apply_grayscale_bias, apportion, build_balanced_test,
                                  colorize_uniform, corrupt_group_labels, default_palette,
                                  generate_glyph_dataset, idx_to_dataset, measured_bias_ratio,
                                  partition_groups, to_grayscale)


def spec(classes=5, groups=4, br=0.9, mode="foreground", count=100, res=(16, 16), weights=None):
    return BiasSpec(classes, groups, br, mode=mode, minority_weights=weights,
                    resolution=res, per_class_count=count)


PALETTE4 = default_palette(4)


# ----------------------------------------------------------------- glyph base

def test_glyph_dataset_counts_and_range():
    ds = generate_glyph_dataset(spec(), seed=7)
    assert len(ds) == 500
    assert np.array_equal(np.bincount(ds.targets), [100] * 5)
    assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
    assert ds.channels == 1


def test_glyph_dataset_deterministic():
    a = generate_glyph_dataset(spec(), seed=7)
    b = generate_glyph_dataset(spec(), seed=7)
    assert np.array_equal(a.images, b.images)


def test_glyph_seeds_differ_but_histogram_matches():
    a = generate_glyph_dataset(spec(), seed=7)
    b = generate_glyph_dataset(spec(), seed=8)
    assert not np.array_equal(a.images, b.images)
    assert np.array_equal(np.bincount(a.targets), np.bincount(b.targets))


def test_glyph_rejects_tiny_resolution_and_population():
    with pytest.raises(DatasetError):
        generate_glyph_dataset(spec(res=(4, 4)), seed=0)
    with pytest.raises(DatasetError):
        generate_glyph_dataset(spec(count=3, groups=4), seed=0)


# --------------------------------------------------------------- apportionment

@pytest.mark.parametrize("total,weights,expected", [
    (100, [0.9] + [0.1 / 3] * 3, [90, 4, 3, 3]),
    (100, [0.9] + [0.1 / 9] * 9, [90, 2, 1, 1, 1, 1, 1, 1, 1, 1]),
    (12, [0.25] * 4, [3, 3, 3, 3]),
])
def test_apportion_largest_remainder(total, weights, expected):
    assert apportion(total, weights).tolist() == expected
    assert sum(expected) == total


def test_color_bias_exact_ratio_and_majority_color():
    ds = apply_color_bias(generate_glyph_dataset(spec(), 0), spec(), PALETTE4, seed=1)
    assert measured_bias_ratio(ds) == {y: 0.9 for y in range(5)}
    part = partition_groups(ds)
    for y in range(5):
        counts = {a: len(part.indices[(y, a)]) for a in range(4)}
        assert counts[y % 4] == 90
        assert sorted(counts[a] for a in range(4) if a != y % 4) == [3, 3, 4]


def test_color_bias_preserves_targets_and_pixel_range():
    base = generate_glyph_dataset(spec(), 0)
    ds = apply_color_bias(base, spec(), PALETTE4, seed=1)
    assert np.array_equal(ds.targets, base.targets)
    assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
    assert ds.channels == 3


def test_color_bias_balanced_point_is_symmetric():
    s = spec(br=0.25)
    ds = apply_color_bias(generate_glyph_dataset(s, 0), s, PALETTE4, seed=1)
    part = partition_groups(ds)
    assert all(len(part.indices[(y, a)]) == 25 for y in range(5) for a in range(4))


def test_color_bias_minority_weight_ladder():
    weights = tuple(i / 6.0 for i in (1, 2, 3))
    s = spec(br=0.7, count=120, weights=weights)
    ds = apply_color_bias(generate_glyph_dataset(s, 0), s, PALETTE4, seed=1)
    part = partition_groups(ds)
    counts = {a: len(part.indices[(0, a)]) for a in range(4)}
    # class 0: majority color 0 gets 84, the rest split 36 as 1:2:3 exactly
    assert counts[0] == 84
    assert [counts[1], counts[2], counts[3]] == [6, 12, 18]


def test_color_bias_foreground_vs_background():
    base = generate_glyph_dataset(spec(), 0)
    fg = apply_color_bias(base, spec(mode="foreground"), PALETTE4, 1)
    bg = apply_color_bias(base, spec(mode="background"), PALETTE4, 1)
    empty = base.images[0, 0] == 0
    assert np.all(fg.images[0][:, empty] == 0.0)   # fg mode leaves ground black
    assert np.any(bg.images[0][:, empty] > 0.0)    # bg mode paints the ground


def test_color_bias_validates_palette():
    base = generate_glyph_dataset(spec(), 0)
    with pytest.raises(DatasetError):
        apply_color_bias(base, spec(), default_palette(3), seed=1)
    with pytest.raises(DatasetError):
        apply_color_bias(base, spec(), [(1, 0, 0)] * 4, seed=1)


# ------------------------------------------------------------- grayscale bias

def _colored(classes=4, count=40, seed=0):
    s = BiasSpec(classes, 2, 0.9, mode="grayscale", resolution=(16, 16),
                 per_class_count=count)
    base = generate_glyph_dataset(s, seed)
    return colorize_uniform(base, default_palette(6), seed + 1)


def test_grayscale_bias_counts_flip_at_half():
    ds = apply_grayscale_bias(_colored(), br=0.9, seed=3)
    part = partition_groups(ds)
    for y in range(4):
        gray = len(part.indices.get((y, 1), []))
        assert gray == (36 if y < 2 else 4)


def test_grayscale_bias_balanced():
    ds = apply_grayscale_bias(_colored(), br=0.5, seed=3)
    part = partition_groups(ds)
    assert all(abs(part.ratios[y][a] - 0.5) < 1e-12 for y in range(4) for a in (0, 1))


def test_grayscale_is_idempotent():
    imgs = _colored().images
    once = to_grayscale(imgs)
    twice = to_grayscale(once)
    assert np.allclose(once, twice, atol=1e-12)


def test_grayscale_rejects_single_channel():
    base = generate_glyph_dataset(spec(), 0)
    with pytest.raises(DatasetError):
        apply_grayscale_bias(base, br=0.9, seed=0)


# -------------------------------------------------------------- balanced test

def test_balanced_test_exact_cells():
    test = build_balanced_test(spec(count=100), PALETTE4, seed=11)
    part = partition_groups(test)
    assert all(len(part.indices[(y, a)]) == 25 for y in range(5) for a in range(4))
    assert measured_bias_ratio(test) == {y: 0.25 for y in range(5)}


def test_balanced_test_rejects_indivisible_count():
    with pytest.raises(DatasetError, match="divisible"):
        build_balanced_test(spec(count=101), PALETTE4, seed=11)


def test_balanced_test_grayscale_duplicates():
    s = BiasSpec(4, 2, 0.9, mode="grayscale", resolution=(16, 16), per_class_count=30)
    test = build_balanced_test(s, default_palette(6), seed=11)
    assert len(test) == 2 * 4 * 30
    part = partition_groups(test)
    assert all(abs(part.ratios[y][a] - 0.5) < 1e-12 for y in range(4) for a in (0, 1))


# ------------------------------------------------------------------ partitions

def test_partition_hand_counts():
    images = np.zeros((20, 1, 8, 8))
    targets = np.repeat([0, 1], 10)
    protected = np.array([0] * 9 + [1] + [0] * 5 + [1] * 5)
    ds = LabeledDataset(images, targets, protected, 2, 2)
    part = partition_groups(ds)
    assert part.ratios[0] == {0: 0.9, 1: 0.1}
    assert part.ratios[1] == {0: 0.5, 1: 0.5}


def test_partition_covers_disjointly_and_sums_to_one():
    ds = apply_color_bias(generate_glyph_dataset(spec(), 0), spec(), PALETTE4, 1)
    part = partition_groups(ds)
    seen = np.concatenate([part.indices[key] for key in sorted(part.indices)])
    assert np.array_equal(np.sort(seen), np.arange(len(ds)))
    for y in part.classes:
        assert abs(sum(part.ratios[y].values()) - 1.0) < 1e-12


def test_partition_single_group():
    ds = generate_glyph_dataset(spec(), 0)
    part = partition_groups(ds)
    assert all(part.ratios[y] == {0: 1.0} for y in range(5))


# ------------------------------------------------------------------ corruption

def test_corrupt_zero_fraction_is_identity():
    ds = apply_color_bias(generate_glyph_dataset(spec(), 0), spec(), PALETTE4, 1)
    out = corrupt_group_labels(ds, 0.0, seed=5)
    assert np.array_equal(out.protected, ds.protected)
    assert np.array_equal(out.targets, ds.targets)


def test_corrupt_full_fraction_roughly_uniform():
    s = spec(classes=2, groups=4, count=5000, res=(8, 8))
    ds = apply_color_bias(generate_glyph_dataset(s, 0), s, PALETTE4, 1)
    out = corrupt_group_labels(ds, 1.0, seed=5)
    counts = np.bincount(out.protected, minlength=4)
    expected = len(ds) / 4
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    assert chi2 < 16.27  # chi-square df=3 at p=0.001


def test_corrupt_tenth_touches_bounded_count():
    s = spec(classes=2, groups=4, count=500, res=(8, 8))
    ds = apply_color_bias(generate_glyph_dataset(s, 0), s, PALETTE4, 1)
    out = corrupt_group_labels(ds, 0.1, seed=5)
    differing = int((out.protected != ds.protected).sum())
    # 100 resampled; a ~1/4 of them may coincide with the old label
    assert 50 <= differing <= 100
    again = corrupt_group_labels(ds, 0.1, seed=5)
    assert np.array_equal(out.protected, again.protected)


# ------------------------------------------------------------------ containers

def test_fdds_round_trip_and_byte_determinism(tmp_path):
    ds = apply_color_bias(generate_glyph_dataset(spec(count=20), 0), spec(count=20),
                          PALETTE4, 1)
    p1, p2 = tmp_path / "a.fdds", tmp_path / "b.fdds"
    ds.save(p1)
    ds.save(p2)
    assert p1.read_bytes() == p2.read_bytes()
    loaded = LabeledDataset.load(p1)
    assert np.array_equal(loaded.targets, ds.targets)
    assert np.array_equal(loaded.protected, ds.protected)
    assert np.abs(loaded.images - ds.images).max() < 1e-6  # f32 storage
    assert (loaded.num_classes, loaded.num_groups) == (5, 4)


def test_fdds_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.fdds"
    path.write_bytes(b"NOPE" + b"\x00" * 32)
    with pytest.raises(container.ContainerError, match="magic"):
        LabeledDataset.load(path)


def test_idx_reader_and_wrapper(tmp_path):
    import struct

    images = np.arange(2 * 4 * 4, dtype=np.uint8).reshape(2, 4, 4)
    labels = np.array([1, 0], dtype=np.uint8)
    ipath, lpath = tmp_path / "img.idx", tmp_path / "lab.idx"
    ipath.write_bytes(struct.pack(">I", 0x00000803) + struct.pack(">3I", 2, 4, 4)
                      + images.tobytes())
    lpath.write_bytes(struct.pack(">I", 0x00000801) + struct.pack(">I", 2)
                      + labels.tobytes())
    assert np.array_equal(container.read_idx(ipath), images)
    assert np.array_equal(container.read_idx(lpath), labels)
    ds = idx_to_dataset(ipath, lpath)
    assert ds.images.shape == (2, 1, 4, 4)
    assert ds.images.max() <= 1.0
    assert np.array_equal(ds.targets, [1, 0])
