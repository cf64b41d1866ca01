import numpy as np
import pytest

from spdconv.data import (
    RECORD,
    AugmentPolicy,
    CorruptFileError,
    DataError,
    LabeledDataset,
    SynthSpec,
    augment,
    balanced_subset,
    block_mean,
    downsample,
    load_cifar10,
    read_cifar_batch,
    standardize,
    synth_dataset,
    write_cifar_batch,
)
from spdconv.spd import depth_to_space, space_to_depth
from spdconv.tensor import Tensor


def fake_batch(n, seed):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, (n, 3, 32, 32), dtype=np.uint8), np.arange(n) % 10


def test_cifar_batch_round_trip(tmp_path):
    x, y = fake_batch(20, 0)
    write_cifar_batch(tmp_path / "b.bin", x, y)
    assert (tmp_path / "b.bin").stat().st_size == 20 * RECORD
    rx, ry = read_cifar_batch(tmp_path / "b.bin")
    assert np.array_equal(rx, x) and np.array_equal(ry, y)


def test_full_size_batch_is_accepted(tmp_path):
    x, y = fake_batch(10000, 1)
    write_cifar_batch(tmp_path / "b.bin", x, y)
    assert (tmp_path / "b.bin").stat().st_size == 30_730_000
    assert read_cifar_batch(tmp_path / "b.bin")[0].shape == (10000, 3, 32, 32)


def test_truncated_and_missing_files(tmp_path):
    (tmp_path / "b.bin").write_bytes(b"\0" * (30_730_000 - 1))
    with pytest.raises(CorruptFileError, match="30729999"):
        read_cifar_batch(tmp_path / "b.bin")
    with pytest.raises(DataError, match="nope.bin"):
        read_cifar_batch(tmp_path / "nope.bin")


def make_fake_cifar(root, per_batch=50):
    d = root / "cifar-10-batches-bin"
    d.mkdir()
    for i in range(1, 6):
        write_cifar_batch(d / f"data_batch_{i}.bin", *fake_batch(per_batch, i))
    write_cifar_batch(d / "test_batch.bin", *fake_batch(per_batch, 9))
    return d


def test_load_cifar10_census_and_range(tmp_path):
    # a scaled-down stand-in for the 5 x 10000 distribution
    make_fake_cifar(tmp_path)
    train, test = load_cifar10(tmp_path)
    assert len(train) == 250 and len(test) == 50
    assert np.bincount(train.labels).tolist() == [25] * 10
    assert train.images.dtype == np.float32 and train.images.min() >= 0 and train.images.max() <= 1
    assert train.class_names[0] == "airplane"


def test_load_cifar10_names_missing_batch(tmp_path):
    d = make_fake_cifar(tmp_path)
    (d / "data_batch_3.bin").unlink()
    with pytest.raises(DataError, match="data_batch_3"):
        load_cifar10(d)


def test_bad_label_byte(tmp_path):
    d = make_fake_cifar(tmp_path)
    x, _ = fake_batch(5, 0)
    write_cifar_batch(d / "test_batch.bin", x, [0, 1, 2, 3, 200])
    with pytest.raises(CorruptFileError, match="label"):
        load_cifar10(d)


def test_balanced_subset():
    ds = synth_dataset(SynthSpec(100, 4, 4, 4), 0)
    sub = balanced_subset(ds, 10, seed=3)
    assert np.bincount(sub.labels).tolist() == [10] * 4
    assert np.array_equal(sub.labels, balanced_subset(ds, 10, seed=3).labels)
    with pytest.raises(DataError):
        balanced_subset(ds, 26, seed=0)


def test_dataset_validation():
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 3, 4)), [0, 1])
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((2, 1, 2, 2)), [0])
    with pytest.raises(ValueError):
        LabeledDataset(np.full((1, 1, 2, 2), np.nan), [0])
    with pytest.raises(ValueError):
        LabeledDataset(np.zeros((1, 1, 2, 2)), [3], classes=2)
    ds = LabeledDataset(np.zeros((2, 1, 2, 2)), [0, 1])
    with pytest.raises(ValueError):
        ds.images[0, 0, 0, 0] = 1


# -- downsampling ------------------------------------------------------------------

def naive_block_mean(x, f):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // f, w // f))
    for i in range(h // f):
        for j in range(w // f):
            out[:, :, i, j] = x[:, :, i * f:(i + 1) * f, j * f:(j + 1) * f].mean(axis=(2, 3))
    return out


def test_block_mean_properties():
    x = np.random.default_rng(0).random((2, 3, 12, 12)).astype(np.float32)
    assert block_mean(x, 1) is x
    np.testing.assert_allclose(block_mean(x, 3), naive_block_mean(x, 3), rtol=1e-6)
    np.testing.assert_allclose(block_mean(block_mean(x, 2), 3), block_mean(x, 6), rtol=1e-6)
    assert np.all(block_mean(np.full((1, 1, 8, 8), 0.3, np.float32), 4) == np.float32(0.3))
    with pytest.raises(ValueError):
        block_mean(x, 5)


def test_downsample_keeps_labels():
    ds = synth_dataset(SynthSpec(8, 2, 8, 8), 0)
    small = downsample(ds, 2)
    assert small.images.shape == (8, 3, 4, 4) and np.array_equal(small.labels, ds.labels)
    assert downsample(ds, 1) is ds


def test_standardize():
    ds = synth_dataset(SynthSpec(50, 2, 8, 8), 0)
    out, mean, std = standardize(ds)
    np.testing.assert_allclose(out.images.mean(axis=(0, 2, 3)), 0, atol=1e-5)
    np.testing.assert_allclose(out.images.std(axis=(0, 2, 3)), 1, atol=1e-4)
    again, _, _ = standardize(ds, mean, std)
    assert np.array_equal(again.images, out.images)


# -- augmentation ------------------------------------------------------------------

def test_augment_identity_policy():
    x = np.random.default_rng(0).random((4, 3, 8, 8)).astype(np.float32)
    out = augment(x, AugmentPolicy(0, 0), np.random.default_rng(1))
    assert np.array_equal(out, x) and out is not x


def test_always_flip_twice_is_identity():
    x = np.random.default_rng(0).random((4, 3, 8, 8)).astype(np.float32)
    pol = AugmentPolicy(1, 0)
    once = augment(x, pol, np.random.default_rng(1))
    assert np.array_equal(once, x[..., ::-1])
    assert np.array_equal(augment(once, pol, np.random.default_rng(2)), x)


def test_augment_deterministic_and_shape_preserving():
    x = np.random.default_rng(0).random((6, 3, 8, 8)).astype(np.float32)
    a = augment(x, AugmentPolicy(), np.random.default_rng(5))
    b = augment(x, AugmentPolicy(), np.random.default_rng(5))
    assert a.shape == x.shape and np.array_equal(a, b)
    # crops only shift content: every output pixel is zero padding or an input value
    assert set(np.unique(a)) <= set(np.unique(x)) | {0.0}


def test_crop_offset_is_a_shift():
    x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
    for s in range(10):
        out = augment(x, AugmentPolicy(0, 1), np.random.default_rng(s))[0, 0]
        hits = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)
                if np.array_equal(out, np.pad(x[0, 0], 1)[1 + dy:5 + dy, 1 + dx:5 + dx])]
        assert len(hits) == 1


def test_augment_policy_validation():
    with pytest.raises(ValueError):
        AugmentPolicy(1.5, 0)
    with pytest.raises(ValueError):
        AugmentPolicy(0.5, -1)


# -- synthetic sets ------------------------------------------------------------------

def test_separable_red_mean_threshold():
    ds = synth_dataset(SynthSpec(400, 2, 16, 16, "separable"), 7)
    red = ds.images[:, 0].mean(axis=(1, 2))
    assert np.mean((red > 0.175) == (ds.labels == 1)) == 1.0


def test_synth_is_seeded_and_balanced():
    a = synth_dataset(SynthSpec(40, 4, 8, 8, "parity-grid"), 1)
    b = synth_dataset(SynthSpec(40, 4, 8, 8, "parity-grid"), 1)
    c = synth_dataset(SynthSpec(40, 4, 8, 8, "parity-grid"), 2)
    assert np.array_equal(a.images, b.images) and np.array_equal(a.labels, b.labels)
    assert not np.array_equal(a.images, c.images)
    assert np.bincount(a.labels).tolist() == [10] * 4


def decode_gaps(img):
    # every row holding two saturated pixels is a dot pair; the label is gap - 2
    gaps = set()
    for row in (img[0] == 1.0):
        cols = np.flatnonzero(row)
        if len(cols) == 2:
            gaps.add(int(cols[1] - cols[0]))
    return gaps


def test_parity_label_survives_spd_round_trip():
    ds = synth_dataset(SynthSpec(200, 4, 16, 16, "parity-grid"), 0)
    back = depth_to_space(space_to_depth(Tensor(ds.images), 2), 2).data
    assert np.array_equal(back, ds.images)
    decodable = 0
    for img, y in zip(back, ds.labels):
        g = decode_gaps(img)
        if g:
            assert g == {int(y) + 2}
            decodable += 1
    assert decodable > 150


def test_parity_grid_needs_width():
    with pytest.raises(ValueError):
        synth_dataset(SynthSpec(10, 8, 8, 8, "parity-grid"), 0)


def test_cifar_comparison_subset(tmp_path):
    from spdconv.experiments import cifar_sets
    make_fake_cifar(tmp_path, per_batch=1000)
    tr, te = cifar_sets(tmp_path)
    assert tr.images.shape == (5000, 3, 16, 16) and te.images.shape == (1000, 3, 16, 16)
    assert np.bincount(tr.labels).tolist() == [500] * 10 and np.bincount(te.labels).tolist() == [100] * 10
