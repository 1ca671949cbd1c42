import gzip
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from atdl.data import (Dataset, SplitPlan, load_cifar10, load_container, load_csv, load_idx, preprocess, resize,
                       save_container, select_classes, split, split_indices, subsample, to_grayscale, write_idx)
from atdl.errors import ArgumentError, DataFormatError, ShapeError


def small_idx(tmp_path, n=5, rows=4, cols=3, gz=False):
    g = np.random.default_rng(0)
    pix = g.integers(0, 256, (n, rows, cols), dtype=np.uint8)
    lab = g.integers(0, 10, n)
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    write_idx(ip, lp, pix, lab)
    if gz:
        for p in (ip, lp):
            p.with_suffix(".gz").write_bytes(gzip.compress(p.read_bytes()))
        ip, lp = ip.with_suffix(".gz"), lp.with_suffix(".gz")
    return ip, lp, pix, lab


# -- IDX ----------------------------------------------------------------------------------------------


@pytest.mark.parametrize("gz", [False, True])
def test_idx_round_trip_and_scaling(tmp_path, gz):
    ip, lp, pix, lab = small_idx(tmp_path, gz=gz)
    d = load_idx(ip, lp)
    assert d.x.shape == (5, 12) and (d.height, d.width) == (4, 3)
    np.testing.assert_array_equal(d.x, pix.reshape(5, -1).astype(np.float32) / np.float32(255))
    assert d.labels.tolist() == lab.tolist()
    assert d.x.min() >= 0 and d.x.max() <= 1


def test_idx_header_arithmetic_for_mnist_train(tmp_path):
    # the published training-file header: magic 2051, 60,000 items of 28x28
    header = struct.pack(">IIII", 0x803, 60000, 28, 28)
    magic, count, rows, cols = struct.unpack(">IIII", header)
    assert magic == 0x00000803 and count * rows * cols == 47_040_000 and rows * cols == 784


def test_idx_truncated_and_bad_magic(tmp_path):
    ip, lp, _, _ = small_idx(tmp_path)
    raw = ip.read_bytes()
    ip.write_bytes(raw[:-3])
    with pytest.raises(DataFormatError, match="expected"):
        load_idx(ip, lp)
    ip.write_bytes(b"\x00\x00\x08\x01" + raw[4:])
    with pytest.raises(DataFormatError, match="magic"):
        load_idx(ip, lp)


def test_idx_count_mismatch(tmp_path):
    ip, lp, pix, lab = small_idx(tmp_path)
    write_idx(tmp_path / "i2", tmp_path / "l2", pix, lab[:4])
    with pytest.raises(DataFormatError, match="expected 5 label.*found 4"):
        load_idx(ip, tmp_path / "l2")


# -- CIFAR-10 -------------------------------------------------------------------------------------------


def test_cifar_records(tmp_path):
    g = np.random.default_rng(1)
    recs = np.concatenate([g.integers(0, 10, (7, 1)), g.integers(0, 256, (7, 3072))], axis=1).astype(np.uint8)
    p = tmp_path / "data_batch_1.bin"
    p.write_bytes(recs.tobytes())
    d = load_cifar10([p])
    assert d.x.shape == (7, 3072) and d.channels == 3
    assert d.labels.tolist() == recs[:, 0].tolist()
    np.testing.assert_array_equal(d.x[:, :1024] * 255, recs[:, 1:1025].astype(np.float32))
    assert 10_000 * 3073 == 30_730_000  # size of one published batch file
    p.write_bytes(recs.tobytes()[:-1])
    with pytest.raises(DataFormatError, match="multiple"):
        load_cifar10(p)


# -- container -------------------------------------------------------------------------------------------


def test_container_round_trip(tmp_path):
    g = np.random.default_rng(2)
    d = Dataset(g.uniform(size=(6, 12)).astype(np.float32), g.integers(0, 3, 6), ["a", "b", "c"], 3, 4, 1)
    save_container(d, tmp_path / "d.atdlds")
    back = load_container(tmp_path / "d.atdlds")
    assert np.array_equal(back.x, d.x) and np.array_equal(back.labels, d.labels)
    assert (back.height, back.width, back.channels, back.n_labels) == (3, 4, 1, 3)


def test_container_layout_is_exact(tmp_path):
    d = Dataset(np.array([[0.5, 1.0]], np.float32), [1], ["x", "y"], 1, 2, 1)
    save_container(d, tmp_path / "d")
    raw = (tmp_path / "d").read_bytes()
    body = b"ATDLDS01" + struct.pack("<7I", 1, 1, 2, 1, 2, 1, 2) + struct.pack("<2f", 0.5, 1.0) + struct.pack("<I", 1)
    assert raw == body + struct.pack("<Q", sum(body))


def test_container_rejects_corruption(tmp_path):
    d = Dataset(np.zeros((2, 4), np.float32), [0, 1], [], 2, 2, 1)
    p = tmp_path / "d"
    save_container(d, p)
    raw = bytearray(p.read_bytes())
    raw[40] ^= 1  # a pixel byte, past the 36-byte header
    p.write_bytes(bytes(raw))
    with pytest.raises(DataFormatError, match="checksum"):
        load_container(p)
    save_container(d, p)
    raw = p.read_bytes()
    p.write_bytes(raw[:8] + struct.pack("<7I", 1, 3, 4, 2, 2, 1, 2) + raw[36:])
    with pytest.raises(DataFormatError, match="declares"):
        load_container(p)
    p.write_bytes(raw[:8] + struct.pack("<I", 2) + raw[12:])
    with pytest.raises(DataFormatError, match="version"):
        load_container(p)


def test_empty_container(tmp_path):
    d = Dataset(np.zeros((0, 4), np.float32), np.zeros(0, int), ["a"], 2, 2, 1)
    save_container(d, tmp_path / "e")
    assert len(load_container(tmp_path / "e")) == 0


# -- CSV -------------------------------------------------------------------------------------------------


def test_csv_with_header(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("p0,p1,label,p2,p3\n0,255,1,128,0\n255,0,0,0,64\n")
    d = load_csv(p, height=2, width=2)
    assert len(d) == 2 and d.labels.tolist() == [1, 0]
    assert d.x[0].tolist() == pytest.approx([0, 1, 128 / 255, 0])


def test_csv_without_header(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("0.1,0.2,0.3,0.4,1\n0.5,0.6,0.7,0.8,0\n")
    d = load_csv(p, has_header=False)
    assert d.labels.tolist() == [1, 0] and d.x[1].tolist() == pytest.approx([0.5, 0.6, 0.7, 0.8])


# -- preprocessing ---------------------------------------------------------------------------------------


def colour(r, g, b):
    planar = np.array([[r] * 4 + [g] * 4 + [b] * 4], np.float32)
    return Dataset(planar, [0], [], 2, 2, 3)


def test_grayscale_weights():
    assert to_grayscale(colour(1, 1, 1)).x[0, 0] == pytest.approx(1.0)
    assert to_grayscale(colour(1, 0, 0)).x[0, 0] == pytest.approx(0.299)
    with pytest.raises(ShapeError):
        to_grayscale(to_grayscale(colour(1, 0, 0)))


def test_resize_identity_and_constant():
    g = np.random.default_rng(3)
    d = Dataset(g.uniform(size=(3, 20)).astype(np.float32), [0, 1, 0], [], 4, 5, 1)
    assert np.max(np.abs(resize(d, 4, 5).x - d.x)) <= 1e-12
    const = Dataset(np.full((1, 20), 0.3, np.float32), [0], [], 4, 5, 1)
    for h, w in [(1, 1), (7, 3), (53, 44)]:
        np.testing.assert_allclose(resize(const, h, w).x, 0.3, atol=1e-6)
    with pytest.raises(ArgumentError):
        resize(d, 0, 3)


def test_checkerboard_to_single_pixel():
    d = Dataset(np.array([[1, 0, 0, 1]], np.float32), [0], [], 2, 2, 1)
    assert resize(d, 1, 1).x[0, 0] == pytest.approx(0.5)


def bilinear_pixel(img, y, x):
    """Hand-written bilinear sample at fractional (y, x), clamped at the border."""
    h, w = img.shape
    y = min(max(y, 0), h - 1)
    x = min(max(x, 0), w - 1)
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    fy, fx = y - y0, x - x0
    return ((1 - fy) * (1 - fx) * img[y0, x0] + (1 - fy) * fx * img[y0, x1]
            + fy * (1 - fx) * img[y1, x0] + fy * fx * img[y1, x1])


def test_resize_matches_pointwise_bilinear():
    g = np.random.default_rng(4)
    img = g.uniform(size=(5, 6))
    d = Dataset(img.reshape(1, -1).astype(np.float32), [0], [], 5, 6, 1)
    out = resize(d, 3, 8).x.reshape(3, 8)
    src = img.astype(np.float32).astype(np.float64)
    for i in range(3):
        for j in range(8):
            expected = bilinear_pixel(src, (i + 0.5) * 5 / 3 - 0.5, (j + 0.5) * 6 / 8 - 0.5)
            assert out[i, j] == pytest.approx(expected, abs=1e-6)


def test_preprocess_is_deterministic():
    g = np.random.default_rng(5)
    d = Dataset(g.uniform(size=(4, 3 * 32 * 32)).astype(np.float32), [0, 1, 2, 3], [], 32, 32, 3)
    a, b = preprocess(d, True, (53, 44)), preprocess(d, True, (53, 44))
    assert a.x.tobytes() == b.x.tobytes() and a.n_features == 2332


def test_dataset_invariants():
    with pytest.raises(DataFormatError):
        Dataset(np.array([[1.5]], np.float32), [0], [], 1, 1, 1)
    with pytest.raises(DataFormatError):
        Dataset(np.array([[0.5]], np.float32), [3], ["a"], 1, 1, 1)
    with pytest.raises(ShapeError):
        Dataset(np.zeros((2, 4), np.float32), [0], [], 2, 2, 1)


def test_select_and_subsample():
    d = Dataset(np.zeros((10, 1), np.float32), np.arange(10), [], 1, 1, 1)
    s = select_classes(d, [8, 9])
    assert s.labels.tolist() == [0, 1] and s.label_names == ["8", "9"]
    sub = subsample(d, 4, seed=1)
    assert len(sub) == 4 and np.all(np.diff(sub.labels) > 0)
    assert subsample(d, 4, seed=1).labels.tolist() == sub.labels.tolist()


# -- splits ----------------------------------------------------------------------------------------------


def two_class(n0, n1):
    labels = np.r_[np.zeros(n0, int), np.ones(n1, int)]
    return Dataset(np.zeros((n0 + n1, 1), np.float32), labels, ["neg", "pos"], 1, 1, 1)


def test_two_fold_on_98_samples():
    d = two_class(30, 68)
    folds = split(d, SplitPlan("kfold", folds=2, seed=0))
    assert len(folds) == 2
    for train, test in folds:
        assert len(test) == 49 and len(train) == 49
        counts = test.class_counts()
        assert abs(counts[0] - 15) <= 1 and abs(counts[1] - 34) <= 1


@given(st.integers(2, 5), st.integers(0, 1000), st.lists(st.integers(0, 3), min_size=8, max_size=60))
def test_kfold_is_a_partition(folds, seed, labels):
    labels = np.array(labels)
    pairs = split_indices(labels, 4, SplitPlan("kfold", folds=folds, seed=seed))
    tests = np.concatenate([te for _, te in pairs])
    assert sorted(tests.tolist()) == list(range(labels.size))
    for tr, te in pairs:
        assert not set(tr) & set(te) and len(tr) + len(te) == labels.size
    assert all(np.array_equal(a[1], b[1]) for a, b in
               zip(pairs, split_indices(labels, 4, SplitPlan("kfold", folds=folds, seed=seed))))


def test_per_class_subsample():
    d = two_class(30, 68)
    (train, test), = split(d, SplitPlan("per_class_subsample", per_class_counts=[15, 34], seed=3))
    assert train.class_counts().tolist() == [15, 34] and len(test) == 49
    with pytest.raises(ArgumentError, match="label 0: need 31, have 30"):
        split(d, SplitPlan("per_class_subsample", per_class_counts=[31, 10]))


def test_holdout_fraction():
    d = two_class(50, 50)
    (train, test), = split(d, SplitPlan("holdout", test_fraction=0.1, seed=1))
    assert test.class_counts().tolist() == [5, 5] and len(train) == 90


def test_split_plan_validation():
    with pytest.raises(ArgumentError):
        SplitPlan("kfold", folds=1)
    with pytest.raises(ArgumentError):
        SplitPlan("per_class_subsample")
