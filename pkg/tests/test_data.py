import numpy as np
import pytest

from supcongan import data


def test_single_label_counts_and_singletons():
    ds = data.generate_single_label(n_per_class=50, k=4, seed=7)
    assert len(ds.examples) == 200
    assert all(len(ex.labels) == 1 for ex in ds.examples)
    assert ds.manifest.n_train == len(ds.split("train")) == 160
    assert ds.manifest.n_test == len(ds.split("test")) == 40


def test_generation_deterministic():
    a = data.generate_single_label(30, 4, seed=123)
    b = data.generate_single_label(30, 4, seed=123)
    for ea, eb in zip(a.examples, b.examples):
        assert np.array_equal(ea.image, eb.image)
        assert ea.caption == eb.caption and ea.labels == eb.labels and ea.split == eb.split
    m = data.generate_multi_label(40, seed=9)
    m2 = data.generate_multi_label(40, seed=9)
    for ea, eb in zip(m.examples, m2.examples):
        assert np.array_equal(ea.image, eb.image) and ea.caption == eb.caption


def test_pixel_range_and_invariants():
    ds = data.generate_multi_label(60, seed=3)
    for ex in ds.examples:
        assert ex.image.shape == (16, 16, 3)
        assert ex.image.min() >= -1.0 and ex.image.max() <= 1.0
        assert ex.labels == tuple(sorted(set(ex.labels)))
        assert len(ex.labels) >= 1
        assert len(ex.caption) == data.CAPTION_LEN


def test_class_means_pairwise_distinguishable():
    # split-half mean images of one class stay close; different-class means
    # sit far apart. Needs enough samples for the jitter average to settle.
    ds = data.generate_single_label(n_per_class=250, k=4, seed=7)
    by_class = {}
    for ex in ds.examples:
        by_class.setdefault(ex.labels[0], []).append(ex.image.ravel())
    means = {c: np.mean(imgs, axis=0) for c, imgs in by_class.items()}
    within = []
    for imgs in by_class.values():
        half = len(imgs) // 2
        m1, m2 = np.mean(imgs[:half], axis=0), np.mean(imgs[half:], axis=0)
        within.append(np.linalg.norm(m1 - m2))
    between = [
        np.linalg.norm(means[a] - means[b])
        for a in means
        for b in means
        if a < b
    ]
    assert min(between) > 5.0 * max(within), (min(between), max(within))


def test_multi_label_scene_labels():
    # a red circle and a blue square -> {circle, square, red, blue}
    expected = sorted(
        [
            data.attribute_id("shape", data.SHAPES.index("circle")),
            data.attribute_id("shape", data.SHAPES.index("square")),
            data.attribute_id("color", data.COLORS.index("red")),
            data.attribute_id("color", data.COLORS.index("blue")),
        ]
    )
    got = data.scene_label_set([("circle", "red"), ("square", "blue")])
    assert list(got) == expected


def test_multi_caption_words_subset_of_labels():
    ds = data.generate_multi_label(120, seed=11)
    for ex in ds.examples:
        words = [data.VOCAB[t] for t in ex.caption if t != 0]
        for w in words:
            if w in data.SHAPES:
                assert data.attribute_id("shape", data.SHAPES.index(w)) in ex.labels
            elif w in data.COLORS:
                assert data.attribute_id("color", data.COLORS.index(w)) in ex.labels


def test_multi_label_frequencies_match_object_count_distribution():
    n = 900
    ds = data.generate_multi_label(n, seed=5)
    # shape s present in a c-object scene w.p. 1 - (3/4)^c; counts uniform 1..3
    p = np.mean([1.0 - (0.75**c) for c in data.MULTI_OBJECT_COUNTS])
    sigma = np.sqrt(n * p * (1.0 - p))
    for attr in range(len(data.SHAPES) + len(data.COLORS)):
        observed = sum(1 for ex in ds.examples if attr in ex.labels)
        assert abs(observed - n * p) < 3.0 * sigma, (attr, observed, n * p)


# ---------------------------------------------------------------------------
# file format


def test_round_trip_bit_exact(tmp_path):
    ds = data.generate_multi_label(25, seed=2)
    path = tmp_path / "ds.bin"
    data.write_dataset(ds, path)
    back = data.read_dataset(path)
    assert back.manifest == ds.manifest
    assert len(back.examples) == len(ds.examples)
    for a, b in zip(ds.examples, back.examples):
        assert np.array_equal(a.image, b.image)
        assert a.caption == b.caption and a.labels == b.labels and a.split == b.split


def test_streaming_iteration(tmp_path):
    ds = data.generate_single_label(10, 2, seed=4)
    path = tmp_path / "ds.bin"
    data.write_dataset(ds, path)
    count = sum(1 for _ in data.iter_dataset(path))
    assert count == len(ds.examples)


def test_corrupted_byte_raises_checksum_error(tmp_path):
    ds = data.generate_single_label(5, 2, seed=4)
    path = tmp_path / "ds.bin"
    data.write_dataset(ds, path)
    raw = bytearray(path.read_bytes())
    raw[-40] ^= 0xFF  # flip a byte inside the last pixel payload
    path.write_bytes(bytes(raw))
    with pytest.raises(data.DatasetChecksumError):
        data.read_dataset(path)


def test_truncated_file(tmp_path):
    ds = data.generate_single_label(5, 2, seed=4)
    path = tmp_path / "ds.bin"
    data.write_dataset(ds, path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(data.DatasetTruncatedError):
        data.read_dataset(path)


def test_empty_file(tmp_path):
    path = tmp_path / "empty.bin"
    path.write_bytes(b"")
    with pytest.raises(data.EmptyManifestError):
        data.read_dataset(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOTDATA!" + b"\x00" * 64)
    with pytest.raises(data.DatasetFormatError):
        data.read_dataset(path)


def test_version_mismatch(tmp_path):
    ds = data.generate_single_label(5, 2, seed=4)
    path = tmp_path / "ds.bin"
    data.write_dataset(ds, path)
    raw = bytearray(path.read_bytes())
    raw[8] = 99  # version field follows the 8-byte magic
    path.write_bytes(bytes(raw))
    with pytest.raises(data.DatasetVersionError):
        data.read_dataset(path)
