"""Synthetic labeled caption-image datasets and their on-disk format.

Two regimes:

* ``single`` — every image shows one (shape, color) object; the label set
  is the singleton class id. Captions are short determiner-varied phrases
  ("a red circle" / "the red circle" / "one red circle"), so the text
  encoder sees intra-class phrasing variation.
* ``multi`` — 1..3 objects per image; the label set collects the attribute
  ids (shapes and colors) present. The caption deliberately mentions only
  a subset of the objects, so text under-describes the image and labels
  carry information captions do not.

File layout (little-endian, documented in README as well)::

    magic  b"SCGDATA1"
    u32    format version (1)
    u8     regime (0 single, 1 multi)
    u64    generation seed
    u32 x3 image dims H, W, C
    u32    caption length
    u32    k (classes for single, shapes-and-colors count for multi)
    u32    number of label ids
    u32    vocab count, then per word: u16 byte length + utf-8 bytes
    u32    n_train, u32 n_test
    per example: u8 split, u8 label count, u16 x count label ids,
                 u16 x caption_len tokens, f64 x H*W*C pixels
    u32    crc32 of all preceding bytes
"""

from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

MAGIC = b"SCGDATA1"
FORMAT_VERSION = 1

IMAGE_H, IMAGE_W, IMAGE_C = 16, 16, 3
CAPTION_LEN = 8
PIXEL_NOISE_SIGMA = 0.05
JITTER = 2

SHAPES = ("circle", "square", "triangle", "cross")
# order matters: single_label_classes pairs shape i with color i, and
# yellow sits nearest red/green in RGB, so it goes with the largest shape
COLORS = ("red", "yellow", "blue", "green")
# [-1, 1] RGB per color name
COLOR_VALUES = {
    "red": (1.0, -1.0, -1.0),
    "green": (-1.0, 1.0, -1.0),
    "blue": (-1.0, -1.0, 1.0),
    "yellow": (1.0, 1.0, -1.0),
}

PAD, DET_A, DET_THE, DET_ONE, AND = "<pad>", "a", "the", "one", "and"
VOCAB = (PAD, DET_A, DET_THE, DET_ONE, AND) + COLORS + SHAPES
DETERMINERS = (DET_A, DET_THE, DET_ONE)

TRAIN_FRACTION = 0.8
# object-count distribution for the multi regime: uniform over {1, 2, 3}
MULTI_OBJECT_COUNTS = (1, 2, 3)

SINGLE_HALFWIDTH = 4
MULTI_HALFWIDTH = 3

# fixed slot centers keep multi-regime objects mostly non-overlapping
MULTI_SLOTS = ((4, 4), (4, 11), (11, 7))


class DatasetFormatError(ValueError):
    """File is not a dataset file (bad magic or malformed structure)."""


class DatasetVersionError(DatasetFormatError):
    """Dataset file uses an unsupported format version."""


class DatasetTruncatedError(DatasetFormatError):
    """File ended before the declared contents."""


class DatasetChecksumError(DatasetFormatError):
    """Stored checksum does not match the file bytes."""


class EmptyManifestError(DatasetFormatError):
    """Dataset file declares (or contains) no examples."""


class DatasetValidationError(ValueError):
    """An example violates dataset invariants (e.g. empty label set)."""


@dataclass
class LabeledExample:
    """One (image, caption, label-set) triple."""

    image: np.ndarray  # (H, W, C) float64 in [-1, 1]
    caption: tuple[int, ...]
    labels: tuple[int, ...]  # sorted, deduplicated, non-empty
    split: str  # "train" | "test"

    def flat_image(self) -> np.ndarray:
        return self.image.reshape(1, -1)


@dataclass
class DatasetManifest:
    regime: str  # "single" | "multi"
    seed: int
    image_shape: tuple[int, int, int]
    caption_len: int
    k: int
    n_label_ids: int
    vocab: tuple[str, ...]
    n_train: int
    n_test: int
    version: int = FORMAT_VERSION


@dataclass
class Dataset:
    manifest: DatasetManifest
    examples: list[LabeledExample] = field(default_factory=list)

    def split(self, name: str) -> list[LabeledExample]:
        return [ex for ex in self.examples if ex.split == name]


def _normalize_labels(labels) -> tuple[int, ...]:
    out = tuple(sorted(set(int(v) for v in labels)))
    if not out:
        raise DatasetValidationError("example has an empty label set")
    if any(v < 0 for v in out):
        raise DatasetValidationError(f"negative label id in {out}")
    return out


def _tokens(words: Sequence[str]) -> tuple[int, ...]:
    ids = [VOCAB.index(w) for w in words]
    if len(ids) > CAPTION_LEN:
        ids = ids[:CAPTION_LEN]
    ids += [0] * (CAPTION_LEN - len(ids))
    return tuple(ids)


def _shape_mask(shape: str, cy: int, cx: int, h: int) -> np.ndarray:
    """Boolean footprint of a shape with halfwidth ``h`` centered at (cy, cx)."""
    yy, xx = np.mgrid[0:IMAGE_H, 0:IMAGE_W]
    dy, dx = yy - cy, xx - cx
    if shape == "circle":
        r = h + 0.5
        return dy * dy + dx * dx <= r * r
    if shape == "square":
        return np.maximum(np.abs(dy), np.abs(dx)) <= h
    if shape == "triangle":
        return (np.abs(dy) <= h) & (np.abs(dx) <= (dy + h) // 2)
    if shape == "cross":
        t = 2 if h >= 4 else 1
        return ((np.abs(dy) <= t) & (np.abs(dx) <= h)) | (
            (np.abs(dx) <= t) & (np.abs(dy) <= h)
        )
    raise ValueError(f"unknown shape {shape!r}")


def _render(
    objects: Sequence[tuple[str, str, int, int, int]], rng: np.random.Generator
) -> np.ndarray:
    """Paint (shape, color, cy, cx, halfwidth) objects over a dark
    background, in order."""
    img = np.full((IMAGE_H, IMAGE_W, IMAGE_C), -1.0)
    for shape, color, cy, cx, h in objects:
        mask = _shape_mask(shape, cy, cx, h)
        img[mask] = COLOR_VALUES[color]
    img += rng.normal(0.0, PIXEL_NOISE_SIGMA, size=img.shape)
    return np.clip(img, -1.0, 1.0)


def single_label_classes(k: int) -> list[tuple[str, str]]:
    """(shape, color) combo per class; no two classes share both."""
    if k < 2:
        raise ValueError("need at least 2 classes")
    if k > len(SHAPES) * len(COLORS):
        raise ValueError(f"at most {len(SHAPES) * len(COLORS)} classes supported")
    return [
        (SHAPES[i % len(SHAPES)], COLORS[(i + i // len(SHAPES)) % len(COLORS)])
        for i in range(k)
    ]


def generate_single_label(n_per_class: int, k: int, seed: int) -> Dataset:
    """Class-labeled shapes with jitter, pixel noise, and caption variation."""
    rng = np.random.default_rng(seed)
    classes = single_label_classes(k)
    n_train_per = int(round(n_per_class * TRAIN_FRACTION))
    examples: list[LabeledExample] = []
    for class_id, (shape, color) in enumerate(classes):
        for j in range(n_per_class):
            cy = 8 + int(rng.integers(-JITTER, JITTER + 1))
            cx = 8 + int(rng.integers(-JITTER, JITTER + 1))
            img = _render([(shape, color, cy, cx, SINGLE_HALFWIDTH)], rng)
            det = DETERMINERS[int(rng.integers(len(DETERMINERS)))]
            examples.append(
                LabeledExample(
                    image=img,
                    caption=_tokens([det, color, shape]),
                    labels=_normalize_labels([class_id]),
                    split="train" if j < n_train_per else "test",
                )
            )
    manifest = DatasetManifest(
        regime="single",
        seed=seed,
        image_shape=(IMAGE_H, IMAGE_W, IMAGE_C),
        caption_len=CAPTION_LEN,
        k=k,
        n_label_ids=k,
        vocab=VOCAB,
        n_train=sum(1 for e in examples if e.split == "train"),
        n_test=sum(1 for e in examples if e.split == "test"),
    )
    return Dataset(manifest, examples)


def attribute_id(kind: str, index: int) -> int:
    """Label-id layout for the multi regime: shapes first, then colors."""
    if kind == "shape":
        return index
    if kind == "color":
        return len(SHAPES) + index
    raise ValueError(kind)


def scene_label_set(objects: Sequence[tuple[str, str]]) -> tuple[int, ...]:
    """Attribute ids present in a scene of (shape name, color name) objects."""
    labels: set[int] = set()
    for shape, color in objects:
        labels.add(attribute_id("shape", SHAPES.index(shape)))
        labels.add(attribute_id("color", COLORS.index(color)))
    return _normalize_labels(labels)


def generate_multi_label(n: int, seed: int) -> Dataset:
    """Scenes of 1-3 objects; labels are the attributes present, captions
    mention a random non-empty subset of at most two objects."""
    rng = np.random.default_rng(seed)
    n_train = int(round(n * TRAIN_FRACTION))
    examples: list[LabeledExample] = []
    for j in range(n):
        n_obj = int(rng.choice(MULTI_OBJECT_COUNTS))
        slot_order = rng.permutation(len(MULTI_SLOTS))[:n_obj]
        objects = []
        for slot in slot_order:
            s_idx = int(rng.integers(len(SHAPES)))
            c_idx = int(rng.integers(len(COLORS)))
            base_cy, base_cx = MULTI_SLOTS[slot]
            cy = base_cy + int(rng.integers(-1, 2))
            cx = base_cx + int(rng.integers(-1, 2))
            objects.append((SHAPES[s_idx], COLORS[c_idx], cy, cx, MULTI_HALFWIDTH))
        labels = scene_label_set([(s, c) for s, c, _, _, _ in objects])
        img = _render(objects, rng)
        n_mention = 1 + int(rng.integers(min(2, n_obj)))
        mentioned = rng.choice(n_obj, size=n_mention, replace=False)
        words = [DET_A]
        for m_idx, obj_idx in enumerate(sorted(int(i) for i in mentioned)):
            shape, color, _, _, _ = objects[obj_idx]
            if m_idx > 0:
                words.append(AND)
            words += [color, shape]
        examples.append(
            LabeledExample(
                image=img,
                caption=_tokens(words),
                labels=labels,
                split="train" if j < n_train else "test",
            )
        )
    manifest = DatasetManifest(
        regime="multi",
        seed=seed,
        image_shape=(IMAGE_H, IMAGE_W, IMAGE_C),
        caption_len=CAPTION_LEN,
        k=len(SHAPES),
        n_label_ids=len(SHAPES) + len(COLORS),
        vocab=VOCAB,
        n_train=n_train,
        n_test=n - n_train,
    )
    return Dataset(manifest, examples)


def generate(regime: str, n: int, k: int, seed: int) -> Dataset:
    if regime == "single":
        return generate_single_label(n_per_class=n, k=k, seed=seed)
    if regime == "multi":
        return generate_multi_label(n=n, seed=seed)
    raise ValueError(f"unknown regime {regime!r}")


# ---------------------------------------------------------------------------
# serialization


class _CrcWriter:
    def __init__(self, fh):
        self._fh = fh
        self.crc = 0

    def write(self, data: bytes) -> None:
        self.crc = zlib.crc32(data, self.crc)
        self._fh.write(data)


class _CrcReader:
    def __init__(self, fh):
        self._fh = fh
        self.crc = 0

    def read_exact(self, n: int) -> bytes:
        data = self._fh.read(n)
        if len(data) != n:
            raise DatasetTruncatedError(
                f"file truncated: wanted {n} bytes, got {len(data)}"
            )
        self.crc = zlib.crc32(data, self.crc)
        return data


def write_dataset(dataset: Dataset, path) -> None:
    m = dataset.manifest
    with open(path, "wb") as fh:
        w = _CrcWriter(fh)
        w.write(MAGIC)
        w.write(struct.pack("<I", m.version))
        w.write(struct.pack("<B", 0 if m.regime == "single" else 1))
        w.write(struct.pack("<Q", m.seed))
        w.write(struct.pack("<III", *m.image_shape))
        w.write(struct.pack("<I", m.caption_len))
        w.write(struct.pack("<I", m.k))
        w.write(struct.pack("<I", m.n_label_ids))
        w.write(struct.pack("<I", len(m.vocab)))
        for word in m.vocab:
            enc = word.encode("utf-8")
            w.write(struct.pack("<H", len(enc)))
            w.write(enc)
        w.write(struct.pack("<II", m.n_train, m.n_test))
        for ex in dataset.examples:
            w.write(struct.pack("<B", 0 if ex.split == "train" else 1))
            w.write(struct.pack("<B", len(ex.labels)))
            w.write(struct.pack(f"<{len(ex.labels)}H", *ex.labels))
            w.write(struct.pack(f"<{m.caption_len}H", *ex.caption))
            w.write(ex.image.astype("<f8").tobytes())
        fh.write(struct.pack("<I", w.crc))


def read_manifest(path) -> DatasetManifest:
    with open(path, "rb") as fh:
        r = _CrcReader(fh)
        return _read_manifest(r)


def _read_manifest(r: _CrcReader) -> DatasetManifest:
    magic = r._fh.read(len(MAGIC))
    if magic == b"":
        raise EmptyManifestError("dataset file is empty")
    if len(magic) != len(MAGIC) or magic != MAGIC:
        raise DatasetFormatError(f"not a dataset file (magic {magic!r})")
    r.crc = zlib.crc32(magic, r.crc)
    (version,) = struct.unpack("<I", r.read_exact(4))
    if version != FORMAT_VERSION:
        raise DatasetVersionError(
            f"unsupported dataset version {version}, expected {FORMAT_VERSION}"
        )
    (regime_code,) = struct.unpack("<B", r.read_exact(1))
    (seed,) = struct.unpack("<Q", r.read_exact(8))
    h, w_, c = struct.unpack("<III", r.read_exact(12))
    (caption_len,) = struct.unpack("<I", r.read_exact(4))
    (k,) = struct.unpack("<I", r.read_exact(4))
    (n_label_ids,) = struct.unpack("<I", r.read_exact(4))
    (vocab_count,) = struct.unpack("<I", r.read_exact(4))
    vocab = []
    for _ in range(vocab_count):
        (wl,) = struct.unpack("<H", r.read_exact(2))
        vocab.append(r.read_exact(wl).decode("utf-8"))
    n_train, n_test = struct.unpack("<II", r.read_exact(8))
    manifest = DatasetManifest(
        regime="single" if regime_code == 0 else "multi",
        seed=seed,
        image_shape=(h, w_, c),
        caption_len=caption_len,
        k=k,
        n_label_ids=n_label_ids,
        vocab=tuple(vocab),
        n_train=n_train,
        n_test=n_test,
    )
    if n_train + n_test == 0:
        raise EmptyManifestError("dataset file declares zero examples")
    return manifest


def iter_dataset(path) -> Iterator[LabeledExample]:
    """Stream examples without holding them all; validates the checksum as
    the last step, so a corrupted tail surfaces at end of iteration."""
    manifest, gen = _open_stream(path)
    return gen


def _open_stream(path):
    fh = open(path, "rb")
    r = _CrcReader(fh)
    try:
        manifest = _read_manifest(r)
    except Exception:
        fh.close()
        raise

    h, w_, c = manifest.image_shape
    pixel_bytes = h * w_ * c * 8
    total = manifest.n_train + manifest.n_test

    def gen():
        try:
            for _ in range(total):
                (split_code,) = struct.unpack("<B", r.read_exact(1))
                (n_labels,) = struct.unpack("<B", r.read_exact(1))
                labels = struct.unpack(f"<{n_labels}H", r.read_exact(2 * n_labels))
                caption = struct.unpack(
                    f"<{manifest.caption_len}H", r.read_exact(2 * manifest.caption_len)
                )
                pixels = np.frombuffer(r.read_exact(pixel_bytes), dtype="<f8")
                yield LabeledExample(
                    image=pixels.reshape(h, w_, c).astype(np.float64),
                    caption=tuple(int(t) for t in caption),
                    labels=_normalize_labels(labels),
                    split="train" if split_code == 0 else "test",
                )
            computed = r.crc
            stored_bytes = fh.read(4)
            if len(stored_bytes) != 4:
                raise DatasetTruncatedError("file truncated: checksum missing")
            (stored,) = struct.unpack("<I", stored_bytes)
            if stored != computed:
                raise DatasetChecksumError(
                    f"checksum mismatch: stored {stored:#010x}, computed {computed:#010x}"
                )
        finally:
            fh.close()

    return manifest, gen()


def read_dataset(path) -> Dataset:
    """Load a dataset, verifying structure and checksum before returning."""
    manifest, gen = _open_stream(path)
    examples = list(gen)
    return Dataset(manifest, examples)
