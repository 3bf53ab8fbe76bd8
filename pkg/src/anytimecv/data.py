"""Dataset ingestion, shape meta-inference and the fixed preprocessing pipeline.

Images are ``(H, W, C)`` float64 arrays with intensities in ``[0, 1]``.
Preprocessing resizes to the inferred target shape, adjusts channels and
normalises with mean 0.5 and standard deviation 0.25.
"""
from __future__ import annotations

import csv
import enum
import hashlib
import json
import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import kernels
from .errors import ConfigError, FormatError, IntegrityError, LoadError

NORM_MEAN = 0.5
NORM_STD = 0.25
MAX_SIDE = 64

_MODE_CHANNELS = {"L": 1, "LA": 2, "RGB": 3, "RGBA": 4}
_CHANNEL_MODES = {v: k for k, v in _MODE_CHANNELS.items()}


class ChannelPolicy(str, enum.Enum):
    REPLICATE_TO_THREE = "replicate_to_three"
    PASS_THROUGH = "pass_through"
    PREFIX_PROJECTION = "prefix_projection"


@dataclass(frozen=True)
class LabeledDataset:
    images: tuple
    labels: np.ndarray
    name: str = "dataset"
    ids: tuple = ()

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.uint8)
        if labels.ndim != 2 or labels.shape[1] < 1:
            raise IntegrityError("labels must be a (samples, classes) matrix with >= 1 class")
        if labels.shape[0] != len(self.images):
            raise IntegrityError(
                f"{labels.shape[0]} label rows for {len(self.images)} images"
            )
        labels = labels.copy()
        labels.setflags(write=False)
        images = []
        for img in self.images:
            img = np.asarray(img, dtype=np.float64)
            if img.ndim == 2:
                img = img[:, :, None]
            if img.flags.writeable:
                img = img.copy()
                img.setflags(write=False)
            images.append(img)
        ids = tuple(self.ids) if self.ids else tuple(f"{i:06d}" for i in range(len(images)))
        if len(ids) != len(images):
            raise IntegrityError("one id per image required")
        object.__setattr__(self, "images", tuple(images))
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return len(self.images)

    @property
    def num_classes(self):
        return self.labels.shape[1]

    def subset(self, indices, name=None):
        indices = [int(i) for i in indices]
        return LabeledDataset(
            images=tuple(self.images[i] for i in indices),
            labels=self.labels[indices],
            name=name or self.name,
            ids=tuple(self.ids[i] for i in indices),
        )


@dataclass(frozen=True)
class DatasetMeta:
    num_classes: int
    num_samples: int
    median_shape: tuple
    channel_count: int
    variable_shape: bool


@dataclass(frozen=True)
class InputSpec:
    target_shape: tuple
    channel_policy: ChannelPolicy
    channels: int
    mean: float = NORM_MEAN
    std: float = NORM_STD

    @property
    def model_channels(self):
        """Channel count of the tensor the network receives."""
        if self.channel_policy is ChannelPolicy.REPLICATE_TO_THREE:
            return 3
        return self.channels


# ---------------------------------------------------------------------------
# on-disk layout


def _decode_png(path):
    try:
        with PILImage.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "I;16":
                arr = np.asarray(im, dtype=np.float64) / 65535.0
                return arr[:, :, None]
            if mode not in _MODE_CHANNELS:
                raise FormatError(f"{path.name}: unsupported image mode {mode!r}")
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise LoadError(f"cannot decode {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr.astype(np.float64) / 255.0


def _read_manifest(root):
    manifest = root / "manifest.json"
    if not manifest.is_file():
        raise LoadError(f"{root}: missing manifest.json")
    try:
        meta = json.loads(manifest.read_text())
    except json.JSONDecodeError as exc:
        raise LoadError(f"{manifest}: {exc}") from exc
    if "num_classes" not in meta:
        raise LoadError(f"{manifest}: missing num_classes")
    return meta


def _image_files(root):
    img_dir = root / "images"
    if not img_dir.is_dir():
        raise LoadError(f"{root}: missing images/ directory")
    return sorted(p for p in img_dir.iterdir() if p.suffix.lower() == ".png")


def load_labels(path):
    """Read ``labels.csv`` as ``(file names, label matrix)`` in file-name order."""
    root = Path(path)
    meta = _read_manifest(root)
    k = int(meta["num_classes"])
    label_file = root / "labels.csv"
    if not label_file.is_file():
        raise LoadError(f"{root}: missing labels.csv")
    rows = {}
    with label_file.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["file"] + [f"label_{i}" for i in range(k)]
        if header != expected:
            raise IntegrityError(f"{label_file}: header {header} != {expected}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != k + 1 or any(v not in ("0", "1") for v in row[1:]):
                raise IntegrityError(f"{label_file}:{line_no}: malformed label row")
            if row[0] in rows:
                raise IntegrityError(f"{label_file}:{line_no}: duplicate file {row[0]}")
            rows[row[0]] = [int(v) for v in row[1:]]
    names = sorted(rows)
    return names, np.array([rows[n] for n in names], dtype=np.uint8).reshape(len(names), k)


def load_images(path):
    """Decode every image of a dataset directory without touching its labels."""
    root = Path(path)
    meta = _read_manifest(root)
    files = _image_files(root)
    images = []
    for f in files:
        img = _decode_png(f)
        if img.shape[0] == 0 or img.shape[1] == 0:
            raise FormatError(f"{f.name}: zero-sized image")
        images.append(img)
    return meta, [f.name for f in files], images


def load_dataset(path):
    meta, names, images = load_images(path)
    if not images:
        raise IntegrityError(f"{path}: no images")
    label_names, labels = load_labels(path)
    if label_names != names:
        missing = sorted(set(names) ^ set(label_names))[:5]
        raise IntegrityError(
            f"{path}: {len(label_names)} label rows vs {len(names)} images (e.g. {missing})"
        )
    return LabeledDataset(
        images=tuple(images), labels=labels, name=str(meta.get("name", Path(path).name)),
        ids=tuple(names),
    )


def _quantize(img):
    return np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5).astype(np.uint8)


def dataset_checksum(images, labels, ids):
    """SHA-256 over names, shapes, 8-bit pixels and labels, in sample order.

    Float images are quantised to 8 bits first, so a dataset decoded from PNG
    hashes to the same digest as the uint8 arrays it was written from.
    """
    h = hashlib.sha256()
    for name, img in zip(ids, images):
        arr = img if np.asarray(img).dtype == np.uint8 else _quantize(img)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        h.update(name.encode())
        h.update(np.asarray(arr.shape, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(arr).tobytes())
    h.update(np.ascontiguousarray(labels, dtype=np.uint8).tobytes())
    return h.hexdigest()


def write_dataset(path, images, labels, name="dataset", ids=None):
    """Write uint8 ``(H, W, C)`` images and a label matrix in the on-disk layout.

    Returns the checksum, which is also written to ``checksum.txt``.
    """
    root = Path(path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    labels = np.asarray(labels, dtype=np.uint8)
    k = labels.shape[1]
    if ids is None:
        ids = [f"img_{i:06d}.png" for i in range(len(images))]
    ids = list(ids)
    for fname, img in zip(ids, images):
        arr = np.asarray(img, dtype=np.uint8)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        c = arr.shape[2]
        if c not in _CHANNEL_MODES:
            raise FormatError(f"cannot write {c}-channel image")
        data = arr[:, :, 0] if c == 1 else arr
        PILImage.fromarray(data, mode=_CHANNEL_MODES[c]).save(root / "images" / fname)
    with (root / "labels.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file"] + [f"label_{i}" for i in range(k)])
        for fname, row in zip(ids, labels):
            w.writerow([fname] + [int(v) for v in row])
    (root / "manifest.json").write_text(json.dumps({"name": name, "num_classes": k}, indent=2))
    order = sorted(range(len(ids)), key=lambda i: ids[i])
    checksum = dataset_checksum([images[i] for i in order], labels[order], [ids[i] for i in order])
    (root / "checksum.txt").write_text(checksum + "\n")
    return checksum


# ---------------------------------------------------------------------------
# meta-inference and preprocessing


def _lower_median(values):
    s = sorted(values)
    return s[(len(s) - 1) // 2]


def infer_meta(ds):
    if len(ds) == 0:
        raise IntegrityError("cannot infer meta of an empty dataset")
    heights = [img.shape[0] for img in ds.images]
    widths = [img.shape[1] for img in ds.images]
    channels = {img.shape[2] for img in ds.images}
    if len(channels) > 1:
        raise IntegrityError(f"mixed channel counts {sorted(channels)}")
    (c,) = channels
    if c not in (1, 2, 3, 4):
        raise FormatError(f"unsupported channel count {c}")
    shapes = {img.shape[:2] for img in ds.images}
    return DatasetMeta(
        num_classes=ds.num_classes,
        num_samples=len(ds),
        median_shape=(_lower_median(heights), _lower_median(widths)),
        channel_count=c,
        variable_shape=len(shapes) > 1,
    )


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def target_input_shape(meta):
    rows, cols = meta.median_shape
    if rows <= MAX_SIDE and cols <= MAX_SIDE:
        target = (rows, cols)
    else:
        s = min(MAX_SIDE / rows, MAX_SIDE / cols)
        target = (
            min(MAX_SIDE, max(1, _round_half_up(rows * s))),
            min(MAX_SIDE, max(1, _round_half_up(cols * s))),
        )
    c = meta.channel_count
    if c == 1:
        policy = ChannelPolicy.REPLICATE_TO_THREE
    elif c == 3:
        policy = ChannelPolicy.PASS_THROUGH
    else:
        policy = ChannelPolicy.PREFIX_PROJECTION
    return InputSpec(target_shape=target, channel_policy=policy, channels=c)


def resize_to_target(img, spec):
    """Bilinear resize to ``spec.target_shape``; values stay in [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or 0 in img.shape:
        raise FormatError(f"cannot preprocess image of shape {img.shape}")
    return kernels.resize_bilinear(img, *spec.target_shape)


def finalize(img, spec):
    """Channel policy then normalisation, for an image already at target shape."""
    if spec.channel_policy is ChannelPolicy.REPLICATE_TO_THREE and img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    return (img - spec.mean) / spec.std


def preprocess(img, spec):
    return finalize(resize_to_target(img, spec), spec)


class PreprocessCache:
    """Thread-safe LRU store of resized images keyed by (sample id, target shape).

    Writers racing on one key all compute identical bytes, so last-writer-wins
    needs no coordination beyond the lock guarding the dict.
    """

    def __init__(self, capacity_bytes=256 * 2**20):
        self.capacity_bytes = int(capacity_bytes)
        self._store = OrderedDict()
        self._bytes = 0
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self):
        return len(self._store)

    def get(self, key):
        with self._lock:
            val = self._store.get(key)
            if val is not None:
                self._store.move_to_end(key)
                self.hits += 1
            return val

    def put(self, key, value):
        value = np.array(value, dtype=np.float64)
        value.setflags(write=False)
        if value.nbytes > self.capacity_bytes:
            return value
        with self._lock:
            old = self._store.pop(key, None)
            if old is not None:
                self._bytes -= old.nbytes
            self._store[key] = value
            self._bytes += value.nbytes
            while self._bytes > self.capacity_bytes:
                _, evicted = self._store.popitem(last=False)
                self._bytes -= evicted.nbytes
        return value

    def resized(self, sample_id, img, spec):
        key = (sample_id, tuple(spec.target_shape))
        val = self.get(key)
        if val is None:
            with self._lock:
                self.misses += 1
            val = self.put(key, resize_to_target(img, spec))
        return val


def stack_batch(images, spec):
    """Finalize already-resized images into one ``(N, H, W, C)`` tensor."""
    return np.stack([finalize(img, spec) for img in images])


# ---------------------------------------------------------------------------
# splitting


def _allocate(sizes, total):
    raw = [s * total / sum(sizes) for s in sizes]
    out = [int(math.floor(r)) for r in raw]
    order = sorted(range(len(sizes)), key=lambda i: (-(raw[i] - out[i]), i))
    for i in order[: total - sum(out)]:
        out[i] += 1
    return out


def split_train_valid(ds, valid_fraction, seed):
    """Deterministic disjoint split, stratified on each sample's first positive class."""
    if not 0.0 < valid_fraction < 1.0:
        raise ConfigError(f"valid_fraction must lie in (0, 1), got {valid_fraction}")
    n = len(ds)
    if n < 2:
        raise ConfigError("need at least 2 samples to split")
    n_valid = min(n - 1, max(1, _round_half_up(n * valid_fraction)))
    rng = np.random.default_rng(seed)
    positives = ds.labels.sum(axis=0)
    if np.all(positives >= 2):
        primary = np.where(ds.labels.any(axis=1), ds.labels.argmax(axis=1), -1)
        groups = [np.flatnonzero(primary == g) for g in np.unique(primary)]
        quotas = _allocate([len(g) for g in groups], n_valid)
        valid_idx = []
        for g, q in zip(groups, quotas):
            valid_idx.extend(rng.permutation(g)[:q].tolist())
    else:
        valid_idx = rng.permutation(n)[:n_valid].tolist()
    valid_set = set(valid_idx)
    train_idx = [i for i in range(n) if i not in valid_set]
    return (
        ds.subset(train_idx, name=f"{ds.name}/train"),
        ds.subset(sorted(valid_set), name=f"{ds.name}/valid"),
    )
