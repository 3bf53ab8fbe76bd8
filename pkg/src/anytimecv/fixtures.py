"""Synthetic image-classification fixtures.

Every image holds one object on a noisy dark background. In ``shapes`` and
``related`` the label combines the object's outline with its brightness
band, so transforms that remap intensities destroy label information. In
``outlines`` (grayscale) the label is the outline alone and brightness is a
nuisance, which is the regime where mild photometric and geometric
augmentation can help a small training set.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import LabeledDataset, write_dataset
from .errors import ConfigError

# task -> (outlines, label includes the brightness band, channels)
TASKS = {
    "shapes": (("square", "cross"), True, 3),
    "related": (("ring", "bar"), True, 3),
    "outlines": (("square", "cross", "ring", "bar"), False, 1),
}
BANDS = ((95.0, 130.0), (185.0, 235.0))


def _mask(kind, size, rng):
    s = size
    m = np.zeros((s, s), dtype=bool)
    if kind == "square":
        m[:, :] = True
    elif kind == "cross":
        t = max(1, s // 3)
        lo = (s - t) // 2
        m[lo : lo + t, :] = True
        m[:, lo : lo + t] = True
    elif kind == "ring":
        yy, xx = np.mgrid[:s, :s]
        r = np.hypot(yy - (s - 1) / 2, xx - (s - 1) / 2)
        m = (r <= s / 2) & (r >= s / 2 - max(1.5, s / 5))
    elif kind == "bar":
        t = max(1, s // 3)
        if rng.random() < 0.5:
            m[(s - t) // 2 : (s - t) // 2 + t, :] = True
        else:
            m[:, (s - t) // 2 : (s - t) // 2 + t] = True
    else:
        raise ConfigError(f"unknown outline {kind}")
    return m


def make_shapes(n, seed, size=16, task="shapes", noise=14.0):
    """``n`` uint8 images with one-hot labels over 4 classes.

    Banded tasks use class ``2 * outline + band`` with the band dim or bright;
    ``outlines`` is single-channel, uses the outline index and draws the
    object's brightness from a wide range. Returns ``(images, labels)``.
    """
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; choose from {sorted(TASKS)}")
    if size < 8:
        raise ConfigError("fixture images need size >= 8")
    rng = np.random.default_rng(seed)
    outlines, banded, channels = TASKS[task]
    images, labels = [], np.zeros((n, 4), dtype=np.uint8)
    for i in range(n):
        cls = int(rng.integers(4))
        if banded:
            outline = outlines[cls // 2]
            bg, level = 40.0, rng.uniform(*BANDS[cls % 2])
            tint = rng.uniform(0.85, 1.15, size=channels)
        else:
            outline = outlines[cls]
            bg = rng.uniform(10.0, 60.0)
            level = bg + rng.uniform(60.0, 190.0)
            tint = np.ones(channels)
        img = rng.normal(bg, noise, size=(size, size, channels))
        s = int(rng.integers(size // 3, size // 2 + 2))
        y, x = (int(v) for v in rng.integers(0, size - s + 1, size=2))
        region = img[y : y + s, x : x + s]
        m = _mask(outline, s, rng)
        region[m] = level * tint + rng.normal(0.0, noise / 2, size=(int(m.sum()), channels))
        images.append(np.clip(np.rint(img), 0, 255).astype(np.uint8))
        labels[i, cls] = 1
    return images, labels


def make_separable(n, seed, size=16):
    """Two classes split by mean brightness: dark noise vs. bright noise."""
    rng = np.random.default_rng(seed)
    labels = np.zeros((n, 2), dtype=np.uint8)
    images = []
    for i in range(n):
        cls = i % 2
        base = 70.0 if cls == 0 else 180.0
        img = rng.normal(base, 20.0, size=(size, size, 3))
        images.append(np.clip(np.rint(img), 0, 255).astype(np.uint8))
        labels[i, cls] = 1
    return images, labels


def as_dataset(images, labels, name="fixture"):
    return LabeledDataset(
        images=tuple(np.asarray(im, dtype=np.float64) / 255.0 for im in images),
        labels=labels,
        name=name,
        ids=tuple(f"img_{i:06d}.png" for i in range(len(images))),
    )


def write_fixture(out, n_train=2000, n_test=500, seed=0, size=16, task="shapes", noise=14.0):
    """Write ``out/train`` and ``out/test`` from disjoint seed streams."""
    out = Path(out)
    tr = make_shapes(n_train, [seed, 0], size=size, task=task, noise=noise)
    te = make_shapes(n_test, [seed, 1], size=size, task=task, noise=noise)
    sums = {
        "train": write_dataset(out / "train", *tr, name=f"{task}-train"),
        "test": write_dataset(out / "test", *te, name=f"{task}-test"),
    }
    return sums
