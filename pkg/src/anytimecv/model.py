"""A small NHWC convolutional classifier with hand-written backpropagation.

Layout: optional 3x3 projection (for inputs that are neither 1 nor 3
channels), ``len(widths)`` blocks of 3x3 conv + ReLU + 2x2 max-pool, global
average pooling and a fully connected head producing one logit per class.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .errors import CheckpointError

DEFAULT_WIDTHS = (16, 32)
CHECKPOINT_MAGIC = b"ANYCVCK\x00"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    in_channels: int
    num_classes: int
    widths: tuple = DEFAULT_WIDTHS
    projection: bool = False

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if not 1 <= len(self.widths) <= 4:
            raise ValueError("the network has 1 to 4 conv blocks")

    def to_dict(self):
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @property
    def body_channels(self):
        return 3 if self.projection else self.in_channels

    def param_shapes(self):
        shapes = {}
        if self.projection:
            shapes["proj_w"] = (self.in_channels, 3, 3, 3)
            shapes["proj_b"] = (3,)
        cin = self.body_channels
        for i, cout in enumerate(self.widths):
            shapes[f"conv{i}_w"] = (cin, 3, 3, cout)
            shapes[f"conv{i}_b"] = (cout,)
            cin = cout
        shapes["head_w"] = (cin, self.num_classes)
        shapes["head_b"] = (self.num_classes,)
        return shapes


def xavier_normal(shape, rng, gain=1.0):
    if len(shape) == 4:
        cin, kh, kw, cout = shape
        fan_in, fan_out = cin * kh * kw, cout * kh * kw
    else:
        fan_in, fan_out = shape
    std = gain * np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=shape)


class Model:
    """Parameters plus the input spec the network was built for (may be None)."""

    def __init__(self, arch, params, spec=None):
        self.arch = arch
        self.params = params
        self.spec = spec

    @classmethod
    def initialize(cls, arch, rng, spec=None):
        params = {}
        for name, shape in arch.param_shapes().items():
            if name.endswith("_b"):
                params[name] = np.zeros(shape)
            else:
                params[name] = xavier_normal(shape, rng)
        return cls(arch, params, spec)

    def copy(self):
        return Model(self.arch, {k: v.copy() for k, v in self.params.items()}, self.spec)

    def reinit_head(self, rng):
        self.params["head_w"] = xavier_normal(self.params["head_w"].shape, rng)
        self.params["head_b"] = np.zeros_like(self.params["head_b"])

    def num_parameters(self):
        return sum(v.size for v in self.params.values())

    # -- forward / backward ---------------------------------------------

    def forward(self, x, keep=False):
        """Logits for an ``(N, H, W, C)`` batch; ``keep`` retains backward state."""
        p = self.params
        tape = []
        h = np.asarray(x, dtype=np.float64)
        if self.arch.projection:
            h, cache = _conv_forward(h, p["proj_w"], p["proj_b"])
            tape.append(("conv", "proj", cache))
        for i in range(len(self.arch.widths)):
            h, cache = _conv_forward(h, p[f"conv{i}_w"], p[f"conv{i}_b"])
            tape.append(("conv", f"conv{i}", cache))
            mask = h > 0
            h = h * mask
            tape.append(("relu", None, mask))
            if h.shape[1] >= 2 and h.shape[2] >= 2:
                in_hw = h.shape[1:3]
                h, arg = kernels.maxpool2x2_forward(h)
                tape.append(("pool", None, (arg, in_hw)))
        hw = h.shape[1:3]
        feats = h.mean(axis=(1, 2))
        z = feats @ p["head_w"] + p["head_b"]
        if not keep:
            return z
        tape.append(("head", None, (feats, hw)))
        return z, tape

    def backward(self, dz, tape):
        p = self.params
        grads = {}
        feats, hw = tape[-1][2]
        grads["head_w"] = feats.T @ dz
        grads["head_b"] = dz.sum(axis=0)
        dfeat = dz @ p["head_w"].T
        dh = np.broadcast_to(dfeat[:, None, None, :] / (hw[0] * hw[1]),
                             (dz.shape[0], hw[0], hw[1], dfeat.shape[1]))
        for kind, name, cache in reversed(tape[:-1]):
            if kind == "pool":
                arg, (ih, iw) = cache
                dh = kernels.maxpool2x2_backward(dh, arg, ih, iw)
            elif kind == "relu":
                dh = dh * cache
            else:
                dh, grads[f"{name}_w"], grads[f"{name}_b"] = _conv_backward(
                    dh, p[f"{name}_w"], cache
                )
        return grads


def _conv_forward(x, w, b):
    n, h, wd, cin = x.shape
    cout = w.shape[3]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = sliding_window_view(xp, (3, 3), axis=(1, 2)).reshape(n * h * wd, cin * 9)
    out = cols @ w.reshape(cin * 9, cout) + b
    return out.reshape(n, h, wd, cout), (cols, x.shape)


def _conv_backward(dout, w, cache):
    cols, (n, h, wd, cin) = cache
    cout = w.shape[3]
    d2 = dout.reshape(-1, cout)
    dw = (cols.T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(cin * 9, cout).T).reshape(n, h, wd, cin, 3, 3)
    dxp = np.zeros((n, h + 2, wd + 2, cin))
    for i in range(3):
        for j in range(3):
            dxp[:, i : i + h, j : j + wd, :] += dcols[..., i, j]
    return dxp[:, 1:-1, 1:-1, :], dw, db


# ---------------------------------------------------------------------------
# annealed output and loss


def anneal(z, tau):
    """Temperature softmax ``exp(z_i / tau) / sum_j exp(z_j / tau)`` along the last axis."""
    a = np.asarray(z, dtype=np.float64) / tau
    a = a - a.max(axis=-1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=-1, keepdims=True)


_EPS = 1e-15


def annealed_bce(z, targets, tau):
    """Per-class binary cross-entropy on annealed outputs.

    Returns the batch mean of the per-sample sum over classes, and its
    gradient with respect to the logits.
    """
    t = np.asarray(targets, dtype=np.float64)
    n = z.shape[0]
    y = anneal(z, tau)
    one_minus = np.maximum(1.0 - y, _EPS)
    y_safe = np.maximum(y, _EPS)
    loss = -(t * np.log(y_safe) + (1.0 - t) * np.log(one_minus)).sum() / n
    # y_i * dL/dy_i, written to avoid dividing by a vanishing y_i
    yg = -t + (1.0 - t) * y / one_minus
    dz = (yg - y * yg.sum(axis=-1, keepdims=True)) / (tau * n)
    return float(loss), dz


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    arch: Architecture
    params: dict
    fingerprint: str = ""

    def to_model(self):
        return Model(self.arch, {k: v.copy() for k, v in self.params.items()})


def save_checkpoint(model, path, fingerprint=""):
    """Write magic, version, JSON descriptor, little-endian float64 arrays, SHA-256."""
    names = list(model.params)
    descriptor = {
        "arch": model.arch.to_dict(),
        "fingerprint": fingerprint,
        "params": [[n, list(model.params[n].shape)] for n in names],
    }
    desc = json.dumps(descriptor, sort_keys=True).encode()
    body = bytearray(CHECKPOINT_MAGIC)
    body += struct.pack("<II", CHECKPOINT_VERSION, len(desc))
    body += desc
    for n in names:
        body += np.ascontiguousarray(model.params[n], dtype="<f8").tobytes()
    body += hashlib.sha256(body).digest()
    Path(path).write_bytes(bytes(body))
    return Path(path)


def load_checkpoint(path):
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    head = len(CHECKPOINT_MAGIC) + 8
    if len(blob) < head + 32 or not blob.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint or truncated")
    if hashlib.sha256(blob[:-32]).digest() != blob[-32:]:
        raise CheckpointError(f"{path}: checksum mismatch (truncated or corrupted)")
    version, dlen = struct.unpack("<II", blob[len(CHECKPOINT_MAGIC) : head])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        desc = json.loads(blob[head : head + dlen])
        arch = Architecture(**desc["arch"])
    except (ValueError, TypeError, KeyError) as exc:
        raise CheckpointError(f"{path}: bad descriptor: {exc}") from exc
    expected = arch.param_shapes()
    offset = head + dlen
    params = {}
    for name, shape in desc["params"]:
        if tuple(shape) != tuple(expected.get(name, ())):
            raise CheckpointError(f"{path}: parameter {name} shape {shape} disagrees with arch")
        count = int(np.prod(shape))
        raw = blob[offset : offset + 8 * count]
        if len(raw) != 8 * count:
            raise CheckpointError(f"{path}: truncated parameter data")
        params[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
        offset += 8 * count
    if offset != len(blob) - 32 or set(params) != set(expected):
        raise CheckpointError(f"{path}: parameter data does not match descriptor")
    return Checkpoint(arch=arch, params=params, fingerprint=desc.get("fingerprint", ""))


def predict(model, x, tau, batch_size=256):
    """Annealed per-class scores for a preprocessed ``(N, H, W, C)`` tensor."""
    x = np.asarray(x, dtype=np.float64)
    out = [anneal(model.forward(x[i : i + batch_size]), tau) for i in range(0, len(x), batch_size)]
    if not out:
        return np.zeros((0, model.arch.num_classes))
    return np.concatenate(out, axis=0)
