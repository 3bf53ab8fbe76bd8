"""AutoAugment-style transform ops, sub-policies, policies and the frozen pool.

Ops take and return ``(H, W, C)`` float images in ``[0, 1]``. An op that
fires snaps its output to the 8-bit grid ``i / 255``, like the uint8 PIL
operations the pool was learned with; an op that does not fire returns its
input object untouched.
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import kernels
from .errors import ConfigError

POOL_FILE = "autoaugment_cifar10_v1.json"
POOL_SHA256 = "5f6e2ed8bd174860fa94704471744e2a40c7f25d567a725aaa13df916d554783"
MAX_LEVEL = 9
CUTOUT_FILL = 0.5


class OpKind(str, enum.Enum):
    SHEAR_X = "ShearX"
    SHEAR_Y = "ShearY"
    TRANSLATE_X = "TranslateX"
    TRANSLATE_Y = "TranslateY"
    ROTATE = "Rotate"
    AUTO_CONTRAST = "AutoContrast"
    INVERT = "Invert"
    EQUALIZE = "Equalize"
    SOLARIZE = "Solarize"
    POSTERIZE = "Posterize"
    CONTRAST = "Contrast"
    COLOR = "Color"
    BRIGHTNESS = "Brightness"
    SHARPNESS = "Sharpness"
    CUTOUT = "Cutout"
    FLIP_LR = "FlipLR"


GEOMETRIC = frozenset(
    {OpKind.SHEAR_X, OpKind.SHEAR_Y, OpKind.TRANSLATE_X, OpKind.TRANSLATE_Y, OpKind.ROTATE}
)
NO_MAGNITUDE = frozenset({OpKind.AUTO_CONTRAST, OpKind.INVERT, OpKind.EQUALIZE, OpKind.FLIP_LR})

# value reached at level 9; every range starts at 0 except where noted
_MAX_MAGNITUDE = {
    OpKind.SHEAR_X: 0.3,
    OpKind.SHEAR_Y: 0.3,
    OpKind.TRANSLATE_X: 0.45,
    OpKind.TRANSLATE_Y: 0.45,
    OpKind.ROTATE: 30.0,
    OpKind.CUTOUT: 0.2,
}
_ENHANCE = frozenset({OpKind.CONTRAST, OpKind.COLOR, OpKind.BRIGHTNESS, OpKind.SHARPNESS})


def magnitude_value(kind, level):
    """Map a 0-9 level onto the op's parameter.

    Shear is a ratio, translate and cutout are fractions of the image side,
    rotate is in degrees, enhancements return a blend factor in [0.1, 1.9],
    solarize a threshold on the [0, 1] scale and posterize a bit depth.
    Magnitude-free ops return ``None``.
    """
    kind = OpKind(kind)
    if not 0 <= level <= MAX_LEVEL:
        raise ConfigError(f"level {level} outside 0..{MAX_LEVEL}")
    frac = level / MAX_LEVEL
    if kind in _MAX_MAGNITUDE:
        return _MAX_MAGNITUDE[kind] * frac
    if kind in _ENHANCE:
        return 0.1 + 1.8 * frac
    if kind is OpKind.SOLARIZE:
        return (256.0 - 256.0 * frac) / 255.0
    if kind is OpKind.POSTERIZE:
        return 8 - int(math.floor(4 * frac + 0.5))
    return None


@dataclass(frozen=True)
class TransformOp:
    kind: OpKind
    p: float
    level: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", OpKind(self.kind))
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"probability {self.p} outside [0, 1]")
        if int(self.level) != self.level or not 0 <= self.level <= MAX_LEVEL:
            raise ConfigError(f"level {self.level} outside 0..{MAX_LEVEL}")
        object.__setattr__(self, "level", int(self.level))

    def to_dict(self):
        return {"kind": self.kind.value, "p": self.p, "level": self.level}


@dataclass(frozen=True)
class SubPolicy:
    ops: tuple

    def __post_init__(self):
        ops = tuple(op if isinstance(op, TransformOp) else TransformOp(**op) for op in self.ops)
        if len(ops) != 2:
            raise ConfigError(f"a sub-policy has exactly 2 ops, got {len(ops)}")
        object.__setattr__(self, "ops", ops)

    def to_json(self):
        return [op.to_dict() for op in self.ops]


@dataclass(frozen=True)
class Policy:
    subpolicies: tuple

    def __post_init__(self):
        subs = tuple(
            sp if isinstance(sp, SubPolicy) else SubPolicy(tuple(sp)) for sp in self.subpolicies
        )
        if not subs:
            raise ConfigError("a policy needs at least one sub-policy")
        object.__setattr__(self, "subpolicies", subs)

    def __len__(self):
        return len(self.subpolicies)

    def to_json(self):
        return [sp.to_json() for sp in self.subpolicies]

    @classmethod
    def from_json(cls, doc):
        return cls(tuple(SubPolicy(tuple(TransformOp(**op) for op in sp)) for sp in doc))


@dataclass(frozen=True)
class PolicyPool:
    subpolicies: tuple
    name: str = "custom"
    version: int = 1

    def __len__(self):
        return len(self.subpolicies)

    def checksum(self):
        return subpolicy_checksum(self.subpolicies)


def subpolicy_checksum(subpolicies):
    doc = [sp.to_json() for sp in subpolicies]
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def builtin_pool():
    raw = json.loads(resources.files("anytimecv").joinpath("resources").joinpath(POOL_FILE).read_text())
    subs = tuple(SubPolicy(tuple(TransformOp(**op) for op in sp)) for sp in raw["subpolicies"])
    pool = PolicyPool(subs, name=raw["name"], version=raw["version"])
    if pool.checksum() != POOL_SHA256:
        raise RuntimeError(f"{POOL_FILE} does not match its recorded checksum")
    return pool


def random_policy(pool, c, rng):
    """``c`` distinct sub-policies drawn uniformly, with no evaluation."""
    if not 1 <= c <= len(pool):
        raise ConfigError(f"c={c} outside 1..{len(pool)}")
    idx = rng.choice(len(pool), size=c, replace=False)
    return Policy(tuple(pool.subpolicies[i] for i in idx))


# ---------------------------------------------------------------------------
# pixel operations; ``q`` arrays hold 8-bit intensities as float64 0..255


def _to_q(img):
    return np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5)


def _from_q(q):
    return np.clip(np.floor(q + 0.5), 0.0, 255.0) / 255.0


def _luma(q):
    if q.shape[2] == 3:
        return q[..., 0] * 0.299 + q[..., 1] * 0.587 + q[..., 2] * 0.114
    return q.mean(axis=2)


def _blend(degenerate, q, factor):
    return np.clip(degenerate + factor * (q - degenerate), 0.0, 255.0)


def _equalize_channel(ch):
    flat = ch.astype(np.int64).ravel()
    hist = np.bincount(flat, minlength=256)
    nonzero = hist[hist > 0]
    if nonzero.size <= 1:
        return ch
    step = (nonzero.sum() - nonzero[-1]) // 255
    if step == 0:
        return ch
    lut = (step // 2 + np.concatenate(([0], np.cumsum(hist)[:-1]))) // step
    return np.minimum(lut, 255)[flat].reshape(ch.shape).astype(np.float64)


def _smooth(q):
    out = q.copy()
    if q.shape[0] < 3 or q.shape[1] < 3:
        return out
    acc = np.zeros_like(q[1:-1, 1:-1])
    for dy in range(3):
        for dx in range(3):
            acc += q[dy : dy + q.shape[0] - 2, dx : dx + q.shape[1] - 2]
    # PIL SMOOTH kernel: ones with a centre weight of 5, normalised by 13
    acc += 4.0 * q[1:-1, 1:-1]
    out[1:-1, 1:-1] = acc / 13.0
    return out


def _affine(kind, mag, h, w):
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    if kind is OpKind.SHEAR_X:
        return (1.0, mag, -mag * cy, 0.0, 1.0, 0.0)
    if kind is OpKind.SHEAR_Y:
        return (1.0, 0.0, 0.0, mag, 1.0, -mag * cx)
    if kind is OpKind.TRANSLATE_X:
        return (1.0, 0.0, -mag * w, 0.0, 1.0, 0.0)
    if kind is OpKind.TRANSLATE_Y:
        return (1.0, 0.0, 0.0, 0.0, 1.0, -mag * h)
    theta = math.radians(mag)
    cs, sn = math.cos(theta), math.sin(theta)
    return (cs, sn, cx - cs * cx - sn * cy, -sn, cs, cy + sn * cx - cs * cy)


def _transform(img, kind, level, rng):
    mag = magnitude_value(kind, level)
    if kind in GEOMETRIC:
        if rng.random() < 0.5:
            mag = -mag
        h, w = img.shape[:2]
        out = kernels.warp_affine(img, _affine(kind, mag, h, w), fill=0.0)
        return _from_q(out * 255.0)
    if kind is OpKind.FLIP_LR:
        return _from_q(_to_q(img)[:, ::-1])
    q = _to_q(img)
    if kind is OpKind.INVERT:
        return (255.0 - q) / 255.0
    if kind is OpKind.AUTO_CONTRAST:
        lo = q.min(axis=(0, 1), keepdims=True)
        hi = q.max(axis=(0, 1), keepdims=True)
        span = np.where(hi > lo, hi - lo, 1.0)
        return _from_q(np.where(hi > lo, (q - lo) * (255.0 / span), q))
    if kind is OpKind.EQUALIZE:
        return _from_q(np.stack([_equalize_channel(q[..., k]) for k in range(q.shape[2])], axis=2))
    if kind is OpKind.SOLARIZE:
        return np.where(q >= mag * 255.0, 255.0 - q, q) / 255.0
    if kind is OpKind.POSTERIZE:
        mask = (0xFF << (8 - mag)) & 0xFF
        return (q.astype(np.int64) & mask) / 255.0
    if kind is OpKind.BRIGHTNESS:
        return _from_q(_blend(np.zeros_like(q), q, mag))
    if kind is OpKind.CONTRAST:
        return _from_q(_blend(np.full_like(q, _luma(q).mean()), q, mag))
    if kind is OpKind.COLOR:
        return _from_q(_blend(np.repeat(_luma(q)[..., None], q.shape[2], axis=2), q, mag))
    if kind is OpKind.SHARPNESS:
        return _from_q(_blend(_smooth(q), q, mag))
    if kind is OpKind.CUTOUT:
        h, w = q.shape[:2]
        size = int(math.floor(mag * min(h, w) + 0.5))
        cy, cx = int(rng.integers(h)), int(rng.integers(w))
        out = q.copy()
        if size > 0:
            y0, x0 = max(0, cy - size // 2), max(0, cx - size // 2)
            out[y0 : cy - size // 2 + size, x0 : cx - size // 2 + size] = CUTOUT_FILL * 255.0
        return _from_q(out)
    raise ConfigError(f"unknown op {kind}")


def apply_op(img, op, rng):
    """Fire ``op`` with probability ``op.p``; otherwise return ``img`` as is."""
    if rng.random() >= op.p:
        return img
    return _transform(img, op.kind, op.level, rng)


def apply_subpolicy(img, subpolicy, rng):
    for op in subpolicy.ops:
        img = apply_op(img, op, rng)
    return img


def apply_policy(img, policy, rng):
    sp = policy.subpolicies[int(rng.integers(len(policy.subpolicies)))]
    return apply_subpolicy(img, sp, rng)


def save_policy(policy, path):
    with open(path, "w") as fh:
        json.dump(policy.to_json(), fh, indent=1)


def load_policy(path):
    with open(path) as fh:
        return Policy.from_json(json.load(fh))
