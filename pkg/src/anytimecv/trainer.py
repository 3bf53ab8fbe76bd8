"""Budgeted training: scheduled SGD, softmax annealing, search trigger, retraining."""
from __future__ import annotations

import enum
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .augment import apply_policy, random_policy
from .data import ChannelPolicy, PreprocessCache, stack_batch
from .errors import CheckpointError, ConfigError, DivergenceError, ScoringError
from .metrics import PredictionSnapshot, nauc_macro
from .model import (
    Architecture,
    Checkpoint,
    Model,
    anneal,
    annealed_bce,
    predict,
)
from .search import SearchConfig, search_policies

__all__ = [
    "TrainerConfig",
    "Phase",
    "ScheduleState",
    "SGD",
    "init_model",
    "anneal",
    "predict",
    "initial_state",
    "schedule_step",
    "enter_retrain",
    "train_epoch",
    "fit",
    "FitResult",
]


class AugmentMode(str, enum.Enum):
    SEARCHED = "searched"
    RANDOM = "random"
    NONE = "none"


@dataclass(frozen=True)
class TrainerConfig:
    base_lr: float = 0.08
    momentum: float = 0.9
    weight_decay: float = 0.0
    warmup_epochs: int = 5
    plateau_window: int = 10
    plateau_factor: float = 0.1
    plateau_eps: float = 1e-4
    tau: float = 8.0
    batch_size: int = 64
    search_trigger_nauc: float = 0.99
    seed: int = 0
    widths: tuple = (16, 32)
    workers: int = 1
    prefetch: int = 4

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(self.widths))
        if self.base_lr <= 0 or self.tau <= 0 or self.batch_size < 1:
            raise ConfigError("base_lr, tau and batch_size must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.warmup_epochs < 0 or self.plateau_window < 1 or not 0 < self.plateau_factor <= 1:
            raise ConfigError("invalid schedule settings")


class Phase(str, enum.Enum):
    WARMUP = "warmup"
    MAIN = "main"
    RETRAIN = "retrain"


@dataclass(frozen=True)
class ScheduleState:
    """``current_lr`` is the rate for the next epoch; ``epoch`` counts finished ones."""

    current_lr: float
    epoch: int = 0
    best_loss: float = math.inf
    epochs_since_improvement: int = 0
    phase: Phase = Phase.MAIN


def initial_state(cfg):
    if cfg.warmup_epochs > 0:
        return ScheduleState(cfg.base_lr / cfg.warmup_epochs, phase=Phase.WARMUP)
    return ScheduleState(cfg.base_lr, phase=Phase.MAIN)


def schedule_step(state, epoch_loss, cfg):
    """Advance the schedule by one finished epoch with mean loss ``epoch_loss``.

    Warm-up ramps linearly to ``base_lr`` over ``warmup_epochs``; afterwards
    the rate is multiplied by ``plateau_factor`` once the loss has failed to
    beat its best by ``plateau_eps`` for ``plateau_window`` epochs in a row.
    """
    epoch = state.epoch + 1
    improved = epoch_loss < state.best_loss - cfg.plateau_eps
    best = epoch_loss if improved else state.best_loss
    if state.phase is Phase.WARMUP:
        if epoch < cfg.warmup_epochs:
            lr, phase = cfg.base_lr * (epoch + 1) / cfg.warmup_epochs, Phase.WARMUP
        else:
            lr, phase = cfg.base_lr, Phase.MAIN
        return ScheduleState(lr, epoch, best, 0, phase)
    since = 0 if improved else state.epochs_since_improvement + 1
    lr = state.current_lr
    if since >= cfg.plateau_window:
        lr *= cfg.plateau_factor
        since = 0
    return ScheduleState(lr, epoch, best, since, state.phase)


def enter_retrain(state, cfg):
    """Restore ``base_lr`` without warm-up and forget the pre-search loss history."""
    return ScheduleState(cfg.base_lr, state.epoch, math.inf, 0, Phase.RETRAIN)


class SGD:
    """Heavy-ball momentum, ``v = mu v + g; w -= lr v``."""

    def __init__(self, momentum=0.9, weight_decay=0.0):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {}

    def step(self, params, grads, lr):
        for name, g in grads.items():
            if self.weight_decay and name.endswith("_w"):
                g = g + self.weight_decay * params[name]
            v = self.velocity.get(name)
            v = g.copy() if v is None else self.momentum * v + g
            self.velocity[name] = v
            params[name] -= lr * v


def init_model(spec, num_classes, cfg, warmstart=None):
    """Fresh Xavier-normal network, or a warm start whose head is re-drawn."""
    arch = Architecture(
        in_channels=spec.model_channels,
        num_classes=num_classes,
        widths=cfg.widths,
        projection=spec.channel_policy is ChannelPolicy.PREFIX_PROJECTION,
    )
    model = Model.initialize(arch, np.random.default_rng([cfg.seed, 101]), spec)
    if warmstart is not None:
        src = warmstart.arch
        if (src.in_channels, src.widths, src.projection) != (
            arch.in_channels, arch.widths, arch.projection
        ):
            raise CheckpointError(
                f"checkpoint body {src.to_dict()} incompatible with {arch.to_dict()}"
            )
        for name, value in warmstart.params.items():
            if not name.startswith("head_"):
                model.params[name] = np.array(value, dtype=np.float64)
    return model


# ---------------------------------------------------------------------------
# one epoch


def _make_batch(resized, labels, idx, policy, seed, spec):
    rng = np.random.default_rng(seed)
    imgs = [resized[i] for i in idx]
    if policy is not None:
        imgs = [apply_policy(im, policy, rng) for im in imgs]
    return stack_batch(imgs, spec), labels[idx]


def iter_batches(resized, labels, policy, spec, rng, batch_size, workers=0, prefetch=4):
    """Yield ``(index, x, t)`` in batch order.

    Per-batch rng seeds are drawn up front, so the worker count never changes
    the batches produced.
    """
    order = rng.permutation(len(resized))
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    seeds = rng.integers(0, 2**63 - 1, size=len(chunks))
    if workers <= 0 or policy is None:
        for b, idx in enumerate(chunks):
            yield (b, *_make_batch(resized, labels, idx, policy, int(seeds[b]), spec))
        return
    with ThreadPoolExecutor(workers) as ex:
        pending = {}
        nxt = 0
        for b in range(len(chunks)):
            while nxt < len(chunks) and nxt < b + prefetch:
                pending[nxt] = ex.submit(
                    _make_batch, resized, labels, chunks[nxt], policy, int(seeds[nxt]), spec
                )
                nxt += 1
            x, t = pending.pop(b).result()
            yield b, x, t


def train_epoch(model, train, policy, state, cfg, rng, optimizer=None, cache=None):
    """One shuffled pass of SGD at ``state.current_lr``.

    Returns the sample-weighted mean loss (measured before each batch's
    update) and the advanced schedule state.
    """
    if len(train) == 0:
        raise ConfigError("cannot train on an empty dataset")
    spec = model.spec
    cache = cache if cache is not None else PreprocessCache()
    optimizer = optimizer if optimizer is not None else SGD(cfg.momentum, cfg.weight_decay)
    resized = [cache.resized(sid, img, spec) for sid, img in zip(train.ids, train.images)]
    total, count = 0.0, 0
    for b, x, t in iter_batches(resized, train.labels, policy, spec, rng, cfg.batch_size,
                                cfg.workers, cfg.prefetch):
        z, tape = model.forward(x, keep=True)
        loss, dz = annealed_bce(z, t, cfg.tau)
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite loss in batch {b}", batch_index=b)
        grads = model.backward(dz, tape)
        optimizer.step(model.params, grads, state.current_lr)
        total += loss * len(x)
        count += len(x)
    loss = total / count
    return loss, schedule_step(state, loss, cfg)


# ---------------------------------------------------------------------------
# budgeted fit


@dataclass
class FitResult:
    model: Model
    search: object = None
    policy: object = None
    log: list = field(default_factory=list)
    snapshots: int = 0
    trigger_epoch: int = None
    stopped_reason: str = ""


def _safe_nauc(scores, labels):
    try:
        return nauc_macro(scores, labels)
    except ScoringError:
        return float("nan")


def fit(model, train, valid, cfg, budget, pool, emit=None, test_images=None,
        mode=AugmentMode.SEARCHED, search_cfg=SearchConfig(), clock=time.perf_counter,
        start_time=None, on_epoch=None):
    """Train under a wall-clock budget, search once, then retrain with augmentation.

    ``emit`` receives a PredictionSnapshot on ``test_images`` (already resized
    to the model's target shape; the validation set when omitted) after every
    epoch that finishes inside the budget. Timestamps count from
    ``start_time`` (default: entry into this function).
    """
    if budget <= 0:
        raise ConfigError("budget must be positive")
    mode = AugmentMode(mode)
    start = clock() if start_time is None else start_time
    spec = model.spec
    cache = PreprocessCache()
    optimizer = SGD(cfg.momentum, cfg.weight_decay)
    valid_x = stack_batch([cache.resized(s, im, spec) for s, im in zip(valid.ids, valid.images)],
                          spec)
    test_x = valid_x if test_images is None else stack_batch(test_images, spec)

    state = initial_state(cfg)
    result = FitResult(model=model)
    policy = None
    searched = False
    last_epoch_seconds = 0.0
    good = model.copy()
    while True:
        if clock() - start + last_epoch_seconds > budget:
            result.stopped_reason = "budget"
            break
        epoch_start = clock()
        lr_used = state.current_lr
        phase_used = state.phase
        try:
            loss, state = train_epoch(model, train, policy, state, cfg,
                                      np.random.default_rng([cfg.seed, 7, state.epoch]),
                                      optimizer, cache)
        except DivergenceError as exc:
            exc.checkpoint = Checkpoint(good.arch, good.params)
            raise
        valid_nauc = _safe_nauc(predict(model, valid_x, cfg.tau), valid.labels)
        scores = predict(model, test_x, cfg.tau)
        ts = clock() - start
        if ts > budget:
            result.stopped_reason = "budget"
            break
        if emit is not None:
            emit(PredictionSnapshot(ts, scores))
        result.snapshots += 1
        good = model.copy()
        record = {
            "epoch": state.epoch,
            "lr": lr_used,
            "loss": loss,
            "valid_nauc": valid_nauc,
            "phase": phase_used.value,
            "wall_clock": ts,
        }
        result.log.append(record)
        if on_epoch is not None:
            on_epoch(record)
        if not searched and (valid_nauc > cfg.search_trigger_nauc or clock() - start >= budget / 2):
            searched = True
            result.trigger_epoch = state.epoch
            deadline = start + budget
            if mode is AugmentMode.SEARCHED:
                result.search = search_policies(
                    search_cfg, model, train, valid, pool, tau=cfg.tau, cache=cache,
                    should_stop=lambda: clock() >= deadline,
                )
                policy = result.search.policy()
            elif mode is AugmentMode.RANDOM:
                policy = random_policy(pool, search_cfg.C,
                                       np.random.default_rng([search_cfg.seed, 3]))
            result.policy = policy
            state = enter_retrain(state, cfg)
        last_epoch_seconds = clock() - epoch_start
    return result
