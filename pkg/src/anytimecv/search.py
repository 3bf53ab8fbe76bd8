"""Light single-fold policy search by density matching.

A trained model scores augmented copies of the validation set. Candidates
of ``C`` pooled sub-policies whose score strictly beats the un-augmented
baseline are kept; the union of the best ``N`` becomes the training policy.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .augment import Policy, apply_policy
from .data import PreprocessCache, stack_batch
from .errors import ConfigError
from .metrics import nauc_macro
from .model import predict


@dataclass(frozen=True)
class SearchConfig:
    C: int = 3
    T: int = 100
    N: int = 5
    seed: int = 0
    eval_repeats: int = 1
    workers: int = 1

    def __post_init__(self):
        if self.C < 1 or self.T < 1 or self.N < 1 or self.eval_repeats < 1:
            raise ConfigError("search needs C, T, N, eval_repeats >= 1")


@dataclass(frozen=True)
class ScoredCandidate:
    iteration: int
    policy: Policy
    score: float
    kept: bool
    seconds: float = 0.0


@dataclass
class SearchResult:
    selected: tuple
    baseline_score: float
    candidates_kept: int
    trace: list
    top: list = field(default_factory=list)
    evaluations: int = 0
    truncated: bool = False
    baseline_seconds: float = 0.0

    def policy(self):
        """The selected sub-policies as one Policy, or None when nothing was kept."""
        return Policy(self.selected) if self.selected else None

    def to_json(self):
        return {
            "baseline_score": self.baseline_score,
            "baseline_seconds": self.baseline_seconds,
            "candidates_kept": self.candidates_kept,
            "evaluations": self.evaluations,
            "truncated": self.truncated,
            "selected": [sp.to_json() for sp in self.selected],
            "top_iterations": [c.iteration for c in self.top],
            "trace": [
                {
                    "iteration": c.iteration,
                    "score": c.score,
                    "kept": c.kept,
                    "seconds": c.seconds,
                    "policy": c.policy.to_json(),
                }
                for c in self.trace
            ],
        }


def evaluate_candidate(model, valid, policy, rng, tau=1.0, cache=None, repeats=1):
    """Macro NAUC of ``model`` on ``valid`` with ``policy`` applied image-wise.

    ``policy=None`` scores the un-augmented set. The dataset itself is never
    modified: ops return fresh arrays.
    """
    spec = model.spec
    cache = cache if cache is not None else PreprocessCache()
    resized = [cache.resized(sid, img, spec) for sid, img in zip(valid.ids, valid.images)]
    scores = []
    for _ in range(repeats if policy is not None else 1):
        imgs = resized if policy is None else [apply_policy(im, policy, rng) for im in resized]
        scores.append(nauc_macro(predict(model, stack_batch(imgs, spec), tau), valid.labels))
    return float(np.mean(scores))


def select_top(trace, baseline, n):
    """Keep strict improvers, order by (-score, iteration), take ``n``."""
    kept = [c for c in trace if c.score > baseline]
    return sorted(kept, key=lambda c: (-c.score, c.iteration))[:n]


def union_subpolicies(candidates):
    seen = []
    for c in candidates:
        for sp in c.policy.subpolicies:
            if sp not in seen:
                seen.append(sp)
    return tuple(seen)


def search_policies(cfg, model, train, valid, pool, evaluator=None, tau=1.0, cache=None,
                    should_stop=None):
    """Run the search loop and return the selection with its full trace.

    ``evaluator(policy, rng) -> score`` replaces the default model-based
    scorer; it is called with ``policy=None`` once for the baseline, then once
    per candidate. ``should_stop()`` lets a caller cut the loop short at a
    deadline, in which case ``truncated`` is set. ``train`` is accepted for
    signature parity with the full algorithm, whose training step happens
    before this call.
    """
    if len(pool) == 0:
        raise ConfigError("policy pool is empty")
    if cfg.C > len(pool):
        raise ConfigError(f"C={cfg.C} exceeds pool size {len(pool)}")
    if evaluator is None:
        cache = cache if cache is not None else PreprocessCache()

        def evaluator(policy, rng):
            return evaluate_candidate(model, valid, policy, rng, tau=tau, cache=cache,
                                      repeats=cfg.eval_repeats)

    sampler = np.random.default_rng([cfg.seed, 0])
    candidates = []
    for t in range(cfg.T):
        idx = sampler.choice(len(pool), size=cfg.C, replace=False)
        candidates.append(Policy(tuple(pool.subpolicies[i] for i in idx)))

    t0 = time.perf_counter()
    baseline = float(evaluator(None, np.random.default_rng([cfg.seed, 1])))
    baseline_seconds = time.perf_counter() - t0

    def run_one(t):
        start = time.perf_counter()
        score = float(evaluator(candidates[t], np.random.default_rng([cfg.seed, 2, t])))
        return score, time.perf_counter() - start

    results = []
    truncated = False
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            futures = []
            for t in range(cfg.T):
                if should_stop is not None and should_stop():
                    truncated = True
                    break
                futures.append(ex.submit(run_one, t))
            results = [f.result() for f in futures]
    else:
        for t in range(cfg.T):
            if should_stop is not None and should_stop():
                truncated = True
                break
            results.append(run_one(t))

    trace = [
        ScoredCandidate(t, candidates[t], score, score > baseline, secs)
        for t, (score, secs) in enumerate(results)
    ]
    top = select_top(trace, baseline, cfg.N)
    return SearchResult(
        selected=union_subpolicies(top),
        baseline_score=baseline,
        candidates_kept=sum(c.kept for c in trace),
        trace=trace,
        top=top,
        evaluations=1 + len(trace),
        truncated=truncated,
        baseline_seconds=baseline_seconds,
    )
