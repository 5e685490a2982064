"""Forward simulation of the truncated branching process.

Trials advance generation-synchronously in batches. Each uniform is keyed by
``(trial, generation, parent type, particle index within its cell, slot)``
through :class:`~gwinf.rng.CounterStream`, so every trial's path is a pure
function of the root seed and its trial index: chunking and thread count
never change a record.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import BranchingModel, _open_uniform
from .rng import CounterStream

EXPLOSION_CAP = 10**8
MIN_SURVIVORS = 30


class FewSurvivorsError(ValueError):
    pass


@dataclass
class Population:
    """Sparse type counts (1-based types); absent keys mean zero."""

    counts: dict[int, int] = field(default_factory=dict)
    exploded: bool = False

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @classmethod
    def single(cls, i: int) -> "Population":
        return cls({i: 1})


def step_population(pop: Population, model: BranchingModel, rng: np.random.Generator,
                    cap: int = EXPLOSION_CAP) -> Population:
    """One generation: every particle reproduces independently."""
    if pop.exploded or not pop.counts:
        return Population(dict(pop.counts) if pop.exploded else {}, pop.exploded)
    types = np.fromiter(pop.counts.keys(), dtype=np.int64) - 1
    cnts = np.fromiter(pop.counts.values(), dtype=np.int64)
    parents = np.repeat(types, cnts)
    w = _open_uniform(rng, len(parents))
    if model.count_totals(parents, w).sum() > cap:
        return Population(dict(pop.counts), exploded=True)
    # reuse w for the counts so the explosion check and the draw agree
    first = {"done": False}

    def uniform(idx, slot):
        if not first["done"]:
            first["done"] = True
            return w[idx]
        return _open_uniform(rng, len(idx))

    _, child_types = model.draw_offspring(parents, uniform)
    vals, c = np.unique(child_types, return_counts=True)
    return Population({int(t) + 1: int(k) for t, k in zip(vals, c)})


@dataclass
class SimConfig:
    root_seed: int
    trials: int
    horizon: int
    start_type: int = 1
    record_at: tuple[int, ...] = ()
    threads: int | None = None
    explosion_cap: int = EXPLOSION_CAP
    chunk_size: int = 25_000

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        pts = sorted(set(int(n) for n in self.record_at) | {self.horizon})
        if pts[0] < 0 or pts[-1] > self.horizon:
            raise ValueError("checkpoints must lie in [0, horizon]")
        self.record_at = tuple(pts)
        if self.threads is None:
            self.threads = int(os.environ.get("GWINF_THREADS", "1"))


@dataclass
class TrialRecords:
    """Per-trial outcomes at each checkpoint.

    ``totals`` is -1 for exploded trials; they count as alive. ``cells[n]``
    holds ``(trial, type, count)`` arrays (1-based types) for every
    non-exploded trial alive at checkpoint ``n``.
    """

    config: SimConfig
    checkpoints: tuple[int, ...]
    alive: np.ndarray
    totals: np.ndarray
    exploded: np.ndarray
    exploded_at: np.ndarray
    cells: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]]

    @property
    def trials(self) -> int:
        return len(self.exploded)

    def column(self, n: int) -> int:
        try:
            return self.checkpoints.index(n)
        except ValueError:
            raise KeyError(f"generation {n} was not recorded; checkpoints are {self.checkpoints}") from None

    def final_population(self, trial: int) -> Population:
        tr, ty, ct = self.cells[self.checkpoints[-1]]
        sel = tr == trial
        return Population({int(t): int(c) for t, c in zip(ty[sel], ct[sel])}, bool(self.exploded[trial]))


def _simulate_chunk(model: BranchingModel, stream: CounterStream, first: int, count: int,
                    cfg: SimConfig) -> dict:
    N = model.N
    K = len(cfg.record_at)
    col = {n: k for k, n in enumerate(cfg.record_at)}
    alive = np.zeros((count, K), dtype=bool)
    totals = np.zeros((count, K), dtype=np.int64)
    exploded = np.zeros(count, dtype=bool)
    exploded_at = np.full(count, -1, dtype=np.int64)
    cells = {}

    tr = np.arange(count, dtype=np.int64)
    ty = np.full(count, cfg.start_type - 1, dtype=np.int64)
    ct = np.ones(count, dtype=np.int64)

    def record(n):
        k = col[n]
        tot = np.bincount(tr, weights=ct, minlength=count).astype(np.int64)
        alive[:, k] = (tot > 0) | exploded
        totals[:, k] = np.where(exploded, -1, tot)
        cells[n] = (tr + first, ty + 1, ct.copy())

    if 0 in col:
        record(0)
    for g in range(cfg.horizon):
        if tr.size:
            P = int(ct.sum())
            cell_of = np.repeat(np.arange(tr.size), ct)
            pidx = np.arange(P, dtype=np.int64) - np.repeat(np.cumsum(ct) - ct, ct)
            ptr = tr[cell_of]
            pty = ty[cell_of]
            gid = ptr + first
            w = stream.uniform(gid, g, pty, pidx, 0)
            kids = np.bincount(ptr, weights=model.count_totals(pty, w), minlength=count)
            boom = kids > cfg.explosion_cap
            if boom.any():
                exploded_at[boom & ~exploded] = g + 1
                exploded |= boom
                keep = ~boom[ptr]
                ptr, pty, pidx, gid = ptr[keep], pty[keep], pidx[keep], gid[keep]

            def uniform(idx, slot, gid=gid, pty=pty, pidx=pidx, g=g):
                return stream.uniform(gid[idx], g, pty[idx], pidx[idx], slot)

            owner, ctype = model.draw_offspring(pty, uniform)
            key = ptr[owner] * N + ctype
            uniq, counts = np.unique(key, return_counts=True)
            tr, ty, ct = uniq // N, uniq % N, counts.astype(np.int64)
        if g + 1 in col:
            record(g + 1)
    return dict(alive=alive, totals=totals, exploded=exploded, exploded_at=exploded_at, cells=cells)


def run_trials(cfg: SimConfig, model: BranchingModel) -> TrialRecords:
    """Simulate ``cfg.trials`` independent processes from one type-``start_type`` ancestor."""
    stream = CounterStream(cfg.root_seed)
    starts = list(range(0, cfg.trials, cfg.chunk_size))
    jobs = [(s, min(cfg.chunk_size, cfg.trials - s)) for s in starts]
    if cfg.threads and cfg.threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            parts = list(ex.map(lambda j: _simulate_chunk(model, stream, j[0], j[1], cfg), jobs))
    else:
        parts = [_simulate_chunk(model, stream, s, c, cfg) for s, c in jobs]
    cells = {}
    for n in cfg.record_at:
        cells[n] = tuple(np.concatenate([p["cells"][n][k] for p in parts]) for k in range(3))
    return TrialRecords(
        config=cfg,
        checkpoints=cfg.record_at,
        alive=np.concatenate([p["alive"] for p in parts]),
        totals=np.concatenate([p["totals"] for p in parts]),
        exploded=np.concatenate([p["exploded"] for p in parts]),
        exploded_at=np.concatenate([p["exploded_at"] for p in parts]),
        cells=cells,
    )


@dataclass
class SurvivalEstimate:
    n: int
    trials: int
    survivors: int
    p_hat: float
    stderr: float
    exploded: int = 0
    conditional_mean_total: float | None = None
    conditional_type_means: dict[int, float] = field(default_factory=dict)

    def zscore(self, reference: float) -> float:
        if self.stderr == 0:
            return 0.0 if self.p_hat == reference else math.inf
        return (self.p_hat - reference) / self.stderr

    def agrees_with(self, reference: float, k: float = 3.0) -> bool:
        return abs(self.p_hat - reference) <= k * self.stderr


def estimate_survival(records: TrialRecords, n: int) -> SurvivalEstimate:
    """Binomial estimate of ``P(Z(n) != 0)``; exploded trials count as survivors."""
    k = records.column(n)
    alive = records.alive[:, k]
    T = records.trials
    s = int(alive.sum())
    p = s / T
    est = SurvivalEstimate(n, T, s, p, math.sqrt(p * (1 - p) / T), int(records.exploded.sum()))
    tot = records.totals[:, k]
    ok = alive & (tot > 0)
    if ok.any():
        est.conditional_mean_total = float(tot[ok].mean())
        tr, ty, ct = records.cells[n]
        m = int(ok.sum())
        for j in range(1, 6):
            est.conditional_type_means[j] = float(ct[ty == j].sum() / m)
    return est


@dataclass
class LaplaceEstimate:
    n: int
    start_type: int
    t: float | None
    estimate: float
    ci_low: float
    ci_high: float
    survivors: int
    excluded_exploded: int
    values: np.ndarray = field(repr=False)


def empirical_laplace(records: TrialRecords, n: int, lam, q_n: float, *, t: float | None = None,
                      n_boot: int = 1000, seed: int = 0, level: float = 0.95) -> LaplaceEstimate:
    """Mean of ``exp(-q_n (lambda, Z(n)))`` over trials alive and not exploded at ``n``.

    A scalar ``lam`` applies to every type and doubles as the tag ``t``
    (with ``sum(v) = 1``, ``(v, lambda) = lambda``). The interval is a
    percentile bootstrap.
    """
    k = records.column(n)
    tr, ty, ct = records.cells[n]
    # a trial that explodes after n still has a valid population at n
    gone = records.exploded & (records.exploded_at <= n)
    alive = records.alive[:, k] & ~gone
    m = int(alive.sum())
    if m < MIN_SURVIVORS:
        raise FewSurvivorsError(f"only {m} survivors at n={n}; need {MIN_SURVIVORS}, run more trials")
    if np.ndim(lam) == 0:
        t = float(lam) if t is None else t
        weights = float(lam) * ct
    else:
        lam = np.asarray(lam, dtype=float)
        weights = lam[ty - 1] * ct
    dot = np.bincount(tr, weights=weights, minlength=records.trials)[alive]
    values = np.exp(-q_n * dot)
    lo, hi = _bootstrap_ci(values, n_boot, seed, level)
    return LaplaceEstimate(n, records.config.start_type, t, float(values.mean()), lo, hi, m,
                           int(gone.sum()), values)


def _boot_means(values: np.ndarray, n_boot: int, rng: np.random.Generator) -> np.ndarray:
    idx = rng.integers(0, len(values), size=(n_boot, len(values)))
    return values[idx].mean(axis=1)


def _bootstrap_ci(values, n_boot, seed, level):
    means = _boot_means(values, n_boot, np.random.default_rng(seed))
    a = (1 - level) / 2
    return float(np.quantile(means, a)), float(np.quantile(means, 1 - a))


def laplace_difference_ci(a: LaplaceEstimate, b: LaplaceEstimate, n_boot: int = 1000,
                          seed: int = 0, level: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap interval for ``a.estimate - b.estimate`` (independent samples)."""
    rng = np.random.default_rng(seed)
    diff = _boot_means(a.values, n_boot, rng) - _boot_means(b.values, n_boot, rng)
    q = (1 - level) / 2
    return float(np.quantile(diff, q)), float(np.quantile(diff, 1 - q))


def dichotomy_check(records: TrialRecords, n: int, K: int) -> float:
    """Fraction of all trials with ``1 <= ||Z(n)|| <= K``."""
    tot = records.totals[:, records.column(n)]
    return float(np.mean((tot >= 1) & (tot <= K)))
