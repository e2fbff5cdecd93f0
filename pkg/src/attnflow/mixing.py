"""Mixing-time analysis for walk matrices and learned attention maps.

Covers the exact total-variation mixing time, the forward-move bound
arithmetic (effective forward probability, 2N/p bound, Hoeffding tail,
best-head exceedance), and the Monte-Carlo hitting-time proxy that turns a
dataset of attention records into a per-layer mixing estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graphs import WALK, TransitionMatrix
from .numerics import RngStream, require
from .records import AttentionRecord

NOT_MIXED = -1


@dataclass(frozen=True)
class MixingConfig:
    epsilon: float = 0.25       # TV threshold for the exact mixing time
    t_max: int = 4096           # exact-computation cap
    simulations: int = 500      # walks per (sample, start)
    max_steps: int = 100        # censoring cutoff per walk
    aggregation: str = "mean"   # "mean" or "max" over start positions

    def __post_init__(self):
        require(0.0 < self.epsilon < 1.0, "epsilon must lie in (0, 1)")
        require(self.simulations >= 1, "need at least one simulation")
        require(self.max_steps >= 1, "need at least one step")
        require(self.aggregation in ("mean", "max"),
                f"unknown aggregation {self.aggregation!r}")


@dataclass(frozen=True)
class ForwardProfile:
    """Per-head forward-move probabilities with convex combination weights."""

    probs: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        require(p.ndim == 1 and p.shape == w.shape, "one weight per head")
        require(bool(np.all((p >= 0) & (p <= 1))), "probabilities in [0, 1]")
        require(bool(np.all(w >= 0)) and abs(float(w.sum()) - 1.0) <= 1e-9,
                "weights must be convex")
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "weights", w)

    def best(self) -> float:
        return float(self.probs.max())


@dataclass(frozen=True)
class MixingEstimate:
    """Output of the Monte-Carlo hitting-time proxy."""

    per_start_mean: np.ndarray  # (n,) mean steps per start, across samples
    mean: float                 # dataset mean over (sample, start, sim)
    max: float                  # sample mean of the worst-start average
    std: float                  # across samples, for the chosen aggregation
    censored_fraction: float    # walks that hit the step cutoff
    aggregation: str
    n_samples: int

    def value(self) -> float:
        return self.max if self.aggregation == "max" else self.mean

    def to_json_dict(self) -> dict:
        return {
            "per_start_mean": [float(x) for x in self.per_start_mean],
            "mean": self.mean,
            "max": self.max,
            "std": self.std,
            "censored_fraction": self.censored_fraction,
            "aggregation": self.aggregation,
            "n_samples": self.n_samples,
        }


# ---------------------------------------------------------------------------
# Exact mixing time and bound arithmetic
# ---------------------------------------------------------------------------


def exact_mixing_time(w: TransitionMatrix, cfg: MixingConfig = MixingConfig()) -> int:
    """Smallest t with max_j TV(W^t e_j, sink mass) <= epsilon.

    Returns NOT_MIXED when the cap t_max is reached first.
    """
    require(w.orientation == WALK, "mixing time applies to walk matrices")
    n = w.n
    target = np.zeros((n, 1))
    target[n - 1, 0] = 1.0
    powers = np.eye(n)
    for t in range(cfg.t_max + 1):
        worst = 0.5 * float(np.abs(powers - target).sum(axis=0).max())
        if worst <= cfg.epsilon:
            return t
        powers = w.matrix @ powers
    return NOT_MIXED


def effective_forward_probability(fp: ForwardProfile) -> float:
    """Convex combination of the per-head forward probabilities."""
    return float(np.dot(fp.weights, fp.probs))


def mixing_bound(n: int, p: float) -> float:
    """Forward-move upper bound 2(n - 1)/p on the mixing time."""
    require(p > 0.0, "bound undefined for zero forward probability")
    return 2.0 * (n - 1) / p


def hoeffding_tail(p: float, forward_moves: int) -> float:
    """Tail bound exp(-p N) on making fewer than N forward moves in 2N/p steps."""
    require(0.0 < p <= 1.0, "p must lie in (0, 1]")
    require(forward_moves >= 1, "need at least one forward move")
    return math.exp(-p * forward_moves)


def best_head_exceedance(cdf_at_threshold: float, h: int) -> float:
    """Probability 1 - F^H that the best of H iid heads clears a threshold."""
    require(0.0 <= cdf_at_threshold <= 1.0, "CDF value must lie in [0, 1]")
    require(h >= 1, "need at least one head")
    return 1.0 - cdf_at_threshold ** h


def certified_forward_probability(w: TransitionMatrix) -> float:
    """Column-wise per-step forward certificate: min non-sink (1 - self mass)."""
    require(w.orientation == WALK, "certificate applies to walk matrices")
    if w.n == 1:
        return 1.0
    diag = np.diag(w.matrix)[: w.n - 1]
    return float((1.0 - diag).min())


# ---------------------------------------------------------------------------
# Attention-induced transitions and the Monte-Carlo proxy
# ---------------------------------------------------------------------------


def forward_transition_from_attention(attn: AttentionRecord,
                                      per_head_normalize: bool = False
                                      ) -> TransitionMatrix:
    """Column-normalized convex combination of a record's attention maps.

    Column j becomes the forward distribution from position j: entry (i, j)
    is how much future position i attends to j, renormalized, which leaves
    position n absorbing. per_head_normalize applies the column scaling to
    each head before combining instead of after.
    """
    maps = attn.maps.astype(np.float64)
    if per_head_normalize:
        maps = maps / maps.sum(axis=1, keepdims=True)
    combined = np.einsum("h,hij->ij", attn.weights, maps)
    col_sums = combined.sum(axis=0)
    require(bool(np.all(col_sums > 0)),
            "attention column collapsed to zero mass")
    return TransitionMatrix(combined / col_sums, WALK)


def _column_cdfs(p: np.ndarray) -> np.ndarray:
    """Row j of the result is the CDF of column j's successor distribution."""
    return np.cumsum(p, axis=0).T.copy()


def simulate_hitting_times(w: TransitionMatrix, simulations: int,
                           max_steps: int, rng: np.random.Generator):
    """Run `simulations` walks from every start; returns per-start results.

    Walks step by inverse-CDF sampling on the current column until they
    reach position n or the cutoff. Returns (mean_steps, censored_fraction)
    arrays of shape (n,). Censored walks count max_steps steps.
    """
    n = w.n
    sink = n - 1
    cdfs = _column_cdfs(w.matrix)
    pos = np.repeat(np.arange(n, dtype=np.int64), simulations)
    steps = np.zeros(pos.size, dtype=np.int64)
    active = pos != sink
    for _ in range(max_steps):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        # group walkers by current position so each group samples its own CDF
        order = np.argsort(pos[idx], kind="stable")
        idx = idx[order]
        cur = pos[idx]
        u = rng.random(idx.size)
        nxt = np.empty(idx.size, dtype=np.int64)
        starts = np.flatnonzero(np.r_[True, np.diff(cur) > 0])
        ends = np.r_[starts[1:], cur.size]
        for a, b in zip(starts, ends):
            nxt[a:b] = np.searchsorted(cdfs[cur[a]], u[a:b], side="right")
        np.minimum(nxt, sink, out=nxt)
        pos[idx] = nxt
        steps[idx] += 1
        active[idx] = nxt != sink
    mean_steps = steps.reshape(n, simulations).mean(axis=1)
    censored = active.reshape(n, simulations).mean(axis=1)
    return mean_steps, censored


def mc_hitting_proxy(dataset_attn: Sequence[AttentionRecord],
                     cfg: MixingConfig, rng: RngStream,
                     per_head_normalize: bool = False) -> MixingEstimate:
    """Monte-Carlo hitting-time proxy over a dataset of attention records.

    Per sample: build the forward transition, walk `simulations` times from
    every start, and average. The dataset aggregate follows cfg.aggregation
    (mean over starts by default; max restores the worst-case reading).
    """
    require(len(dataset_attn) > 0, "need at least one attention record")
    n = dataset_attn[0].n
    heads = dataset_attn[0].heads
    for r in dataset_attn:
        require(r.n == n and r.heads == heads,
                "records must share sequence length and head count")
    per_sample_mean = np.empty(len(dataset_attn))
    per_sample_max = np.empty(len(dataset_attn))
    per_start_total = np.zeros(n)
    censored_total = 0.0
    for b, record in enumerate(dataset_attn):
        p = forward_transition_from_attention(record, per_head_normalize)
        gen = rng.child("sample", b).generator()
        mean_steps, censored = simulate_hitting_times(
            p, cfg.simulations, cfg.max_steps, gen)
        per_sample_mean[b] = mean_steps.mean()
        per_sample_max[b] = mean_steps.max()
        per_start_total += mean_steps
        censored_total += censored.mean()
    chosen = per_sample_max if cfg.aggregation == "max" else per_sample_mean
    return MixingEstimate(
        per_start_mean=per_start_total / len(dataset_attn),
        mean=float(per_sample_mean.mean()),
        max=float(per_sample_max.mean()),
        std=float(chosen.std()),
        censored_fraction=float(censored_total / len(dataset_attn)),
        aggregation=cfg.aggregation,
        n_samples=len(dataset_attn),
    )
