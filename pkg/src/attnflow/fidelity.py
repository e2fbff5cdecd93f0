"""Signal-at-sink diffusion fidelity for single heads and head combinations.

The signal a node j delivers to the sink after t averaging steps is entry
(sink, j) of the t-th power of a row-stochastic diffusion matrix. Node
fidelity is the peak of that signal over time, and minimax fidelity is the
worst peak across nodes. Combining heads convexly opens cross-head product
pathways that no single head contains.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graphs import DIFFUSION, HeadSystem, TransitionMatrix, combine_heads
from .numerics import require
from .records import AttentionRecord


@dataclass(frozen=True)
class FidelityProfile:
    per_node_peak: np.ndarray  # (n,) max signal each node ever lands at the sink
    per_node_time: np.ndarray  # (n,) first step attaining the peak
    minimax: float             # min over nodes of the peak signal
    argmin_node: int           # 1-indexed node attaining the minimum
    horizon: int

    def to_json_dict(self) -> dict:
        return {
            "per_node_peak": [float(x) for x in self.per_node_peak],
            "per_node_time": [int(t) for t in self.per_node_time],
            "minimax": self.minimax,
            "argmin_node": self.argmin_node,
            "horizon": self.horizon,
        }


@dataclass(frozen=True)
class FidelitySummary:
    """Dataset-level minimax fidelity: mean with across-sample spread."""

    mean: float
    std: float
    per_sample: np.ndarray
    horizon: int


@dataclass(frozen=True)
class HeadComparison:
    """Individual-head versus combined minimax fidelity over one dataset."""

    per_head: np.ndarray       # (H,) dataset-mean minimax per individual head
    per_head_std: np.ndarray
    best_value: float          # max over heads
    best_head: int             # 0-indexed head attaining it
    combined_value: float
    combined_std: float
    synergy: bool              # combined strictly beats the best single head

    def __post_init__(self):
        require(abs(self.best_value - float(np.max(self.per_head))) <= 1e-12,
                "best value must be the per-head maximum")
        require(self.synergy == (self.combined_value > self.best_value),
                "synergy flag inconsistent with values")

    def to_json_dict(self) -> dict:
        return {
            "per_head": [float(x) for x in self.per_head],
            "per_head_std": [float(x) for x in self.per_head_std],
            "best_value": self.best_value,
            "best_head": self.best_head,
            "combined_value": self.combined_value,
            "combined_std": self.combined_std,
            "synergy": self.synergy,
        }


# ---------------------------------------------------------------------------
# Single-matrix fidelity
# ---------------------------------------------------------------------------


def sink_signal_series(matrix: np.ndarray, horizon: int) -> np.ndarray:
    """Rows (horizon+1, n): the sink row of each matrix power 0..horizon.

    Only the sink row is tracked, so each step is one vector-matrix product.
    """
    m = np.asarray(matrix, dtype=np.float64)
    n = m.shape[0]
    series = np.empty((horizon + 1, n))
    row = np.zeros(n)
    row[n - 1] = 1.0
    series[0] = row
    for t in range(1, horizon + 1):
        row = row @ m
        series[t] = row
    return series


def signal_at_sink(d: TransitionMatrix, t: int) -> np.ndarray:
    """Sink row of the t-th diffusion power; t=0 gives the one-hot at the sink."""
    require(d.orientation == DIFFUSION, "signal is read off a diffusion matrix")
    require(t >= 0, "power must be non-negative")
    return sink_signal_series(d.matrix, t)[t]


def node_fidelity(d: TransitionMatrix, j: int, horizon: int):
    """Peak sink signal of node j over steps 0..horizon and first step attaining it.

    Ties break toward the smallest step.
    """
    require(d.orientation == DIFFUSION, "fidelity is read off a diffusion matrix")
    require(1 <= j <= d.n, f"node {j} outside 1..{d.n}")
    col = sink_signal_series(d.matrix, horizon)[:, j - 1]
    t = int(np.argmax(col))
    return float(col[t]), t


def minimax_fidelity(d: TransitionMatrix, horizon: int) -> FidelityProfile:
    """Per-node peak signals and their minimum over nodes."""
    require(d.orientation == DIFFUSION, "fidelity is read off a diffusion matrix")
    series = sink_signal_series(d.matrix, horizon)
    peaks = series.max(axis=0)
    times = series.argmax(axis=0)
    argmin = int(np.argmin(peaks))
    return FidelityProfile(
        per_node_peak=peaks,
        per_node_time=times.astype(np.int64),
        minimax=float(peaks[argmin]),
        argmin_node=argmin + 1,
        horizon=horizon,
    )


def multi_head_power_expansion_check(heads: HeadSystem, t: int) -> float:
    """Max-abs residual between the combined power and its pathway expansion.

    Expands (sum_h beta_h D_h)^t into the full sum over head sequences of
    weighted ordered products, respecting non-commutativity. Exponential in
    t and the head count, so keep both small.
    """
    require(t >= 1, "expansion needs at least one step")
    combined = combine_heads(heads).matrix
    power = np.linalg.matrix_power(combined, t)
    n = heads.n
    total = np.zeros((n, n))
    for sequence in itertools.product(range(len(heads.heads)), repeat=t):
        product = np.eye(n)
        coeff = 1.0
        for h in sequence:
            product = product @ heads.heads[h].matrix
            coeff *= float(heads.weights[h])
        total += coeff * product
    return float(np.abs(power - total).max())


# ---------------------------------------------------------------------------
# Dataset-level proxies over attention records
# ---------------------------------------------------------------------------


def _check_shared_shape(records: Sequence[AttentionRecord]):
    require(len(records) > 0, "need at least one attention record")
    n, heads = records[0].n, records[0].heads
    for r in records:
        require(r.n == n and r.heads == heads,
                "records must share sequence length and head count")
    return n, heads


def _batched_minimax(matrices: np.ndarray, horizon: int) -> np.ndarray:
    """Per-sample minimax fidelity for a (D, n, n) stack of diffusion matrices."""
    d, n, _ = matrices.shape
    rows = np.zeros((d, n))
    rows[:, n - 1] = 1.0
    peaks = rows.copy()
    for _ in range(horizon):
        rows = np.einsum("bi,bij->bj", rows, matrices)
        np.maximum(peaks, rows, out=peaks)
    return peaks.min(axis=1)


def combined_diffusion(record: AttentionRecord,
                       literal_transposed: bool = False) -> np.ndarray:
    """Head-weighted attention combination read as a diffusion operator.

    Default: rows stay softmax-normalized, matching the in-degree-normalized
    diffusion reading that reproduces the worked examples. The transposed
    variant applies the weights to transposed maps, which flips the roles of
    sender and receiver.
    """
    maps = record.maps.astype(np.float64)
    if literal_transposed:
        maps = maps.transpose(0, 2, 1)
    return np.einsum("h,hij->ij", record.weights, maps)


def dataset_fidelity_proxy(dataset_attn: Sequence[AttentionRecord],
                           horizon: int = 100,
                           literal_transposed: bool = False) -> FidelitySummary:
    """Mean and spread of combined-head minimax fidelity over a dataset."""
    _check_shared_shape(dataset_attn)
    stack = np.stack([combined_diffusion(r, literal_transposed)
                      for r in dataset_attn])
    per_sample = _batched_minimax(stack, horizon)
    return FidelitySummary(
        mean=float(per_sample.mean()),
        std=float(per_sample.std()),
        per_sample=per_sample,
        horizon=horizon,
    )


def per_head_vs_combined(dataset_attn: Sequence[AttentionRecord],
                         horizon: int = 100) -> HeadComparison:
    """Compare each head's own minimax fidelity with the learned combination."""
    n, heads = _check_shared_shape(dataset_attn)
    per_head = np.empty(heads)
    per_head_std = np.empty(heads)
    for h in range(heads):
        stack = np.stack([r.maps[h].astype(np.float64) for r in dataset_attn])
        values = _batched_minimax(stack, horizon)
        per_head[h] = values.mean()
        per_head_std[h] = values.std()
    combined = dataset_fidelity_proxy(dataset_attn, horizon)
    best_head = int(np.argmax(per_head))
    best_value = float(per_head[best_head])
    return HeadComparison(
        per_head=per_head,
        per_head_std=per_head_std,
        best_value=best_value,
        best_head=best_head,
        combined_value=combined.mean,
        combined_std=combined.std,
        synergy=combined.mean > best_value,
    )
