"""Shared numeric kernels: deterministic RNG streams, dense-matrix helpers,
and the small probability operations used by every analysis module.

Precision convention: 32-bit arrays are for training throughput, 64-bit for
analysis math. Functions preserve the dtype of their inputs unless noted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DTYPES = {32: np.float32, 64: np.float64}

# probability-sum tolerance per precision mode
PROB_TOL = {32: 1e-5, 64: 1e-9}


class ContractViolation(ValueError):
    """A caller broke an operation's precondition."""


def require(condition: bool, message: str) -> None:
    if not condition:
        raise ContractViolation(message)


def assert_finite(arr: np.ndarray, what: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ContractViolation(f"{what} contains NaN or Inf")
    return arr


# ---------------------------------------------------------------------------
# Deterministic randomness
# ---------------------------------------------------------------------------

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def _fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def stream_id(*parts) -> int:
    """Stable 64-bit id from labels and indices.

    Unlike builtin hash(), the value does not depend on the process or on
    PYTHONHASHSEED, so streams replay across runs and machines.
    """
    return _fnv1a64("/".join(str(p) for p in parts).encode("utf-8"))


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream addressed by (seed, stream).

    Identical (seed, stream) pairs produce identical draw sequences
    regardless of scheduling, which keeps parallel Monte Carlo replayable.
    """

    seed: int
    stream: int = 0

    def child(self, *parts) -> "RngStream":
        """Derive a disjoint sub-stream, e.g. per (sample, position, sim)."""
        return RngStream(self.seed, stream_id(self.stream, *parts))

    def generator(self) -> np.random.Generator:
        key = ((self.seed & _MASK64) << 64) | (self.stream & _MASK64)
        return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# Dense-matrix and probability kernels
# ---------------------------------------------------------------------------


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Contract-checked matrix product.

    Summation order is the fixed BLAS blocking, so results are reproducible
    run-to-run for a given precision and thread configuration.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    require(a.ndim == 2 and b.ndim == 2, "matmul expects 2-d operands")
    require(a.shape[1] == b.shape[0],
            f"dimension mismatch: {a.shape} @ {b.shape}")
    require(a.dtype == b.dtype,
            f"precision modes differ: {a.dtype} vs {b.dtype}")
    out = a @ b
    assert_finite(out, "matmul result")
    return out


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Total variation distance between two distributions, 0.5 * sum |p - q|."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    require(p.ndim == 1 and p.shape == q.shape,
            f"length mismatch: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


def check_prob_vector(p: np.ndarray, precision: int = 64) -> np.ndarray:
    p = np.asarray(p)
    require(p.ndim == 1, "probability vector must be 1-d")
    require(bool(np.all(p >= 0)), "probability vector has negative entries")
    require(abs(float(p.sum()) - 1.0) <= PROB_TOL[precision],
            f"probability vector sums to {float(p.sum())}, not 1")
    return p


def one_hot(index: int, n: int) -> np.ndarray:
    e = np.zeros(n, dtype=np.float64)
    e[index] = 1.0
    return e


def sample_categorical(weights: np.ndarray, rng: np.random.Generator) -> int:
    """Draw one index proportionally to weights via inverse CDF.

    Uses a single uniform draw. All-zero weights signal a walk state with no
    successor and are rejected.
    """
    w = np.asarray(weights, dtype=np.float64)
    require(w.ndim == 1 and w.size > 0, "weights must be a non-empty vector")
    require(bool(np.all(w >= 0)), "weights must be non-negative")
    total = float(w.sum())
    require(total > 0.0, "all-zero weights: state has no successor")
    cum = np.cumsum(w)
    u = rng.random() * total
    # side='right' skips zero-weight plateaus, so indices with weight 0 are
    # never selected
    return int(min(np.searchsorted(cum, u, side="right"), w.size - 1))


def softmax_causal_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax restricted to the causal prefix j <= i.

    Entries above the diagonal are exactly zero; each row sums to 1.
    Stabilized by subtracting the row max over the visible prefix.
    """
    m = np.asarray(logits)
    require(m.ndim == 2 and m.shape[0] == m.shape[1],
            "causal softmax expects a square matrix")
    n = m.shape[0]
    visible = np.tril(np.ones((n, n), dtype=bool))
    masked = np.where(visible, m, -np.inf)
    z = masked - masked.max(axis=1, keepdims=True)
    e = np.exp(z)
    e[~visible] = 0.0
    out = e / e.sum(axis=1, keepdims=True)
    assert_finite(out, "causal softmax")
    return out.astype(m.dtype, copy=False) if m.dtype in (np.float32, np.float64) \
        else out
