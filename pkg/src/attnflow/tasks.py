"""Synthetic sequence datasets: copy (identity) and cycle (rotate right by one).

Inputs are uniform iid tokens. File format: a JSON header {task, count, n,
vocab, seed} beside a raw little-endian uint16 blob holding all inputs then
all targets, sample-major.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .numerics import RngStream, require
from .records import atomic_write_bytes, atomic_write_text

TASKS = ("copy", "cycle")


@dataclass(frozen=True)
class Dataset:
    task: str
    inputs: np.ndarray   # (count, n) uint16
    targets: np.ndarray  # (count, n) uint16
    vocab: int
    seed: int

    def __post_init__(self):
        require(self.task in TASKS, f"unknown task {self.task!r}")
        require(self.inputs.shape == self.targets.shape,
                "inputs and targets must align")
        require(self.inputs.dtype == np.uint16, "tokens are stored as uint16")
        require(bool(np.all(self.inputs < self.vocab))
                and bool(np.all(self.targets < self.vocab)),
                "token outside the vocabulary")

    @property
    def count(self) -> int:
        return self.inputs.shape[0]

    @property
    def n(self) -> int:
        return self.inputs.shape[1]

    def subset(self, limit: int) -> "Dataset":
        limit = min(limit, self.count)
        return Dataset(self.task, self.inputs[:limit], self.targets[:limit],
                       self.vocab, self.seed)


def _uniform_inputs(count, n, vocab, seed, task):
    gen = RngStream(seed, 0).child("taskdata", task, count, n, vocab).generator()
    return gen.integers(0, vocab, size=(count, n), dtype=np.uint16)


def gen_copy(count: int, n: int = 100, vocab: int = 256,
             seed: int = 0) -> Dataset:
    """Target equals the input."""
    require(count >= 1, "need at least one sample")
    inputs = _uniform_inputs(count, n, vocab, seed, "copy")
    return Dataset("copy", inputs, inputs.copy(), vocab, seed)


def gen_cycle(count: int, n: int = 100, vocab: int = 256,
              seed: int = 0) -> Dataset:
    """Target is the input rotated right by one position."""
    require(count >= 1, "need at least one sample")
    inputs = _uniform_inputs(count, n, vocab, seed, "cycle")
    return Dataset("cycle", inputs, np.roll(inputs, 1, axis=1), vocab, seed)


def generate(task: str, count: int, n: int = 100, vocab: int = 256,
             seed: int = 0) -> Dataset:
    require(task in TASKS, f"unknown task {task!r}")
    return gen_copy(count, n, vocab, seed) if task == "copy" \
        else gen_cycle(count, n, vocab, seed)


def verify_task_rule(ds: Dataset) -> bool:
    """Exhaustively check the task rule on every sample."""
    if ds.task == "copy":
        return bool(np.array_equal(ds.targets, ds.inputs))
    return bool(np.array_equal(ds.targets, np.roll(ds.inputs, 1, axis=1)))


def save_dataset(ds: Dataset, path_prefix: str) -> str:
    header = {"task": ds.task, "count": ds.count, "n": ds.n,
              "vocab": ds.vocab, "seed": ds.seed}
    blob = ds.inputs.astype("<u2").tobytes() + ds.targets.astype("<u2").tobytes()
    atomic_write_bytes(path_prefix + ".bin", blob)
    atomic_write_text(path_prefix + ".json",
                      json.dumps(header, sort_keys=True, indent=1) + "\n")
    return path_prefix + ".json"


def load_dataset(path_prefix: str) -> Dataset:
    with open(path_prefix + ".json", "r", encoding="utf-8") as fh:
        header = json.load(fh)
    count, n = header["count"], header["n"]
    raw = np.fromfile(path_prefix + ".bin", dtype="<u2")
    require(raw.size == 2 * count * n, "dataset blob does not match its header")
    inputs = raw[: count * n].reshape(count, n).astype(np.uint16)
    targets = raw[count * n:].reshape(count, n).astype(np.uint16)
    return Dataset(header["task"], inputs, targets, header["vocab"],
                   header["seed"])


def dataset_checksum(path_prefix: str) -> str:
    """SHA-256 over the header and token blob together."""
    digest = hashlib.sha256()
    with open(path_prefix + ".json", "rb") as fh:
        digest.update(fh.read())
    with open(path_prefix + ".bin", "rb") as fh:
        digest.update(fh.read())
    return digest.hexdigest()
