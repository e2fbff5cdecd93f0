"""Per-sample attention records and the on-disk attention dump format.

A record holds one layer's post-softmax causal attention maps for one input
sample, shape (H, n, n), plus the layer's convex head-importance weights.

Dump format: a JSON manifest {task, layer, H, n, count, head_weights} next
to a raw little-endian float32 blob of shape (count, H, n, n).
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .numerics import require

ROW_SUM_TOL = 1e-4  # float32 softmax rows over n=100 accumulate this much


@dataclass(frozen=True)
class AttentionRecord:
    maps: np.ndarray     # (H, n, n) row-stochastic causal attention
    weights: np.ndarray  # (H,) convex head importances
    layer: int = 1       # 1-indexed layer the maps came from
    enforce_causal: bool = True

    def __post_init__(self):
        maps = np.asarray(self.maps)
        require(maps.ndim == 3 and maps.shape[1] == maps.shape[2],
                f"attention maps must be (H, n, n), got {maps.shape}")
        w = np.asarray(self.weights, dtype=np.float64)
        require(w.shape == (maps.shape[0],), "one weight per head required")
        require(bool(np.all(w >= 0)) and abs(float(w.sum()) - 1.0) <= 1e-9,
                "head weights must be convex")
        rows = maps.sum(axis=2, dtype=np.float64)
        require(bool(np.all(np.abs(rows - 1.0) <= ROW_SUM_TOL)),
                "attention rows must sum to 1")
        if self.enforce_causal:
            # handcrafted worked-example systems may carry a backward edge;
            # they opt out, model-extracted records never do
            upper = np.triu(np.ones((maps.shape[1], maps.shape[1]),
                                    dtype=bool), k=1)
            require(bool(np.all(maps[:, upper] == 0)),
                    "attention must be causal (zero above the diagonal)")
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "weights", w)

    @property
    def heads(self) -> int:
        return self.maps.shape[0]

    @property
    def n(self) -> int:
        return self.maps.shape[1]


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write-temp-then-rename so partially written artifacts never appear."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def save_attention_dump(records: Sequence[AttentionRecord], task: str,
                        path_prefix: str) -> str:
    """Write records to <prefix>.json + <prefix>.bin; returns the json path."""
    require(len(records) > 0, "cannot dump an empty record list")
    first = records[0]
    for r in records:
        require(r.maps.shape == first.maps.shape and r.layer == first.layer,
                "all dumped records must share shape and layer")
    manifest = {
        "task": task,
        "layer": first.layer,
        "H": first.heads,
        "n": first.n,
        "count": len(records),
        "head_weights": [[float(w) for w in r.weights] for r in records],
    }
    blob = np.stack([r.maps for r in records]).astype("<f4")
    atomic_write_bytes(path_prefix + ".bin", blob.tobytes())
    atomic_write_text(path_prefix + ".json",
                      json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return path_prefix + ".json"


def load_attention_dump(path_prefix: str):
    """Read a dump back; returns (records, manifest)."""
    with open(path_prefix + ".json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    count, heads, n = manifest["count"], manifest["H"], manifest["n"]
    raw = np.fromfile(path_prefix + ".bin", dtype="<f4")
    require(raw.size == count * heads * n * n,
            "attention blob size does not match its manifest")
    maps = raw.reshape(count, heads, n, n)
    # fixture dumps of the worked examples may be acausal, so loading is
    # lenient; extraction from a model always produces causal maps
    records = [
        AttentionRecord(maps[b], np.asarray(manifest["head_weights"][b]),
                        layer=manifest["layer"], enforce_causal=False)
        for b in range(count)
    ]
    return records, manifest
