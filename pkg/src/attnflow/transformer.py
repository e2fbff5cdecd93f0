"""Decoder-only toy Transformer with hand-written backprop and Adam.

Pre-norm RMSNorm blocks with causal multi-head attention and a GELU MLP,
dropout on attention probabilities and MLP hidden activations, learned
absolute positional embeddings, no biases anywhere. The head count divides
a fixed model width, so the parameter count is identical across head
configurations.

Checkpoint format: JSON manifest (config, tensor shapes in declared order,
step, seed) beside a single little-endian float32 blob holding the tensors
concatenated in manifest order.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .numerics import DTYPES, RngStream, require
from .records import AttentionRecord, atomic_write_bytes, atomic_write_text
from .tasks import Dataset

RMSNORM_EPS = 1e-6
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
_GELU_C = math.sqrt(2.0 / math.pi)


class TrainingDiverged(RuntimeError):
    """Raised when a non-finite loss or gradient appears during training."""

    def __init__(self, message, model=None, log=None):
        super().__init__(message)
        self.model = model
        self.log = log


@dataclass(frozen=True)
class ModelConfig:
    heads: int
    layers: int = 4
    d_model: int = 64
    mlp_hidden: int = 128
    vocab: int = 256
    seq_len: int = 100
    dropout: float = 0.1
    seed: int = 0
    precision: int = 32
    # query/key init gets this factor on top of 1/sqrt(fan_in), giving the
    # initial attention logits O(1) contrast; near-zero logits leave the
    # softmax so flat that per-layer attention structure never emerges
    # within a short training budget
    qk_init_scale: float = 4.0

    def __post_init__(self):
        require(self.d_model % self.heads == 0,
                f"head count {self.heads} must divide width {self.d_model}")
        require(0.0 <= self.dropout < 1.0, "dropout must lie in [0, 1)")
        require(self.precision in DTYPES, "precision is 32 or 64")
        require(self.qk_init_scale > 0.0, "qk_init_scale must be positive")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads

    def hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


def param_spec(cfg: ModelConfig):
    """Declared (name, shape, kind) order shared by init and checkpoints."""
    spec = [("tok_emb", (cfg.vocab, cfg.d_model), "embedding"),
            ("pos_emb", (cfg.seq_len, cfg.d_model), "embedding")]
    for layer in range(cfg.layers):
        p = f"L{layer}."
        spec += [
            (p + "attn_norm_g", (cfg.d_model,), "gain"),
            (p + "wq", (cfg.d_model, cfg.d_model), "projection"),
            (p + "wk", (cfg.d_model, cfg.d_model), "projection"),
            (p + "wv", (cfg.d_model, cfg.d_model), "projection"),
            (p + "wo", (cfg.d_model, cfg.d_model), "projection"),
            (p + "mlp_norm_g", (cfg.d_model,), "gain"),
            (p + "w1", (cfg.d_model, cfg.mlp_hidden), "projection"),
            (p + "w2", (cfg.mlp_hidden, cfg.d_model), "projection"),
        ]
    spec += [("final_norm_g", (cfg.d_model,), "gain"),
             ("unembed", (cfg.d_model, cfg.vocab), "projection")]
    return spec


@dataclass
class Microformer:
    cfg: ModelConfig
    params: dict
    adam_m: dict
    adam_v: dict
    step: int = 0

    @property
    def dtype(self):
        return DTYPES[self.cfg.precision]

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "Microformer":
        return Microformer(self.cfg,
                           {k: v.copy() for k, v in self.params.items()},
                           {k: v.copy() for k, v in self.adam_m.items()},
                           {k: v.copy() for k, v in self.adam_v.items()},
                           self.step)


def init_model(cfg: ModelConfig) -> Microformer:
    """Seeded init: N(0, 0.02) embeddings and unembedding, uniform
    +-1/sqrt(fan_in) projections.

    The small unembedding scale keeps untrained logits near-uniform, so the
    initial cross-entropy sits at ln(vocab).
    """
    gen = RngStream(cfg.seed, 0).child("init", cfg.hash()).generator()
    dtype = DTYPES[cfg.precision]
    params = {}
    for name, shape, kind in param_spec(cfg):
        if kind == "embedding" or name == "unembed":
            params[name] = gen.normal(0.0, 0.02, size=shape).astype(dtype)
        elif kind == "gain":
            params[name] = np.ones(shape, dtype=dtype)
        else:
            bound = 1.0 / math.sqrt(shape[0])
            if name.endswith(".wq") or name.endswith(".wk"):
                bound *= cfg.qk_init_scale
            params[name] = gen.uniform(-bound, bound, size=shape).astype(dtype)
    zeros = {name: np.zeros_like(p) for name, p in params.items()}
    return Microformer(cfg, params,
                       {k: v.copy() for k, v in zeros.items()},
                       {k: v.copy() for k, v in zeros.items()})


# ---------------------------------------------------------------------------
# Layer primitives
# ---------------------------------------------------------------------------


def _rmsnorm_fwd(x, g):
    ms = np.mean(x * x, axis=-1, keepdims=True)
    r = np.sqrt(ms + RMSNORM_EPS)
    xh = x / r
    return xh * g, (xh, r, g)


def _rmsnorm_bwd(dy, cache):
    xh, r, g = cache
    dg = (dy * xh).reshape(-1, xh.shape[-1]).sum(axis=0)
    dxh = dy * g
    dx = (dxh - xh * np.mean(dxh * xh, axis=-1, keepdims=True)) / r
    return dx, dg


def _gelu_fwd(x):
    th = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    return 0.5 * x * (1.0 + th), (x, th)


def _gelu_bwd(dy, cache):
    x, th = cache
    dinner = _GELU_C * (1.0 + (3 * 0.044715) * (x * x))
    return dy * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner)


def _dropout_mask(shape, rate, rng):
    """Boolean keep mask; the 1/(1-rate) factor is folded in elsewhere."""
    return rng.random(shape, dtype=np.float32) >= rate


def _split_heads(x, heads):
    """(B, n, d) -> contiguous (B*H, n, hd); batched GEMMs want this layout."""
    b, n, d = x.shape
    return np.ascontiguousarray(
        x.reshape(b, n, heads, d // heads).transpose(0, 2, 1, 3)
    ).reshape(b * heads, n, d // heads)


def _merge_heads(x, batch):
    bh, n, hd = x.shape
    heads = bh // batch
    return x.reshape(batch, heads, n, hd).transpose(0, 2, 1, 3) \
        .reshape(batch, n, heads * hd)


def _causal_bias(n, dtype):
    """Additive mask: 0 on the visible prefix, a huge negative above it."""
    bias = np.zeros((n, n), dtype=dtype)
    bias[np.triu_indices(n, k=1)] = -1e9
    return bias


def _causal_softmax(scores, bias):
    """In-place masked softmax; entries above the diagonal come out exactly 0."""
    scores += bias
    scores -= scores.max(axis=-1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=-1, keepdims=True)
    return scores


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def _forward(model: Microformer, tokens: np.ndarray, train: bool,
             rng: Optional[np.random.Generator], capture: bool,
             need_cache: bool):
    cfg = model.cfg
    p = model.params
    require(tokens.ndim == 2 and tokens.shape[1] <= cfg.seq_len,
            "tokens must be (batch, n) with n <= seq_len")
    require(bool(np.all(tokens < cfg.vocab)), "token outside the vocabulary")
    drop = train and cfg.dropout > 0.0
    if drop:
        require(rng is not None, "dropout in train mode needs a generator")
    batch, n = tokens.shape
    dtype = DTYPES[cfg.precision]
    scale = dtype(1.0 / math.sqrt(cfg.head_dim))
    inv_keep = dtype(1.0 / (1.0 - cfg.dropout)) if drop else dtype(1.0)
    bias = _causal_bias(n, dtype)

    x = p["tok_emb"][tokens] + p["pos_emb"][:n]
    layers_cache = []
    attn_capture = {}
    for layer in range(cfg.layers):
        pre = f"L{layer}."
        a, c_norm1 = _rmsnorm_fwd(x, p[pre + "attn_norm_g"])
        # scale folded into the queries: one small pass instead of an
        # (B*H, n, n) pass on the score tensor
        qs = _split_heads(a @ p[pre + "wq"], cfg.heads)
        qs *= scale
        kh = _split_heads(a @ p[pre + "wk"], cfg.heads)
        vh = _split_heads(a @ p[pre + "wv"], cfg.heads)
        scores = np.matmul(qs, kh.transpose(0, 2, 1))
        probs = _causal_softmax(scores, bias)
        if capture:
            attn_capture[layer + 1] = probs.reshape(batch, cfg.heads, n, n)
        if drop:
            # boolean mask on the big tensor; the 1/keep factor rides on the
            # much smaller value tensor
            mask_a = _dropout_mask(probs.shape, cfg.dropout, rng)
            pd = probs * mask_a
            vh *= inv_keep
        else:
            mask_a, pd = None, probs
        ctx = _merge_heads(np.matmul(pd, vh), batch)
        o = ctx @ p[pre + "wo"]
        x = x + o
        b_, c_norm2 = _rmsnorm_fwd(x, p[pre + "mlp_norm_g"])
        h1 = b_ @ p[pre + "w1"]
        hg, c_gelu = _gelu_fwd(h1)
        if drop:
            mask_m = _dropout_mask(hg.shape, cfg.dropout, rng)
            hdp = hg * mask_m
        else:
            mask_m, hdp = None, hg
        m = hdp @ p[pre + "w2"]
        if drop:
            m *= inv_keep
        x = x + m
        if need_cache:
            layers_cache.append({
                "c_norm1": c_norm1, "qs": qs, "kh": kh, "vh": vh,
                "probs": probs, "mask_a": mask_a, "pd": pd, "ctx": ctx,
                "c_norm2": c_norm2, "c_gelu": c_gelu, "hdp": hdp,
                "mask_m": mask_m,
            })
    f_, c_final = _rmsnorm_fwd(x, p["final_norm_g"])
    logits = f_ @ p["unembed"]
    cache = None
    if need_cache:
        cache = {"tokens": tokens, "layers": layers_cache, "batch": batch,
                 "c_final": c_final, "f": f_, "scale": scale, "drop": drop,
                 "inv_keep": inv_keep}
    return logits, attn_capture if capture else None, cache


def forward(model: Microformer, tokens: np.ndarray, train: bool = False,
            rng: Optional[np.random.Generator] = None,
            capture_attention: bool = False):
    """Logits (batch, n, vocab) plus optional {layer: (batch, H, n, n)} maps.

    Eval mode disables dropout and is deterministic.
    """
    logits, attn, _ = _forward(model, tokens, train, rng, capture_attention,
                               need_cache=False)
    return logits, attn


def _cross_entropy(logits, targets):
    """Mean token cross-entropy and the logits gradient.

    Softmax runs in the model dtype after max-subtraction; the scalar loss
    accumulates in float64. Also returns argmax accuracy since the logits
    are already in hand.
    """
    b, n, v = logits.shape
    flat = logits.reshape(b * n, v).copy()
    flat -= flat.max(axis=1, keepdims=True)
    np.exp(flat, out=flat)
    denom = flat.sum(axis=1, keepdims=True, dtype=np.float64)
    tgt = targets.reshape(b * n)
    rows = np.arange(b * n)
    target_p = flat[rows, tgt].astype(np.float64) / denom[:, 0]
    loss = -float(np.log(target_p).mean())
    dflat = (flat / denom).astype(logits.dtype)
    dflat[rows, tgt] -= 1.0
    dflat /= b * n
    accuracy = float((flat.argmax(axis=1) == tgt).mean())
    return loss, dflat.reshape(b, n, v), accuracy


def loss_and_grads(model: Microformer, inputs: np.ndarray,
                   targets: np.ndarray, train: bool = True,
                   rng: Optional[np.random.Generator] = None,
                   threads: int = 1):
    """Mean cross-entropy, full gradient dict, and token accuracy.

    The model output at position i is trained against target token i; the
    tasks define targets as per-position maps of the input. With threads > 1
    the batch is split into contiguous shards computed in parallel and
    combined by a fixed-order weighted sum, so results stay reproducible
    regardless of scheduling.
    """
    if threads > 1 and inputs.shape[0] >= 2 * threads:
        return _loss_and_grads_sharded(model, inputs, targets, train, rng,
                                       threads)
    return _loss_and_grads_single(model, inputs, targets, train, rng)


def _loss_and_grads_sharded(model, inputs, targets, train, rng, threads):
    from concurrent.futures import ThreadPoolExecutor

    bounds = np.linspace(0, inputs.shape[0], threads + 1).astype(int)
    if rng is None:
        shard_rngs = [None] * threads
    else:
        # derive one counter-based stream per shard from the parent draw
        keys = rng.integers(0, 2 ** 64, size=threads, dtype=np.uint64)
        shard_rngs = [np.random.Generator(np.random.Philox(key=int(k)))
                      for k in keys]
    jobs = []
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for i in range(threads):
            lo, hi = bounds[i], bounds[i + 1]
            jobs.append(pool.submit(_loss_and_grads_single, model,
                                    inputs[lo:hi], targets[lo:hi], train,
                                    shard_rngs[i]))
        outs = [j.result() for j in jobs]
    weights = [(bounds[i + 1] - bounds[i]) / inputs.shape[0]
               for i in range(threads)]
    loss = float(sum(w * o[0] for w, o in zip(weights, outs)))
    accuracy = float(sum(w * o[2] for w, o in zip(weights, outs)))
    grads = {}
    for name in outs[0][1]:
        total = weights[0] * outs[0][1][name]
        for w, o in zip(weights[1:], outs[1:]):
            total += w * o[1][name]
        grads[name] = total.astype(outs[0][1][name].dtype, copy=False)
    return loss, grads, accuracy


def _loss_and_grads_single(model: Microformer, inputs: np.ndarray,
                           targets: np.ndarray, train: bool = True,
                           rng: Optional[np.random.Generator] = None):
    cfg = model.cfg
    p = model.params
    logits, _, cache = _forward(model, inputs, train, rng, capture=False,
                                need_cache=True)
    loss, dlogits, accuracy = _cross_entropy(logits, targets)
    grads = {}
    d = cfg.d_model
    f2d = cache["f"].reshape(-1, d)
    dl2d = dlogits.reshape(-1, cfg.vocab)
    grads["unembed"] = f2d.T @ dl2d
    df = dlogits @ p["unembed"].T
    dx, grads["final_norm_g"] = _rmsnorm_bwd(df, cache["c_final"])

    drop = cache["drop"]
    scale = cache["scale"]
    batch = cache["batch"]
    inv_keep = cache["inv_keep"]
    for layer in reversed(range(cfg.layers)):
        pre = f"L{layer}."
        c = cache["layers"][layer]
        # MLP block: x_out = x_mid + (1/keep) * dropout(gelu(...)) @ w2
        grads[pre + "w2"] = c["hdp"].reshape(-1, cfg.mlp_hidden).T \
            @ dx.reshape(-1, d)
        dhg = dx @ p[pre + "w2"].T
        if drop:
            grads[pre + "w2"] *= inv_keep
            dhg *= inv_keep
            dhg *= c["mask_m"]
        dh1 = _gelu_bwd(dhg, c["c_gelu"])
        b2d = (c["c_norm2"][0] * c["c_norm2"][2]).reshape(-1, d)
        grads[pre + "w1"] = b2d.T @ dh1.reshape(-1, cfg.mlp_hidden)
        db = dh1 @ p[pre + "w1"].T
        dnorm2, grads[pre + "mlp_norm_g"] = _rmsnorm_bwd(db, c["c_norm2"])
        dx = dx + dnorm2
        # attention block: x_mid = x_in + mha(norm(x_in)) @ wo
        # cached vh already carries 1/keep, so dp picks it up via the values
        grads[pre + "wo"] = c["ctx"].reshape(-1, d).T @ dx.reshape(-1, d)
        dctxh = _split_heads(dx @ p[pre + "wo"].T, cfg.heads)
        dvh = np.matmul(c["pd"].transpose(0, 2, 1), dctxh)
        dp = np.matmul(dctxh, c["vh"].transpose(0, 2, 1))
        if drop:
            dvh *= inv_keep
            dp *= c["mask_a"]
        probs = c["probs"]
        ds = dp
        ds -= (dp * probs).sum(axis=-1, keepdims=True)
        ds *= probs
        # the queries carried the scale, so their gradient picks it up; the
        # key gradient reads the scaled queries and needs nothing extra
        dqs = np.matmul(ds, c["kh"])
        dqs *= scale
        dkh = np.matmul(ds.transpose(0, 2, 1), c["qs"])
        dq = _merge_heads(dqs, batch)
        dk = _merge_heads(dkh, batch)
        dv = _merge_heads(dvh, batch)
        a2d = (c["c_norm1"][0] * c["c_norm1"][2]).reshape(-1, d)
        grads[pre + "wq"] = a2d.T @ dq.reshape(-1, d)
        grads[pre + "wk"] = a2d.T @ dk.reshape(-1, d)
        grads[pre + "wv"] = a2d.T @ dv.reshape(-1, d)
        da = dq @ p[pre + "wq"].T + dk @ p[pre + "wk"].T + dv @ p[pre + "wv"].T
        dnorm1, grads[pre + "attn_norm_g"] = _rmsnorm_bwd(da, c["c_norm1"])
        dx = dx + dnorm1

    tokens = cache["tokens"]
    n = tokens.shape[1]
    dtok = np.zeros_like(p["tok_emb"])
    np.add.at(dtok, tokens.reshape(-1), dx.reshape(-1, d))
    grads["tok_emb"] = dtok
    dpos = np.zeros_like(p["pos_emb"])
    dpos[:n] = dx.sum(axis=0)
    grads["pos_emb"] = dpos
    return loss, grads, accuracy


def adam_step(model: Microformer, grads: dict, lr: float = 1e-3) -> None:
    """Standard Adam with bias correction; mutates the model in place."""
    for name in model.params:
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(
                f"non-finite gradient in {name} at step {model.step}")
    model.step += 1
    t = model.step
    bc1 = 1.0 - ADAM_BETA1 ** t
    bc2 = 1.0 - ADAM_BETA2 ** t
    for name, param in model.params.items():
        g = grads[name].astype(param.dtype, copy=False)
        m = model.adam_m[name]
        v = model.adam_v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        param -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainSchedule:
    epochs: int = 200
    batch_size: int = 50
    lr: float = 1e-3
    checkpoint_every: int = 0  # epochs between snapshots; 0 disables


@dataclass
class TrainLog:
    config_hash: str
    seed: int
    epochs: list = field(default_factory=list)  # {epoch, loss, accuracy}
    wall_time_s: float = 0.0
    aborted: bool = False

    def to_json_dict(self) -> dict:
        # wall time is telemetry, not an experiment output; persisting it
        # would break byte-identical replay of the pipeline
        return {"config_hash": self.config_hash, "seed": self.seed,
                "epochs": self.epochs, "aborted": self.aborted}


def train(cfg: ModelConfig, dataset: Dataset,
          schedule: TrainSchedule = TrainSchedule(), threads: int = 1,
          checkpoint_dir: Optional[str] = None):
    """Seeded mini-batch Adam training; returns (model, TrainLog).

    With schedule.checkpoint_every > 0 and a checkpoint_dir, a snapshot is
    written every that-many epochs. Divergence aborts with the state from
    the last completed epoch attached to the raised TrainingDiverged.
    """
    require(dataset.n <= cfg.seq_len, "dataset length exceeds the model")
    require(dataset.vocab <= cfg.vocab, "dataset vocabulary exceeds the model")
    model = init_model(cfg)
    root = RngStream(cfg.seed, 0).child("train", cfg.hash())
    log = TrainLog(config_hash=cfg.hash(), seed=cfg.seed)
    started = time.time()
    last_good = model.copy()
    global_step = 0
    for epoch in range(schedule.epochs):
        perm = root.child("shuffle", epoch).generator().permutation(dataset.count)
        total_loss = 0.0
        total_acc = 0.0
        total_tokens = 0
        for lo in range(0, dataset.count, schedule.batch_size):
            batch = perm[lo:lo + schedule.batch_size]
            rng = root.child("dropout", global_step).generator()
            loss, grads, acc = loss_and_grads(
                model, dataset.inputs[batch], dataset.targets[batch],
                train=True, rng=rng, threads=threads)
            if not math.isfinite(loss):
                log.aborted = True
                log.wall_time_s = time.time() - started
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} step {global_step}",
                    model=last_good, log=log)
            adam_step(model, grads, schedule.lr)
            weight = batch.size * dataset.n
            total_loss += loss * weight
            total_acc += acc * weight
            total_tokens += weight
            global_step += 1
        log.epochs.append({"epoch": epoch,
                           "loss": total_loss / total_tokens,
                           "accuracy": total_acc / total_tokens})
        last_good = model.copy()
        if (checkpoint_dir and schedule.checkpoint_every > 0
                and (epoch + 1) % schedule.checkpoint_every == 0):
            snap = os.path.join(checkpoint_dir,
                                f"epoch{epoch + 1:04d}_h{cfg.heads}")
            save_checkpoint(model, snap)
    log.wall_time_s = time.time() - started
    return model, log


# ---------------------------------------------------------------------------
# Head importance and attention extraction
# ---------------------------------------------------------------------------


def head_importance(model: Microformer, layer: int) -> np.ndarray:
    """Convex head weights from the output projection of one layer.

    The projection's input rows are sliced into one block per head; each
    block's Frobenius norm is the head's raw importance.
    """
    cfg = model.cfg
    require(1 <= layer <= cfg.layers, f"layer {layer} outside 1..{cfg.layers}")
    wo = model.params[f"L{layer - 1}.wo"].astype(np.float64)
    hd = cfg.head_dim
    norms = np.array([
        float(np.sqrt((wo[h * hd:(h + 1) * hd, :] ** 2).sum()))
        for h in range(cfg.heads)
    ])
    total = norms.sum()
    require(total > 0.0, "output projection is identically zero")
    return norms / total


def extract_attention(model: Microformer, inputs: np.ndarray, layer: int,
                      limit: Optional[int] = None, batch_size: int = 50):
    """Eval-mode attention records for one layer over up to `limit` samples."""
    per_layer = extract_attention_layers(model, inputs, [layer], limit,
                                         batch_size)
    return per_layer[layer]


def extract_attention_layers(model: Microformer, inputs: np.ndarray,
                             layers, limit: Optional[int] = None,
                             batch_size: int = 50):
    """One eval pass capturing several layers; returns {layer: [records]}."""
    cfg = model.cfg
    for layer in layers:
        require(1 <= layer <= cfg.layers,
                f"layer {layer} outside 1..{cfg.layers}")
    count = inputs.shape[0] if limit is None else min(limit, inputs.shape[0])
    weights = {layer: head_importance(model, layer) for layer in layers}
    out = {layer: [] for layer in layers}
    for lo in range(0, count, batch_size):
        tokens = inputs[lo:min(lo + batch_size, count)]
        _, attn = forward(model, tokens, train=False, capture_attention=True)
        for layer in layers:
            probs = np.ascontiguousarray(attn[layer].astype(np.float32))
            upper = np.triu(np.ones((probs.shape[2], probs.shape[2]),
                                    dtype=bool), k=1)
            probs[:, :, upper] = 0.0
            for b in range(probs.shape[0]):
                out[layer].append(AttentionRecord(probs[b], weights[layer],
                                                  layer=layer))
    return out


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(model: Microformer, path_prefix: str) -> str:
    spec = param_spec(model.cfg)
    manifest = {
        "format": "microformer-checkpoint",
        "config": asdict(model.cfg),
        "param_count": model.parameter_count(),
        "tensors": [{"name": name, "shape": list(shape)}
                    for name, shape, _ in spec],
        "step": model.step,
        "seed": model.cfg.seed,
    }
    blob = b"".join(model.params[name].astype("<f4").tobytes()
                    for name, _, _ in spec)
    atomic_write_bytes(path_prefix + ".bin", blob)
    atomic_write_text(path_prefix + ".json",
                      json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return path_prefix + ".json"


def cast_model(model: Microformer, precision: int) -> Microformer:
    """Same parameters under a different float width (fresh optimizer state)."""
    require(precision in DTYPES, "precision is 32 or 64")
    from dataclasses import replace
    cfg = replace(model.cfg, precision=precision)
    dtype = DTYPES[precision]
    params = {k: v.astype(dtype) for k, v in model.params.items()}
    zeros = {k: np.zeros_like(v) for k, v in params.items()}
    return Microformer(cfg, params, zeros,
                       {k: v.copy() for k, v in zeros.items()}, model.step)


def load_checkpoint(path_prefix: str) -> Microformer:
    with open(path_prefix + ".json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    cfg = ModelConfig(**manifest["config"])
    dtype = DTYPES[cfg.precision]
    raw = np.fromfile(path_prefix + ".bin", dtype="<f4")
    params = {}
    offset = 0
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape))
        params[entry["name"]] = raw[offset:offset + size].reshape(shape) \
            .astype(dtype)
        offset += size
    require(offset == raw.size, "checkpoint blob does not match its manifest")
    zeros = {name: np.zeros_like(p) for name, p in params.items()}
    return Microformer(cfg, params,
                       {k: v.copy() for k, v in zeros.items()},
                       {k: v.copy() for k, v in zeros.items()},
                       step=manifest["step"])


def checkpoint_checksum(path_prefix: str) -> str:
    digest = hashlib.sha256()
    with open(path_prefix + ".json", "rb") as fh:
        digest.update(fh.read())
    with open(path_prefix + ".bin", "rb") as fh:
        digest.update(fh.read())
    return digest.hexdigest()
