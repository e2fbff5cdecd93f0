"""Command-line pipeline: data generation, training, analysis, reporting.

Subcommands: gen-data, train, analyze, compare-heads, verify-examples,
report. Exit codes: 0 success, 1 contract violation, 2 verification
failure. A JSON plan file passed via --config supplies flag defaults;
explicit flags win. All artifact writes are atomic (write-temp, rename).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import fidelity as fid
from . import graphs, mixing, tasks
from . import transformer as tf
from .numerics import ContractViolation, RngStream, matmul, require, tv_distance
from .records import (atomic_write_text, load_attention_dump,
                      save_attention_dump)

METRICS = ("mixing_steps", "phi_min", "phi_min_best_head", "phi_min_combined")
CSV_COLUMNS = ("task", "heads", "layer", "metric", "mean", "std",
               "n_samples", "censored_fraction")


class VerificationFailure(RuntimeError):
    """A reproduction check of a published quantity did not hold."""


# ---------------------------------------------------------------------------
# Metric tables
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else str(value)


@dataclass
class MetricTable:
    rows: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def add(self, task, heads, layer, metric, mean, std, n_samples,
            censored_fraction=None):
        require(metric in METRICS, f"unknown metric {metric!r}")
        key = (task, heads, layer, metric)
        require(all((r["task"], r["heads"], r["layer"], r["metric"]) != key
                    for r in self.rows), f"duplicate row {key}")
        self.rows.append({
            "task": task, "heads": int(heads), "layer": int(layer),
            "metric": metric, "mean": float(mean), "std": float(std),
            "n_samples": int(n_samples),
            "censored_fraction": None if censored_fraction is None
            else float(censored_fraction),
        })

    def sorted_rows(self):
        return sorted(self.rows, key=lambda r: (r["task"], r["heads"],
                                                r["layer"], r["metric"]))

    def to_json(self) -> str:
        return json.dumps({"rows": self.sorted_rows(),
                           "provenance": self.provenance},
                          sort_keys=True, indent=1) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.sorted_rows():
            writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
        return buf.getvalue()

    @staticmethod
    def from_json_file(path: str) -> "MetricTable":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return MetricTable(rows=doc["rows"], provenance=doc["provenance"])

    def write(self, path_prefix: str) -> str:
        atomic_write_text(path_prefix + ".json", self.to_json())
        atomic_write_text(path_prefix + ".csv", self.to_csv())
        return path_prefix + ".json"


# ---------------------------------------------------------------------------
# Experiment plan
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentPlan:
    """Full grid: tasks x head counts, then per-layer analyses and a report."""

    tasks: tuple = ("copy", "cycle")
    head_counts: tuple = (1, 4, 8, 16)
    layers: tuple = (1, 2, 3, 4)
    samples: int = 1000
    epochs: int = 50
    batch_size: int = 50
    lr: float = 1e-3
    seq_len: int = 100
    vocab: int = 256
    d_model: int = 64
    mlp_hidden: int = 128
    model_layers: int = 4
    dropout: float = 0.1
    analysis_limit: int = 200
    simulations: int = 500
    max_steps: int = 100
    horizon: int = 100
    epsilon: float = 0.25
    aggregation: str = "mean"
    seed: int = 0
    out_dir: str = "runs/reduced"

    def __post_init__(self):
        require(len(self.tasks) > 0 and len(self.head_counts) > 0
                and len(self.layers) > 0, "plan lists must be non-empty")

    def to_json_dict(self) -> dict:
        # out_dir is where the artifacts live, not an experiment parameter;
        # keeping it out makes plans relocatable and replays byte-identical
        doc = asdict(self)
        doc.pop("out_dir")
        return doc

    def hash(self) -> str:
        payload = json.dumps(self.to_json_dict(), sort_keys=True,
                             default=list)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    @staticmethod
    def from_json_file(path: str) -> "ExperimentPlan":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        doc = {k: tuple(v) if isinstance(v, list) else v
               for k, v in doc.items()}
        return ExperimentPlan(**doc)

    def model_config(self, heads: int) -> tf.ModelConfig:
        return tf.ModelConfig(heads=heads, layers=self.model_layers,
                              d_model=self.d_model,
                              mlp_hidden=self.mlp_hidden, vocab=self.vocab,
                              seq_len=self.seq_len, dropout=self.dropout,
                              seed=self.seed)

    def analysis_config(self) -> dict:
        return {"analysis_limit": self.analysis_limit,
                "simulations": self.simulations,
                "max_steps": self.max_steps, "horizon": self.horizon,
                "epsilon": self.epsilon, "aggregation": self.aggregation,
                "seed": self.seed}


def _analysis_hash(analysis: dict) -> str:
    payload = json.dumps(analysis, sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Shared stage helpers (used by both the CLI and the pipeline driver)
# ---------------------------------------------------------------------------


def _say(echo, message):
    if echo:
        echo(message)


def stage_gen_data(task, count, n, vocab, seed, out_dir, echo=None) -> str:
    os.makedirs(out_dir, exist_ok=True)
    prefix = os.path.join(out_dir, task)
    if not os.path.exists(prefix + ".json"):
        ds = tasks.generate(task, count, n, vocab, seed)
        require(tasks.verify_task_rule(ds), "generated data violates the task")
        tasks.save_dataset(ds, prefix)
    checksum = tasks.dataset_checksum(prefix)
    _say(echo, f"dataset {prefix}.json sha256 {checksum}")
    return prefix


def stage_train(dataset_prefix, heads, plan: ExperimentPlan, out_dir,
                echo=None, precision: int = 32, threads: int = 1) -> str:
    os.makedirs(out_dir, exist_ok=True)
    ds = tasks.load_dataset(dataset_prefix).subset(plan.samples)
    prefix = os.path.join(out_dir, f"{ds.task}_h{heads}")
    cfg = replace(plan.model_config(heads), precision=precision)
    if os.path.exists(prefix + ".json"):
        with open(prefix + ".json", "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        if manifest["config"] == asdict(cfg):
            _say(echo, f"checkpoint {prefix}.json exists, skipping training")
            return prefix
        _say(echo, f"checkpoint {prefix}.json has a different config, "
                   f"retraining")
    schedule = tf.TrainSchedule(epochs=plan.epochs,
                                batch_size=plan.batch_size, lr=plan.lr)
    try:
        model, log = tf.train(cfg, ds, schedule, threads=threads)
    except tf.TrainingDiverged as exc:
        if exc.model is None:
            raise
        tf.save_checkpoint(exc.model, prefix + "_aborted")
        atomic_write_text(prefix + "_log.json",
                          json.dumps(exc.log.to_json_dict(), sort_keys=True,
                                     indent=1) + "\n")
        raise
    tf.save_checkpoint(model, prefix)
    atomic_write_text(prefix + "_log.json",
                      json.dumps(log.to_json_dict(), sort_keys=True,
                                 indent=1) + "\n")
    last = log.epochs[-1]
    _say(echo, f"trained {prefix}.json "
               f"loss {last['loss']:.4f} acc {last['accuracy']:.4f} "
               f"params {model.parameter_count()} "
               f"({log.wall_time_s:.0f}s)")
    return prefix


def stage_dump_attention(checkpoint_prefix, dataset_prefix, layers, limit,
                         out_dir, echo=None, precision=None) -> dict:
    """Materialize per-layer attention dumps; reuse files already present."""
    os.makedirs(out_dir, exist_ok=True)
    ckpt_tag = tf.checkpoint_checksum(checkpoint_prefix)[:12]
    ds = tasks.load_dataset(dataset_prefix)
    limit = min(limit, ds.count)
    prefixes = {}
    missing = []
    for layer in layers:
        prefix = os.path.join(out_dir, f"{ckpt_tag}_L{layer}_c{limit}")
        prefixes[layer] = prefix
        if not os.path.exists(prefix + ".json"):
            missing.append(layer)
    if missing:
        model = tf.load_checkpoint(checkpoint_prefix)
        if precision is not None and precision != model.cfg.precision:
            model = tf.cast_model(model, precision)
        per_layer = tf.extract_attention_layers(model, ds.inputs, missing,
                                                limit=limit)
        for layer in missing:
            save_attention_dump(per_layer[layer], ds.task, prefixes[layer])
            _say(echo, f"dumped attention {prefixes[layer]}.json")
    return prefixes


def _provenance(checkpoint_prefix, dataset_prefix, analysis: dict) -> dict:
    return {
        "checkpoint_sha256": tf.checkpoint_checksum(checkpoint_prefix),
        "dataset_sha256": tasks.dataset_checksum(dataset_prefix),
        "config_hash": _analysis_hash(analysis),
        "analysis": analysis,
    }


def stage_analyze(metric, checkpoint_prefix, dataset_prefix, layers,
                  analysis: dict, out_dir, echo=None,
                  literal_alg2: bool = False,
                  per_head_normalize: bool = False, precision=None):
    """Run the mixing or fidelity proxy per layer over dumped attention.

    Returns (MetricTable, {layer: estimate-or-summary detail dict}).
    """
    require(metric in ("mixing", "fidelity"), f"unknown analysis {metric!r}")
    dumps = stage_dump_attention(checkpoint_prefix, dataset_prefix, layers,
                                 analysis["analysis_limit"],
                                 os.path.join(out_dir, "dumps"), echo,
                                 precision)
    table = MetricTable()
    table.provenance = _provenance(checkpoint_prefix, dataset_prefix, analysis)
    details = {}
    for layer in layers:
        records, manifest = load_attention_dump(dumps[layer])
        task, heads = manifest["task"], manifest["H"]
        if metric == "mixing":
            cfg = mixing.MixingConfig(epsilon=analysis["epsilon"],
                                      simulations=analysis["simulations"],
                                      max_steps=analysis["max_steps"],
                                      aggregation=analysis["aggregation"])
            rng = RngStream(analysis["seed"], 0).child(
                "mc", task, heads, layer)
            est = mixing.mc_hitting_proxy(records, cfg, rng,
                                          per_head_normalize)
            details[layer] = est.to_json_dict()
            table.add(task, heads, layer, "mixing_steps", est.value(),
                      est.std, est.n_samples, est.censored_fraction)
            _say(echo, f"mixing {task} h{heads} L{layer}: "
                       f"{est.value():.4f} +- {est.std:.4f} "
                       f"(censored {est.censored_fraction:.3f})")
        else:
            summary = fid.dataset_fidelity_proxy(records, analysis["horizon"],
                                                 literal_transposed=literal_alg2)
            details[layer] = {"mean": summary.mean, "std": summary.std,
                              "horizon": summary.horizon}
            table.add(task, heads, layer, "phi_min", summary.mean,
                      summary.std, len(records))
            _say(echo, f"fidelity {task} h{heads} L{layer}: "
                       f"{summary.mean:.4f} +- {summary.std:.4f}")
    return table, details


def stage_compare_heads(checkpoint_prefix, dataset_prefix, layers,
                        analysis: dict, out_dir, echo=None, precision=None):
    """Best-individual-head versus combined minimax fidelity per layer."""
    dumps = stage_dump_attention(checkpoint_prefix, dataset_prefix, layers,
                                 analysis["analysis_limit"],
                                 os.path.join(out_dir, "dumps"), echo,
                                 precision)
    table = MetricTable()
    table.provenance = _provenance(checkpoint_prefix, dataset_prefix, analysis)
    comparisons = {}
    for layer in layers:
        records, manifest = load_attention_dump(dumps[layer])
        task, heads = manifest["task"], manifest["H"]
        cmp = fid.per_head_vs_combined(records, analysis["horizon"])
        comparisons[layer] = cmp
        table.add(task, heads, layer, "phi_min_best_head", cmp.best_value,
                  float(cmp.per_head_std[cmp.best_head]), len(records))
        table.add(task, heads, layer, "phi_min_combined", cmp.combined_value,
                  cmp.combined_std, len(records))
        _say(echo, f"compare {task} h{heads} L{layer}: best "
                   f"{cmp.best_value:.4f} combined {cmp.combined_value:.4f} "
                   f"synergy {cmp.synergy}")
    return table, comparisons


def write_comparisons(comparisons: dict, path: str) -> None:
    doc = {str(layer): cmp.to_json_dict()
           for layer, cmp in comparisons.items()}
    atomic_write_text(path, json.dumps(doc, sort_keys=True, indent=1) + "\n")


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

_FAMILIES = {
    "mixing": ("mixing_steps",),
    "fidelity": ("phi_min",),
    "compare": ("phi_min_best_head", "phi_min_combined"),
}


def _family_of(metric: str) -> str:
    for family, members in _FAMILIES.items():
        if metric in members:
            return family
    raise ContractViolation(f"unknown metric {metric!r}")


def stage_report(table_paths, out_dir, echo=None) -> dict:
    """Merge metric tables into per-family CSVs and figure-ready pivots."""
    require(len(table_paths) > 0, "report needs at least one table")
    rows = []
    provenance = {}
    for path in sorted(table_paths):
        table = MetricTable.from_json_file(path)
        rows.extend(table.rows)
        provenance[os.path.basename(path)] = table.provenance
    os.makedirs(out_dir, exist_ok=True)
    outputs = {}
    by_family = {}
    for row in rows:
        by_family.setdefault(_family_of(row["metric"]), []).append(row)
    for family, family_rows in sorted(by_family.items()):
        family_rows.sort(key=lambda r: (r["task"], r["heads"], r["layer"],
                                        r["metric"]))
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in family_rows:
            writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
        path = os.path.join(out_dir, f"table_{family}.csv")
        atomic_write_text(path, buf.getvalue())
        outputs[f"table_{family}"] = path
        # figure pivot: one table per (task, metric), heads down, layers across
        for metric in _FAMILIES[family]:
            for task in sorted({r["task"] for r in family_rows}):
                cells = {(r["heads"], r["layer"]): r["mean"]
                         for r in family_rows
                         if r["task"] == task and r["metric"] == metric}
                if not cells:
                    continue
                head_values = sorted({h for h, _ in cells})
                layer_values = sorted({l for _, l in cells})
                buf = io.StringIO()
                writer = csv.writer(buf, lineterminator="\n")
                writer.writerow(["heads"] + [f"L{l}" for l in layer_values])
                for h in head_values:
                    writer.writerow([h] + [_fmt(cells.get((h, l)))
                                           for l in layer_values])
                path = os.path.join(out_dir, f"fig_{metric}_{task}.csv")
                atomic_write_text(path, buf.getvalue())
                outputs[f"fig_{metric}_{task}"] = path
    merged = {"rows": sorted(rows, key=lambda r: (r["task"], r["heads"],
                                                  r["layer"], r["metric"])),
              "provenance": provenance}
    path = os.path.join(out_dir, "tables.json")
    atomic_write_text(path, json.dumps(merged, sort_keys=True, indent=1) + "\n")
    outputs["tables"] = path
    _say(echo, f"report written to {out_dir}")
    return outputs


# ---------------------------------------------------------------------------
# Worked-example verification
# ---------------------------------------------------------------------------


def verify_worked_examples():
    """Bit-exact checks of the worked 3- and 4-node systems plus the
    sink-stationarity sweeps. Returns a list of (name, ok, detail)."""
    results = []

    def check(name, ok, detail=""):
        results.append((name, bool(ok), detail))

    ex1 = graphs.example_one()
    d1, d2 = (h.matrix for h in ex1.heads)
    printed_d1 = np.array([[1, 0, 0], [0.5, 0.5, 0], [0, 0, 1]])
    printed_d2 = np.array([[1, 0, 0], [0, 1, 0], [0, 0.5, 0.5]])
    check("three-node head matrices", np.array_equal(d1, printed_d1)
          and np.array_equal(d2, printed_d2))
    cross = matmul(d2, d1)[2, 0]
    check("three-node two-step cross term", cross == 0.25, f"got {cross}")
    gen = np.random.default_rng(7)
    ok = True
    for _ in range(10):
        b1 = float(gen.uniform(0.05, 0.95))
        system = graphs.example_one(beta=(b1, 1.0 - b1))
        combined = graphs.combine_heads(system).matrix
        value = (combined @ combined)[2, 0]
        ok = ok and abs(value - b1 * (1.0 - b1) * 0.25) <= 1e-12
    check("three-node combined square matches beta1*beta2/4", ok)

    ex2 = graphs.example_two()
    e1, e2 = (h.matrix for h in ex2.heads)
    printed_e1 = np.array([[1, 0, 0, 0], [0.5, 0.5, 0, 0],
                           [0, 0.5, 0.5, 0], [0, 0, 0.5, 0.5]])
    printed_e2 = np.array([[0.5, 0.5, 0, 0], [0, 1, 0, 0],
                           [0.5, 0, 0.5, 0], [0, 0, 0.5, 0.5]])
    check("four-node head matrices", np.array_equal(e1, printed_e1)
          and np.array_equal(e2, printed_e2))
    combined = graphs.combine_heads(ex2)
    printed_mix = np.array([[0.75, 0.25, 0, 0], [0.25, 0.75, 0, 0],
                            [0.25, 0.25, 0.5, 0], [0, 0, 0.5, 0.5]])
    check("four-node combined matrix", np.array_equal(combined.matrix,
                                                      printed_mix))
    mins = [fid.minimax_fidelity(h, 100).minimax for h in ex2.heads]
    multi = fid.minimax_fidelity(combined, 100).minimax
    check("four-node per-head minimax 0.375",
          all(abs(m - 0.375) <= 1e-12 for m in mins), f"got {mins}")
    check("four-node combined minimax 0.5", abs(multi - 0.5) <= 1e-12,
          f"got {multi}")

    sweep_gen = RngStream(20250808, 0).child("verify-sweep").generator()
    target_ok = True
    for i in range(200):
        n = int(sweep_gen.integers(2, 13))
        q = 0.2 if i % 2 == 0 else 0.5
        g = graphs.random_feedforward_graph(n, q, sweep_gen)
        w = graphs.walk_matrix(g)
        power = np.linalg.matrix_power(w.matrix, 4096)
        worst = max(tv_distance(power[:, j],
                                np.eye(n)[n - 1]) for j in range(n))
        target_ok = target_ok and worst <= 1e-9
    check("single-head sink stationarity sweep", target_ok)

    combo_ok = True
    for _ in range(100):
        n = int(sweep_gen.integers(2, 13))
        heads = tuple(graphs.walk_matrix(
            graphs.random_feedforward_graph(n, 0.5, sweep_gen))
            for _ in range(3))
        weights = sweep_gen.dirichlet(np.ones(3))
        combined = graphs.combine_heads(graphs.HeadSystem(heads, weights))
        power = np.linalg.matrix_power(combined.matrix, 4096)
        worst = max(tv_distance(power[:, j],
                                np.eye(n)[n - 1]) for j in range(n))
        combo_ok = combo_ok and worst <= 1e-9
    check("multi-head sink stationarity sweep", combo_ok)
    return results


# ---------------------------------------------------------------------------
# Full pipeline driver
# ---------------------------------------------------------------------------


def run_experiment_plan(plan: ExperimentPlan, echo=None,
                        threads: int = 1) -> dict:
    """Grid run: data, training, mixing/fidelity/compare analyses, report.

    Stages whose outputs already exist are reused, so interrupted runs
    resume. Thread-sharded gradients only change the training wall time,
    never the artifact schema. Returns a dict of artifact paths.
    """
    out = plan.out_dir
    analysis = plan.analysis_config()
    paths = {"plan": os.path.join(out, "plan.json")}
    os.makedirs(out, exist_ok=True)
    atomic_write_text(paths["plan"],
                      json.dumps(plan.to_json_dict(), sort_keys=True,
                                 default=list, indent=1) + "\n")
    def table_is_current(prefix, ckpt):
        """A metric table resumes only if it came from this checkpoint and
        analysis configuration."""
        if not os.path.exists(prefix + ".json"):
            return False
        provenance = MetricTable.from_json_file(prefix + ".json").provenance
        return (provenance.get("checkpoint_sha256")
                == tf.checkpoint_checksum(ckpt)
                and provenance.get("config_hash") == _analysis_hash(analysis))

    table_paths = []
    for task in plan.tasks:
        data_prefix = stage_gen_data(task, plan.samples, plan.seq_len,
                                     plan.vocab, plan.seed,
                                     os.path.join(out, "data"), echo)
        paths[f"data_{task}"] = data_prefix
        for heads in plan.head_counts:
            ckpt = stage_train(data_prefix, heads, plan,
                               os.path.join(out, "models"), echo,
                               threads=threads)
            paths[f"model_{task}_h{heads}"] = ckpt
            for metric in ("mixing", "fidelity"):
                prefix = os.path.join(out, "tables",
                                      f"{metric}_{task}_h{heads}")
                if not table_is_current(prefix, ckpt):
                    os.makedirs(os.path.dirname(prefix), exist_ok=True)
                    table, details = stage_analyze(metric, ckpt, data_prefix,
                                                   plan.layers, analysis,
                                                   out, echo)
                    atomic_write_text(prefix + "_detail.json",
                                      json.dumps({str(k): v for k, v
                                                  in details.items()},
                                                 sort_keys=True,
                                                 indent=1) + "\n")
                    table.write(prefix)
                paths[f"{metric}_{task}_h{heads}"] = prefix + ".json"
                table_paths.append(prefix + ".json")
            if heads > 1:
                prefix = os.path.join(out, "tables",
                                      f"compare_{task}_h{heads}")
                if not table_is_current(prefix, ckpt):
                    table, comparisons = stage_compare_heads(
                        ckpt, data_prefix, plan.layers, analysis, out, echo)
                    write_comparisons(
                        comparisons,
                        os.path.join(out, "tables",
                                     f"compare_{task}_h{heads}_detail.json"))
                    table.write(prefix)
                paths[f"compare_{task}_h{heads}"] = prefix + ".json"
                table_paths.append(prefix + ".json")
    report_paths = stage_report(table_paths, os.path.join(out, "report"), echo)
    paths.update(report_paths)
    return paths


# ---------------------------------------------------------------------------
# Argument parsing and dispatch
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ContractViolation(message)


def _add_common(sub):
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out-dir", default="runs/cli")
    sub.add_argument("--config", default=None,
                     help="JSON file supplying flag defaults")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="attnflow",
                     description="attention graph analysis pipeline")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-data", parents=[], help="generate a task dataset")
    p.add_argument("--task", choices=tasks.TASKS, required=True)
    p.add_argument("--count", type=int, default=5000)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--vocab", type=int, default=256)
    _add_common(p)

    p = subs.add_parser("train", help="train a toy transformer")
    p.add_argument("--data", required=True, help="dataset path prefix")
    p.add_argument("--heads", type=int, required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--samples", type=int, default=None,
                   help="train on the first N samples only")
    p.add_argument("--layers", type=int, default=4)
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--mlp-hidden", type=int, default=128)
    p.add_argument("--seq-len", type=int, default=100)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--precision", type=int, choices=(32, 64), default=32)
    _add_common(p)

    for name in ("analyze", "compare-heads"):
        p = subs.add_parser(name, help=f"run the {name} stage")
        if name == "analyze":
            p.add_argument("--metric", choices=("mixing", "fidelity"),
                           required=True)
            p.add_argument("--literal-alg2", action="store_true",
                           help="use the transposed combination variant")
            p.add_argument("--per-head-normalize", action="store_true",
                           help="column-normalize heads before combining")
        p.add_argument("--checkpoint", required=True,
                       help="checkpoint path prefix")
        p.add_argument("--data", required=True, help="dataset path prefix")
        p.add_argument("--layers", type=int, nargs="+", default=[1, 2, 3, 4])
        p.add_argument("--sims", type=int, default=500)
        p.add_argument("--max-steps", type=int, default=100)
        p.add_argument("--horizon", type=int, default=100)
        p.add_argument("--epsilon", type=float, default=0.25)
        p.add_argument("--aggregation", choices=("mean", "max"),
                       default="mean")
        p.add_argument("--limit", type=int, default=200,
                       help="analysis subset size")
        p.add_argument("--full-dataset", action="store_true")
        p.add_argument("--table-name", default=None,
                       help="output table name under <out-dir>/tables")
        p.add_argument("--precision", type=int, choices=(32, 64),
                       default=None,
                       help="cast the checkpoint before extraction")
        _add_common(p)

    p = subs.add_parser("verify-examples",
                        help="bit-exact worked-example checks")
    _add_common(p)

    p = subs.add_parser("report", help="merge metric tables into reports")
    p.add_argument("--tables", nargs="+", required=True,
                   help="metric table JSON files")
    _add_common(p)
    return parser


def _analysis_from_args(args) -> dict:
    limit = args.limit
    if args.full_dataset:
        ds = tasks.load_dataset(args.data)
        limit = ds.count
    return {"analysis_limit": limit, "simulations": args.sims,
            "max_steps": args.max_steps, "horizon": args.horizon,
            "epsilon": args.epsilon, "aggregation": args.aggregation,
            "seed": args.seed}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "config", None):
            with open(args.config, "r", encoding="utf-8") as fh:
                parser.set_defaults(**json.load(fh))
            args = parser.parse_args(argv)
        echo = print
        if args.command == "gen-data":
            stage_gen_data(args.task, args.count, args.n, args.vocab,
                           args.seed, args.out_dir, echo)
        elif args.command == "train":
            ds = tasks.load_dataset(args.data)
            plan = ExperimentPlan(
                tasks=(ds.task,), head_counts=(args.heads,),
                samples=args.samples or ds.count, epochs=args.epochs,
                batch_size=args.batch, lr=args.lr, seq_len=args.seq_len,
                vocab=ds.vocab, d_model=args.d_model,
                mlp_hidden=args.mlp_hidden, model_layers=args.layers,
                dropout=args.dropout, seed=args.seed, out_dir=args.out_dir)
            stage_train(args.data, args.heads, plan, args.out_dir, echo,
                        precision=args.precision)
        elif args.command == "analyze":
            analysis = _analysis_from_args(args)
            table, details = stage_analyze(
                args.metric, args.checkpoint, args.data, args.layers,
                analysis, args.out_dir, echo,
                literal_alg2=args.literal_alg2,
                per_head_normalize=args.per_head_normalize,
                precision=args.precision)
            name = args.table_name or f"{args.metric}_adhoc"
            prefix = os.path.join(args.out_dir, "tables", name)
            os.makedirs(os.path.dirname(prefix), exist_ok=True)
            atomic_write_text(prefix + "_detail.json",
                              json.dumps({str(k): v for k, v
                                          in details.items()},
                                         sort_keys=True, indent=1) + "\n")
            echo(f"table {table.write(prefix)}")
        elif args.command == "compare-heads":
            analysis = _analysis_from_args(args)
            table, comparisons = stage_compare_heads(
                args.checkpoint, args.data, args.layers, analysis,
                args.out_dir, echo, precision=args.precision)
            name = args.table_name or "compare_adhoc"
            prefix = os.path.join(args.out_dir, "tables", name)
            os.makedirs(os.path.dirname(prefix), exist_ok=True)
            write_comparisons(comparisons, prefix + "_detail.json")
            echo(f"table {table.write(prefix)}")
        elif args.command == "verify-examples":
            failures = 0
            for name, ok, detail in verify_worked_examples():
                status = "ok" if ok else "FAIL"
                suffix = f" ({detail})" if detail and not ok else ""
                echo(f"[{status}] {name}{suffix}")
                failures += 0 if ok else 1
            if failures:
                raise VerificationFailure(f"{failures} example check(s) failed")
        elif args.command == "report":
            stage_report(args.tables, args.out_dir, echo)
        return 0
    except VerificationFailure as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return 2
    except (ContractViolation, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
