import json
import os

import numpy as np
import pytest

from attnflow.cli import (ExperimentPlan, MetricTable, main,
                          run_experiment_plan, stage_analyze,
                          stage_compare_heads, stage_gen_data, stage_train,
                          verify_worked_examples)
from attnflow.graphs import example_two
from attnflow.records import AttentionRecord, save_attention_dump
from attnflow.tasks import load_dataset

SMOKE = dict(samples=40, epochs=2, batch_size=10, seq_len=12, vocab=24,
             d_model=16, mlp_hidden=32, model_layers=2, head_counts=(1, 2),
             layers=(1, 2), analysis_limit=8, simulations=15, max_steps=20,
             horizon=20)


def smoke_plan(out_dir, **overrides):
    return ExperimentPlan(**{**SMOKE, "out_dir": str(out_dir), **overrides})


def tree_bytes(root):
    """Map of relative path -> file bytes for a directory tree."""
    found = {}
    for base, _, files in os.walk(root):
        for name in files:
            path = os.path.join(base, name)
            with open(path, "rb") as fh:
                found[os.path.relpath(path, root)] = fh.read()
    return found


class TestGenDataCommand:
    def test_writes_dataset_and_prints_checksum(self, tmp_path, capsys):
        code = main(["gen-data", "--task", "cycle", "--count", "30",
                     "--n", "12", "--vocab", "24", "--seed", "7",
                     "--out-dir", str(tmp_path)])
        assert code == 0
        out = capsys.readouterr().out
        assert "sha256" in out
        ds = load_dataset(str(tmp_path / "cycle"))
        assert ds.count == 30 and ds.task == "cycle"

    def test_rerun_same_flags_same_checksum(self, tmp_path, capsys):
        args = ["gen-data", "--task", "copy", "--count", "20", "--n", "8",
                "--vocab", "16", "--seed", "3", "--out-dir"]
        main(args + [str(tmp_path / "a")])
        first = capsys.readouterr().out.split()[-1]
        main(args + [str(tmp_path / "b")])
        second = capsys.readouterr().out.split()[-1]
        assert first == second

    def test_default_count_is_5000(self):
        from attnflow.cli import build_parser
        parser = build_parser()
        args = parser.parse_args(["gen-data", "--task", "copy"])
        assert args.count == 5000

    def test_unknown_task_exits_one(self):
        assert main(["gen-data", "--task", "reverse"]) == 1


class TestTrainCommand:
    def test_parameter_count_parity_in_checkpoints(self, tmp_path):
        plan = smoke_plan(tmp_path)
        data = stage_gen_data("copy", plan.samples, plan.seq_len, plan.vocab,
                              plan.seed, str(tmp_path / "data"))
        counts = {}
        for heads in (1, 2):
            ckpt = stage_train(data, heads, plan, str(tmp_path / "models"))
            manifest = json.load(open(ckpt + ".json"))
            counts[heads] = manifest["param_count"]
        assert counts[1] == counts[2]

    def test_log_has_one_entry_per_epoch(self, tmp_path):
        plan = smoke_plan(tmp_path, epochs=3)
        data = stage_gen_data("copy", plan.samples, plan.seq_len, plan.vocab,
                              plan.seed, str(tmp_path / "data"))
        stage_train(data, 2, plan, str(tmp_path / "models"))
        log = json.load(open(tmp_path / "models" / "copy_h2_log.json"))
        assert len(log["epochs"]) == 3
        assert not log["aborted"]

    def test_missing_dataset_exits_one(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "nope"),
                     "--heads", "2"]) == 1


class TestAnalyzeCommand:
    @pytest.fixture(scope="class")
    def trained(self, tmp_path_factory):
        root = tmp_path_factory.mktemp("analyze")
        plan = smoke_plan(root)
        data = stage_gen_data("copy", plan.samples, plan.seq_len, plan.vocab,
                              plan.seed, str(root / "data"))
        ckpt = stage_train(data, 2, plan, str(root / "models"))
        return root, plan, data, ckpt

    def test_mixing_rows_and_provenance(self, trained):
        root, plan, data, ckpt = trained
        table, details = stage_analyze("mixing", ckpt, data, [1, 2],
                                       plan.analysis_config(), str(root))
        assert len(table.rows) == 2
        for row in table.rows:
            assert row["metric"] == "mixing_steps"
            assert row["censored_fraction"] is not None
            assert row["n_samples"] == plan.analysis_limit
        assert set(details) == {1, 2}
        assert len(details[1]["per_start_mean"]) == plan.seq_len
        prov = table.provenance
        assert set(prov) >= {"checkpoint_sha256", "dataset_sha256",
                             "config_hash"}

    def test_fidelity_rows(self, trained):
        root, plan, data, ckpt = trained
        table, _ = stage_analyze("fidelity", ckpt, data, [1],
                                 plan.analysis_config(), str(root))
        row = table.rows[0]
        assert row["metric"] == "phi_min"
        assert 0.0 <= row["mean"] <= 1.0

    def test_compare_heads_rows(self, trained):
        root, plan, data, ckpt = trained
        table, comparisons = stage_compare_heads(ckpt, data, [1, 2],
                                                 plan.analysis_config(),
                                                 str(root))
        metrics = {r["metric"] for r in table.rows}
        assert metrics == {"phi_min_best_head", "phi_min_combined"}
        assert set(comparisons) == {1, 2}

    def test_dumps_are_reused(self, trained, capsys):
        root, plan, data, ckpt = trained
        stage_analyze("mixing", ckpt, data, [1], plan.analysis_config(),
                      str(root), echo=print)
        capsys.readouterr()
        stage_analyze("mixing", ckpt, data, [1], plan.analysis_config(),
                      str(root), echo=print)
        second = capsys.readouterr().out
        assert "dumped attention" not in second


class TestCompareHeadsOnWorkedExample:
    def test_four_node_fixture_dump(self, tmp_path):
        system = example_two()
        maps = np.stack([h.matrix for h in system.heads])
        record = AttentionRecord(maps, system.weights, enforce_causal=False)
        prefix = str(tmp_path / "fixture")
        save_attention_dump([record], "fixture", prefix)
        from attnflow.fidelity import per_head_vs_combined
        from attnflow.records import load_attention_dump
        records, manifest = load_attention_dump(prefix)
        cmp = per_head_vs_combined(records, horizon=100)
        assert cmp.best_value == pytest.approx(0.375, abs=1e-12)
        assert cmp.combined_value == pytest.approx(0.5, abs=1e-12)
        assert cmp.synergy


class TestVerifyExamplesCommand:
    def test_all_checks_pass(self, capsys):
        assert main(["verify-examples"]) == 0
        out = capsys.readouterr().out
        assert "[ok]" in out and "FAIL" not in out

    def test_library_results(self):
        results = verify_worked_examples()
        assert len(results) >= 7
        assert all(ok for _, ok, _ in results)


class TestMetricTable:
    def test_duplicate_rows_rejected(self):
        from attnflow.numerics import ContractViolation
        table = MetricTable()
        table.add("copy", 4, 1, "phi_min", 0.5, 0.1, 10)
        with pytest.raises(ContractViolation):
            table.add("copy", 4, 1, "phi_min", 0.6, 0.1, 10)

    def test_csv_and_json_agree(self, tmp_path):
        table = MetricTable()
        table.add("copy", 4, 1, "mixing_steps", 3.5, 0.25, 10, 0.0)
        table.add("copy", 4, 2, "mixing_steps", 7.25, 1.5, 10, 0.125)
        prefix = str(tmp_path / "t")
        table.write(prefix)
        doc = json.load(open(prefix + ".json"))
        lines = open(prefix + ".csv").read().strip().splitlines()
        assert len(lines) == 3
        for row, line in zip(doc["rows"], lines[1:]):
            cells = line.split(",")
            assert float(cells[4]) == row["mean"]
            assert float(cells[5]) == row["std"]


class TestReportAndPipeline:
    def test_end_to_end_smoke_plan(self, tmp_path):
        plan = smoke_plan(tmp_path / "run", tasks=("copy",))
        paths = run_experiment_plan(plan)
        table = json.load(open(paths["tables"]))
        assert len(table["rows"]) > 0
        fig = open(os.path.join(os.path.dirname(paths["tables"]),
                                "fig_mixing_steps_copy.csv")).read()
        lines = fig.strip().splitlines()
        assert lines[0] == "heads,L1,L2"
        assert len(lines) == 3  # one row per head count

    def test_report_byte_stable_across_reruns(self, tmp_path):
        plan = smoke_plan(tmp_path / "run", tasks=("copy",))
        paths = run_experiment_plan(plan)
        report_dir = os.path.dirname(paths["tables"])
        before = tree_bytes(report_dir)
        # rerunning the report stage over the same tables must be identical
        from attnflow.cli import stage_report
        tables = [str(tmp_path / "run" / "tables" / name)
                  for name in sorted(os.listdir(tmp_path / "run" / "tables"))
                  if name.endswith(".json") and "detail" not in name]
        stage_report(tables, report_dir)
        after = tree_bytes(report_dir)
        assert before == after

    def test_full_replay_reproduces_every_artifact(self, tmp_path):
        plan_a = smoke_plan(tmp_path / "a")
        plan_b = smoke_plan(tmp_path / "b")
        run_experiment_plan(plan_a)
        run_experiment_plan(plan_b)
        a = tree_bytes(tmp_path / "a")
        b = tree_bytes(tmp_path / "b")
        assert set(a) == set(b)
        mismatched = [k for k in a if a[k] != b[k]]
        assert mismatched == []
