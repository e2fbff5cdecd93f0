import numpy as np
import pytest
from scipy import stats

from attnflow.numerics import ContractViolation
from attnflow.tasks import (Dataset, dataset_checksum, gen_copy, gen_cycle,
                            generate, load_dataset, save_dataset,
                            verify_task_rule)


class TestCopyTask:
    def test_target_equals_input(self):
        ds = gen_copy(50, n=20, vocab=64, seed=1)
        assert np.array_equal(ds.targets, ds.inputs)
        assert verify_task_rule(ds)

    def test_token_histogram_uniform(self):
        # chi-squared two-sided 99% band over all 5000 x 100 draws
        ds = gen_copy(5000, n=100, vocab=256, seed=0)
        counts = np.bincount(ds.inputs.reshape(-1), minlength=256)
        stat = float(((counts - counts.mean()) ** 2 / counts.mean()).sum())
        lo, hi = stats.chi2.ppf([0.005, 0.995], df=255)
        assert lo < stat < hi

    def test_seed_determinism(self):
        a = gen_copy(20, n=10, vocab=16, seed=9)
        b = gen_copy(20, n=10, vocab=16, seed=9)
        assert a.inputs.tobytes() == b.inputs.tobytes()

    def test_seeds_differ(self):
        a = gen_copy(20, n=10, vocab=16, seed=1)
        b = gen_copy(20, n=10, vocab=16, seed=2)
        assert a.inputs.tobytes() != b.inputs.tobytes()


class TestCycleTask:
    def test_three_token_rotation(self):
        ds = Dataset("cycle", np.array([[7, 3, 9]], dtype=np.uint16),
                     np.array([[9, 7, 3]], dtype=np.uint16), vocab=16, seed=0)
        assert verify_task_rule(ds)

    def test_generated_rotation_matches_rule(self):
        ds = gen_cycle(30, n=17, vocab=32, seed=3)
        assert verify_task_rule(ds)
        np.testing.assert_array_equal(ds.targets[:, 0], ds.inputs[:, -1])
        np.testing.assert_array_equal(ds.targets[:, 1:], ds.inputs[:, :-1])

    def test_rotating_n_times_returns_input(self):
        ds = gen_cycle(5, n=11, vocab=8, seed=4)
        rotated = ds.inputs
        for _ in range(ds.n):
            rotated = np.roll(rotated, 1, axis=1)
        np.testing.assert_array_equal(rotated, ds.inputs)

    def test_target_multiset_equals_input_multiset(self):
        ds = gen_cycle(25, n=13, vocab=300, seed=5)
        for i in range(ds.count):
            assert sorted(ds.inputs[i]) == sorted(ds.targets[i])

    def test_copy_and_cycle_share_inputs_only_by_task_stream(self):
        copy = gen_copy(10, n=8, vocab=16, seed=7)
        cycle = gen_cycle(10, n=8, vocab=16, seed=7)
        assert copy.inputs.tobytes() != cycle.inputs.tobytes()


class TestDatasetValidation:
    def test_rejects_unknown_task(self):
        with pytest.raises(ContractViolation):
            generate("reverse", 10)

    def test_rejects_token_outside_vocab(self):
        with pytest.raises(ContractViolation):
            Dataset("copy", np.array([[9]], dtype=np.uint16),
                    np.array([[9]], dtype=np.uint16), vocab=8, seed=0)

    def test_subset(self):
        ds = gen_copy(40, n=6, vocab=16, seed=0)
        sub = ds.subset(15)
        assert sub.count == 15
        np.testing.assert_array_equal(sub.inputs, ds.inputs[:15])


class TestDatasetFiles:
    def test_round_trip(self, tmp_path):
        ds = gen_cycle(12, n=9, vocab=50, seed=11)
        prefix = str(tmp_path / "cycle")
        save_dataset(ds, prefix)
        back = load_dataset(prefix)
        assert back.task == ds.task and back.vocab == ds.vocab
        assert back.seed == ds.seed
        np.testing.assert_array_equal(back.inputs, ds.inputs)
        np.testing.assert_array_equal(back.targets, ds.targets)

    def test_checksum_stable_across_rewrites(self, tmp_path):
        ds = gen_copy(12, n=9, vocab=50, seed=11)
        a = str(tmp_path / "a")
        b = str(tmp_path / "b")
        save_dataset(ds, a)
        save_dataset(ds, b)
        assert dataset_checksum(a) == dataset_checksum(b)

    def test_blob_is_little_endian_uint16(self, tmp_path):
        ds = gen_copy(3, n=4, vocab=1000, seed=2)
        prefix = str(tmp_path / "ds")
        save_dataset(ds, prefix)
        raw = np.fromfile(prefix + ".bin", dtype="<u2")
        np.testing.assert_array_equal(raw[: 12].reshape(3, 4), ds.inputs)
