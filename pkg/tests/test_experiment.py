import itertools
from dataclasses import replace

import numpy as np
import numpy.testing as npt
import pytest

from fformation import experiment as ex
from fformation import synth
from fformation.metrics import ConfusionMatrix, accumulate, normalize
from fformation.neuralnet import class_weights
from fformation.sampling import Task, WindowSpec, build_dataset

FAST = ex.TrainConfig(epochs=3, batch_size=32, hidden_size=4, n_layers=2, dtype="float64")


@pytest.fixture(scope="module")
def small_session():
    cfg = synth.SynthConfig(seed=3, n_participants=6, session_s=120, max_window_s=4,
                            mean_group_lifetime_s=40)
    return synth.generate(cfg).to_session()


@pytest.fixture(scope="module")
def binary_ds(small_session):
    return build_dataset(small_session, WindowSpec(4), "fusion", Task.BINARY)


def pairs(n):
    return [(f"p{i:02d}", f"q{i:02d}") for i in range(n)]


class TestLargestRemainder:
    @pytest.mark.parametrize("n,expected", [(10, [8, 1, 1]), (15, [12, 2, 1]), (66, [53, 7, 6]), (11, [9, 1, 1])])
    def test_counts(self, n, expected):
        assert ex.largest_remainder(n, (0.8, 0.1, 0.1)) == expected

    def test_bad_ratios(self):
        with pytest.raises(ex.SplitError):
            ex.largest_remainder(10, (0.5, 0.1, 0.1))


class TestSplitPairs:
    def test_ten_pairs(self):
        plan = ex.split_pairs(pairs(10), seed=4)
        assert (len(plan.train_pairs), len(plan.val_pairs), len(plan.test_pairs)) == (8, 1, 1)

    def test_deterministic_and_order_free(self):
        ps = pairs(30)
        a = ex.split_pairs(ps, seed=9)
        b = ex.split_pairs(list(reversed(ps)), seed=9)
        assert a == b
        assert ex.split_pairs(ps, seed=10) != a

    def test_disjoint_and_covering_over_seeds(self):
        ps = pairs(45)
        for seed in range(100):
            plan = ex.split_pairs(ps, seed=seed)
            sets = [set(plan.train_pairs), set(plan.val_pairs), set(plan.test_pairs)]
            for x, y in itertools.combinations(sets, 2):
                assert not x & y
            assert set.union(*sets) == set(ps)

    def test_too_few_pairs(self):
        with pytest.raises(ex.SplitError, match="at least 10"):
            ex.split_pairs(pairs(9))

    def test_redraw_then_fail(self, caplog):
        ps = pairs(10)
        # a single pair holds every positive, so some subset always lacks positives
        counts = {p: np.array([5, 0]) for p in ps}
        counts[ps[0]] = np.array([5, 3])
        with pytest.raises(ex.SplitError, match="after 5 attempts"):
            ex.split_pairs(ps, seed=0, class_counts=counts, max_retries=5)
        assert "no positive samples" in caplog.text

    def test_redraw_succeeds(self):
        ps = pairs(20)
        counts = {p: np.array([5, 1 if i < 4 else 0]) for i, p in enumerate(ps)}
        plan = ex.split_pairs(ps, seed=1, class_counts=counts, max_retries=200)
        for subset in plan.subsets.values():
            assert sum(counts[p][1] for p in subset) > 0

    def test_participant_disjoint(self):
        people = [f"p{i:02d}" for i in range(20)]
        ps = list(itertools.combinations(people, 2))
        plan = ex.split_pairs(ps, seed=2, participant_disjoint=True)
        members = [{m for p in s for m in p} for s in plan.subsets.values()]
        for x, y in itertools.combinations(members, 2):
            assert not x & y

    def test_route_every_sample_once(self, binary_ds):
        plan = ex.split_pairs(binary_ds.unique_pairs, seed=0)
        routes = plan.route(binary_ds)
        allidx = np.concatenate(list(routes.values()))
        assert sorted(allidx.tolist()) == list(range(len(binary_ds)))
        test_pairs = {binary_ds.pairs[i] for i in routes["test"]}
        assert test_pairs == set(plan.test_pairs)


class TestSelectEpoch:
    def test_argmin(self):
        assert ex.select_epoch([0.9, 0.4, 0.6]) == 2

    def test_earliest_tie(self):
        assert ex.select_epoch([0.5, 0.3, 0.3, 0.4]) == 2


class TestFit:
    def test_selected_epoch_has_lowest_val_loss(self, binary_ds):
        plan = ex.split_pairs(binary_ds.unique_pairs, seed=0,
                              class_counts=ex.pair_class_counts(binary_ds))
        run = ex.train_model(binary_ds, plan, FAST, seed=0)
        assert len(run.val_losses) == FAST.epochs
        assert all(run.selected_val_loss <= v for v in run.val_losses)
        assert run.test["n"] == len(plan.route(binary_ds)["test"])

    def test_restores_selected_parameters(self, binary_ds):
        plan = ex.split_pairs(binary_ds.unique_pairs, seed=0,
                              class_counts=ex.pair_class_counts(binary_ds))
        run = ex.train_model(binary_ds, plan, FAST, seed=1)
        from fformation.neuralnet import evaluate_loss

        va = plan.route(binary_ds)["val"]
        loss, _ = evaluate_loss(binary_ds.data[va], binary_ds.labels[va], run.params, run.weights)
        assert loss == pytest.approx(run.selected_val_loss, rel=1e-12)

    def test_deterministic(self, binary_ds):
        plan = ex.split_pairs(binary_ds.unique_pairs, seed=0,
                              class_counts=ex.pair_class_counts(binary_ds))
        a = ex.train_model(binary_ds, plan, FAST, seed=5)
        b = ex.train_model(binary_ds, plan, FAST, seed=5)
        assert a.val_losses == b.val_losses
        assert a.selected_epoch == b.selected_epoch
        npt.assert_array_equal(a.test["probs"], b.test["probs"])

    def test_weights_from_training_subset_only(self, binary_ds):
        plan = ex.split_pairs(binary_ds.unique_pairs, seed=0,
                              class_counts=ex.pair_class_counts(binary_ds))
        routes = plan.route(binary_ds)
        tr, te = routes["train"], routes["test"]
        run = ex.train_model(binary_ds, plan, FAST, seed=2)
        npt.assert_allclose(run.weights, class_weights(np.bincount(binary_ds.labels[tr], minlength=2)))
        # flipping every test label changes weights computed over all labels, never the model
        altered = binary_ds.subset(np.arange(len(binary_ds)))
        altered.membership[te] = 1 - altered.membership[te]
        all_w = class_weights(np.bincount(binary_ds.labels, minlength=2))
        all_w_altered = class_weights(np.bincount(altered.labels, minlength=2))
        assert not np.allclose(all_w, all_w_altered)
        run2 = ex.train_model(altered, plan, FAST, seed=2)
        for k in run.params.arrays:
            npt.assert_array_equal(run.params.arrays[k], run2.params.arrays[k])

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reported(self):
        X = np.random.default_rng(0).normal(size=(6, 5, 1))
        y = np.array([0, 1] * 3)
        cfg = ex.TrainConfig(epochs=5, hidden_size=2, n_layers=1, dtype="float64", learning_rate=1e305)
        with pytest.raises(ex.TrainingDiverged, match="epoch"):
            ex.fit(X, y, 2, cfg)

    def test_training_only_without_validation(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(8, 5, 2))
        y = np.array([0, 1] * 4)
        run = ex.fit(X, y, 2, ex.TrainConfig(epochs=4, hidden_size=3, n_layers=1, dtype="float64"))
        assert run.val_losses == run.train_losses


class TestClipGradients:
    def test_rescales_to_limit(self):
        g = {"a": np.array([3.0, 0.0]), "b": np.array([[4.0]])}
        assert ex.clip_gradients(g, 1.0) == pytest.approx(5.0)
        npt.assert_allclose(g["a"], [0.6, 0.0])
        npt.assert_allclose(g["b"], [[0.8]])

    def test_small_gradients_untouched(self):
        g = {"a": np.array([0.3, -0.4], dtype=np.float32)}
        ex.clip_gradients(g, 1.0)
        npt.assert_array_equal(g["a"], np.array([0.3, -0.4], dtype=np.float32))

    def test_loose_limit_matches_unclipped(self):
        rng = np.random.default_rng(1)
        X, y = rng.normal(size=(12, 6, 2)), np.array([0, 1] * 6)
        base = ex.TrainConfig(epochs=3, hidden_size=3, n_layers=1, dtype="float64")
        a = ex.fit(X, y, 2, base)
        b = ex.fit(X, y, 2, replace(base, clip_norm=1e9))
        c = ex.fit(X, y, 2, replace(base, clip_norm=1e-3))
        assert a.train_losses == b.train_losses
        assert a.train_losses != c.train_losses


class TestAccumulateThenNormalize:
    def test_orders_disagree(self):
        # run 1: 1 sample of class 0, wrong; run 2: 99 samples of class 0, all right
        r1 = ConfusionMatrix(2, [[0, 1], [0, 1]])
        r2 = ConfusionMatrix(2, [[99, 0], [0, 1]])
        acc = accumulate([r1, r2]).normalized()[0]
        avg = (normalize(r1.counts)[0] + normalize(r2.counts)[0]) / 2
        npt.assert_allclose(acc[0], [0.99, 0.01])
        npt.assert_allclose(avg[0], [0.5, 0.5])

    def test_report_uses_accumulated_counts(self):
        runs = [{"index": 0, "status": "ok", "confusion": [[0, 1], [0, 1]]},
                {"index": 1, "status": "ok", "confusion": [[99, 0], [0, 1]]}]
        report = ex.RepetitionReport(Task.BINARY, 2, {}, runs)
        npt.assert_allclose(report.normalized_confusion[0], [0.99, 0.01])
        npt.assert_allclose(report.normalized_confusion.sum(axis=1), 1.0, atol=1e-9)


class TestRunRepetitions:
    def test_binary_report(self, binary_ds):
        cfg = ex.ExperimentConfig(repetitions=3, seed_base=10, train=FAST)
        report = ex.run_repetitions(binary_ds, cfg)
        assert [r["seed"] for r in report.runs] == [10, 11, 12]
        assert len(report.aucs) == 3
        agg = report.aggregate()
        assert agg["mean_auc"] == pytest.approx(np.mean(report.aucs))
        assert agg["std_auc"] == pytest.approx(np.std(report.aucs, ddof=1))
        assert not report.partial
        for r in report.runs:
            assert r["n_train"] + r["n_val"] + r["n_test"] == len(binary_ds)

    def test_joint_report_rows_sum_to_one(self, small_session):
        ds = build_dataset(small_session, WindowSpec(4), "fusion", Task.JOINT4)
        report = ex.run_repetitions(ds, ex.ExperimentConfig(repetitions=2, train=FAST))
        norm = np.array(report.aggregate()["normalized_confusion"])
        assert norm.shape == (4, 4)
        for i, row in enumerate(norm):
            if i not in report.aggregate()["empty_rows"]:
                assert row.sum() == pytest.approx(1.0, abs=1e-9)
        assert report.accumulated_confusion.sum() == sum(r["n_test"] for r in report.runs)

    def test_needs_two(self, binary_ds):
        with pytest.raises(ValueError, match="at least 2"):
            ex.run_repetitions(binary_ds, ex.ExperimentConfig(train=FAST), n=1)

    def test_same_seed_base_same_report(self, binary_ds):
        cfg = ex.ExperimentConfig(repetitions=2, seed_base=3, train=FAST)
        a = ex.run_repetitions(binary_ds, cfg).metrics_view()
        b = ex.run_repetitions(binary_ds, cfg).metrics_view()
        assert a == b

    def test_parallel_matches_sequential(self, binary_ds):
        cfg = ex.ExperimentConfig(repetitions=2, seed_base=7, train=FAST)
        seq = ex.run_repetitions(binary_ds, cfg).metrics_view()
        par = ex.run_repetitions(binary_ds, cfg, jobs=2).metrics_view()
        assert seq == par

    def test_failed_run_flags_partial(self, binary_ds, monkeypatch):
        real = ex.train_model

        def flaky(dataset, plan, config, seed=0):
            if seed == 1:
                raise ex.TrainingDiverged("loss nan at epoch 1")
            return real(dataset, plan, config, seed)

        monkeypatch.setattr(ex, "train_model", flaky)
        report = ex.run_repetitions(binary_ds, ex.ExperimentConfig(repetitions=3, train=FAST))
        assert report.failed == [1]
        assert report.partial
        assert len(report.aucs) == 2
        assert "nan" in report.runs[1]["error"]

    def test_checkpoints_and_round_trip(self, binary_ds, tmp_path):
        cfg = ex.ExperimentConfig(repetitions=2, train=FAST)
        report = ex.run_repetitions(binary_ds, cfg, checkpoint_dir=tmp_path)
        assert (tmp_path / "rep00.npz").exists()
        back = ex.RepetitionReport.from_dict(report.to_dict())
        assert back.metrics_view() == report.metrics_view()
        assert ex.ExperimentConfig.from_dict(cfg.to_dict()) == cfg
