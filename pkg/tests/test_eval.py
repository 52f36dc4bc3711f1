"""Metric oracles and the comparison harness contract.

AUC cases are checked against brute-force pairwise counting: both sides
reduce to sums of small integers and halves, so the comparison is exact."""

import csv

import numpy as np
import pytest

from icegan import data, eval as ev, synth, training


def brute_auc(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos, neg = scores[labels == 1], scores[labels == 0]
    wins = np.sum(pos[:, None] > neg[None, :])
    ties = np.sum(pos[:, None] == neg[None, :])
    return (wins + 0.5 * ties) / (pos.size * neg.size)


TINY_SYNTH = synth.SynthConfig(n_records=4000, icing_fraction=0.1,
                               invalid_fraction=0.02, seed=0)
TINY_TWO_STAGE = training.TwoStageConfig(
    gan=training.GanTrainConfig(epochs=2),
    stage1=training.ClassifierTrainConfig(epochs=2),
    stage2_epochs=1)
TINY_TRANSFER = training.TransferConfig(epochs=2, warmup_epochs=1)


class TestConfusion:
    def test_threshold_convention(self):
        c = ev.confusion([0.5, 0.49, 0.9, 0.1], [1, 1, 0, 0])
        # score exactly at the threshold predicts icing
        assert (c.tp, c.fn, c.fp, c.tn) == (1, 1, 1, 1)

    def test_class_totals(self):
        c = ev.ConfusionCounts(tp=8, fn=2, fp=1, tn=99)
        assert c.n_fault == 10 and c.n_normal == 100

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            ev.confusion([], [])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ev.confusion([0.5], [1, 0])

    def test_nonbinary_labels_rejected(self):
        with pytest.raises(ValueError, match="binary"):
            ev.confusion([0.5, 0.5], [0, 2])

    def test_negative_counts_rejected(self):
        with pytest.raises(ValueError):
            ev.ConfusionCounts(tp=-1, fn=0, fp=0, tn=0)


class TestRocAuc:
    def test_frozen_example(self):
        curve = ev.roc_auc([0.9, 0.7, 0.8, 0.3], [1, 1, 0, 0])
        assert curve.auc == 0.75

    def test_matches_bruteforce_with_ties(self):
        rng = np.random.default_rng(0)
        scores = np.round(rng.random(300), 1)  # heavy ties
        labels = rng.integers(0, 2, 300)
        curve = ev.roc_auc(scores, labels)
        assert curve.auc == brute_auc(scores, labels)

    def test_matches_bruteforce_continuous(self):
        rng = np.random.default_rng(1)
        scores = rng.normal(size=500)
        labels = rng.integers(0, 2, 500)
        assert ev.roc_auc(scores, labels).auc == brute_auc(scores, labels)

    def test_trapezoid_cross_check(self):
        rng = np.random.default_rng(2)
        scores = np.round(rng.random(400), 2)
        labels = rng.integers(0, 2, 400)
        curve = ev.roc_auc(scores, labels)
        assert abs(ev.trapezoid_auc(curve) - curve.auc) <= 1e-12

    def test_curve_endpoints_and_monotonicity(self):
        rng = np.random.default_rng(3)
        curve = ev.roc_auc(rng.random(100), rng.integers(0, 2, 100))
        assert curve.fpr[0] == 0.0 and curve.tpr[0] == 0.0
        assert curve.fpr[-1] == 1.0 and curve.tpr[-1] == 1.0
        assert np.all(np.diff(curve.fpr) >= 0)
        assert np.all(np.diff(curve.tpr) >= 0)
        assert np.all(np.diff(curve.thresholds) < 0)

    def test_perfect_and_inverted(self):
        assert ev.roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]).auc == 1.0
        assert ev.roc_auc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]).auc == 0.0

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="both classes"):
            ev.roc_auc([0.1, 0.9], [1, 1])

    def test_nonfinite_scores_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            ev.roc_auc([0.5, np.nan], [1, 0])


class TestCompetitionScore:
    def test_frozen_example(self):
        # 100 normals, 10 faults, 2 misses, 1 false alarm
        c = ev.ConfusionCounts(tp=8, fn=2, fp=1, tn=99)
        assert ev.competition_score(c) == 0.908

    def test_all_faults_flagged_but_ten_false_alarms(self):
        c = ev.ConfusionCounts(tp=10, fn=0, fp=10, tn=90)
        assert ev.competition_score(c) == pytest.approx(0.1, abs=1e-12)

    def test_swapped_convention_changes_value(self):
        c = ev.ConfusionCounts(tp=8, fn=2, fp=1, tn=99)
        swapped = ev.competition_score(c, convention="swapped")
        a = 0.1
        assert swapped == pytest.approx(1 - a * 2 / 10 - (1 - a) * 1 / 100, abs=1e-12)
        assert swapped != ev.competition_score(c)

    def test_zero_class_total_rejected(self):
        with pytest.raises(ValueError):
            ev.competition_score(ev.ConfusionCounts(tp=0, fn=0, fp=1, tn=9))
        with pytest.raises(ValueError):
            ev.competition_score(ev.ConfusionCounts(tp=1, fn=1, fp=0, tn=0))

    def test_unknown_convention_rejected(self):
        c = ev.ConfusionCounts(tp=1, fn=1, fp=1, tn=1)
        with pytest.raises(ValueError, match="convention"):
            ev.competition_score(c, convention="other")


class TestMcc:
    def test_frozen_example(self):
        c = ev.ConfusionCounts(tp=90, fn=20, fp=10, tn=80)
        expect = 7000.0 / np.sqrt(110.0 * 100.0 * 100.0 * 90.0)
        assert ev.mcc(c) == pytest.approx(expect, abs=1e-15)

    def test_perfect_and_inverted(self):
        assert ev.mcc(ev.ConfusionCounts(tp=5, fn=0, fp=0, tn=5)) == 1.0
        assert ev.mcc(ev.ConfusionCounts(tp=0, fn=5, fp=5, tn=0)) == -1.0

    def test_degenerate_returns_zero_with_warning(self):
        with pytest.warns(UserWarning, match="degenerate"):
            assert ev.mcc(ev.ConfusionCounts(tp=0, fn=0, fp=3, tn=7)) == 0.0


class TestKnnBaseline:
    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(8)
        tx = rng.normal(size=(200, 6))
        ty = rng.integers(0, 2, 200)
        qx = rng.normal(size=(40, 6))
        got = ev.knn_baseline(tx, ty, qx, k=5, chunk=16)
        for i, q in enumerate(qx):
            d = ((tx - q) ** 2).sum(axis=1)
            nearest = np.argsort(d, kind="stable")[:5]
            assert got[i] == (ty[nearest] == 1).mean()

    def test_distance_ties_break_by_record_order(self):
        # both training rows sit at distance 1 from the query
        tx = np.array([[1.0, 0.0], [0.0, 1.0], [5.0, 5.0]])
        ty = np.array([1, 0, 0])
        got = ev.knn_baseline(tx, ty, np.array([[0.0, 0.0]]), k=1)
        assert got[0] == 1.0  # the earlier record wins the tie

    def test_k_equal_train_size_is_constant(self):
        rng = np.random.default_rng(9)
        tx = rng.normal(size=(30, 3))
        ty = rng.integers(0, 2, 30)
        got = ev.knn_baseline(tx, ty, rng.normal(size=(10, 3)), k=30)
        assert np.unique(got).size == 1
        assert got[0] == (ty == 1).mean()

    def test_k_one_copies_nearest_label(self):
        tx = np.array([[0.0], [10.0]])
        ty = np.array([0, 1])
        got = ev.knn_baseline(tx, ty, np.array([[9.0], [1.0]]), k=1)
        assert got.tolist() == [1.0, 0.0]

    def test_bad_k_rejected(self):
        tx, ty = np.zeros((5, 2)), np.zeros(5, dtype=int)
        with pytest.raises(ValueError):
            ev.knn_baseline(tx, ty, np.zeros((1, 2)), k=0)
        with pytest.raises(ValueError):
            ev.knn_baseline(tx, ty, np.zeros((1, 2)), k=6)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError, match="dimension"):
            ev.knn_baseline(np.zeros((5, 2)), np.zeros(5), np.zeros((1, 3)))


class TestScenarioPreparation:
    def test_single_bundle_shapes(self):
        bundle = ev.prepare_synthetic("single", 0, TINY_SYNTH)
        assert bundle.train_x.shape[1] == 28
        assert bundle.train_x.dtype == np.float32
        assert bundle.target_x is None
        # scaler is fitted on the train portion only
        assert bundle.train_x.min() == -1.0 and bundle.train_x.max() == 1.0

    def test_transfer_bundle_has_target(self):
        bundle = ev.prepare_synthetic("transfer", 0, TINY_SYNTH)
        assert bundle.target_x is not None
        assert bundle.target_x.shape[1] == 28
        assert np.sum(bundle.train_y == data.ICING) == np.sum(bundle.train_y == data.NORMAL)

    def test_unknown_scenario_rejected(self):
        with pytest.raises(ValueError, match="scenario"):
            ev.prepare_synthetic("triple", 0, TINY_SYNTH)


class TestRunComparison:
    def test_single_method_single_seed_is_one_row(self):
        rows = ev.run_comparison("single", ["KNN"], [0], synth_config=TINY_SYNTH)
        assert len(rows) == 1
        r = rows[0]
        assert r["method"] == "KNN" and r["seed"] == 0
        assert set(r) == set(ev.RESULT_COLUMNS)

    def test_mean_row_appended_for_multiple_seeds(self):
        rows = ev.run_comparison("single", ["KNN"], [0, 1], synth_config=TINY_SYNTH)
        assert [r["seed"] for r in rows] == [0, 1, "mean"]
        assert rows[2]["auc"] == pytest.approx((rows[0]["auc"] + rows[1]["auc"]) / 2)

    def test_replay_is_identical(self):
        args = ("single", ["KNN", "PGANC-stage2"], [0])
        a = ev.run_comparison(*args, synth_config=TINY_SYNTH, two_stage=TINY_TWO_STAGE)
        b = ev.run_comparison(*args, synth_config=TINY_SYNTH, two_stage=TINY_TWO_STAGE)
        assert a == b

    def test_stage1_and_stage2_share_one_training_run(self):
        rows = ev.run_comparison("single", ["PGANC-stage1", "PGANC-stage2"], [0],
                                 synth_config=TINY_SYNTH, two_stage=TINY_TWO_STAGE)
        assert {r["method"] for r in rows} == {"PGANC-stage1", "PGANC-stage2"}

    def test_transfer_methods_rejected_on_single(self):
        for m in ("PGANT", "PGANT-1loss", "CNN-2loss", "CNN-1loss"):
            with pytest.raises(ValueError, match="transfer"):
                ev.run_comparison("single", [m], [0], synth_config=TINY_SYNTH)

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError, match="unknown method"):
            ev.run_comparison("single", ["SVC"], [0], synth_config=TINY_SYNTH)

    def test_empty_inputs_rejected(self):
        with pytest.raises(ValueError):
            ev.run_comparison("single", [], [0], synth_config=TINY_SYNTH)
        with pytest.raises(ValueError):
            ev.run_comparison("single", ["KNN"], [], synth_config=TINY_SYNTH)

    def test_prebuilt_bundles_are_used(self):
        bundle = ev.prepare_synthetic("single", 3, TINY_SYNTH)
        rows = ev.run_comparison("single", ["KNN"], [3], bundles={3: bundle})
        direct = ev.knn_baseline(bundle.train_x, bundle.train_y, bundle.test_x, k=5)
        assert rows[0]["auc"] == ev.roc_auc(direct, bundle.test_y).auc

    def test_transfer_alpha_zero_variant_runs(self):
        rows = ev.run_comparison("transfer", ["PGANT-1loss"], [0],
                                 synth_config=TINY_SYNTH, transfer=TINY_TRANSFER)
        assert rows[0]["method"] == "PGANT-1loss"
        assert np.isfinite(rows[0]["auc"])


class TestCsvEmitters:
    def test_results_round_trip(self, tmp_path):
        rows = ev.run_comparison("single", ["KNN"], [0, 1], synth_config=TINY_SYNTH)
        path = tmp_path / "results.csv"
        ev.write_results(rows, path)
        with open(path, newline="") as fh:
            got = list(csv.DictReader(fh))
        assert [g["method"] for g in got] == ["KNN", "KNN", "KNN"]
        assert [g["seed"] for g in got] == ["0", "1", "mean"]
        for g, r in zip(got, rows):
            assert float(g["score"]) == r["score"]
            assert float(g["auc"]) == r["auc"]
            assert float(g["mcc"]) == r["mcc"]

    def test_roc_csv_layout(self, tmp_path):
        curve = ev.roc_auc([0.9, 0.7, 0.8, 0.3], [1, 1, 0, 0])
        path = tmp_path / "roc.csv"
        ev.write_roc(curve, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "threshold,fpr,tpr"
        assert lines[1] == ",0.0,0.0"
        assert lines[-1].split(",")[1:] == ["1.0", "1.0"]
        assert len(lines) == 2 + len(curve.thresholds)
