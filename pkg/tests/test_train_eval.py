import csv
import math

import numpy as np
import pytest

from conftest import make_dataset
from fploc.artifact import ModelArtifact, load_artifact, save_artifact
from fploc.core_math import make_rng
from fploc.data import SyntheticScenario, generate_synthetic, with_rp_classes
from fploc.errors import ConfigError, DivergenceError, EvaluationError
from fploc.train_eval import (EvalReport, TrainingConfig, boxplot_stats, build_graph, compare_runs, empirical_cdf,
                              evaluate_2d, evaluate_3d, fit_artifact, report_3d, train)


def toy_train_set(n_ap=5, k=3, per_rp=4, seed=0):
    """k well-separated RSSI prototypes on a line, a few noisy copies each."""
    rng = make_rng(seed)
    centers = rng.uniform(-100, -40, (k, n_ap))
    rssi = np.repeat(centers, per_rp, axis=0) + rng.normal(0, 1.0, (k * per_rp, n_ap))
    locs = np.repeat(np.column_stack([np.arange(k) * 5.0, np.zeros(k)]), per_rp, axis=0)
    ds = make_dataset(np.clip(rssi, -110, 0), locations=locs,
                      ap_positions=rng.uniform(0, 20, (n_ap, 2)))
    return with_rp_classes(ds)


def gcn_config(**kw):
    base = dict(epochs=200, batch_size=8, learning_rate=1e-2, adjacency_method="inverse_distance")
    base.update(kw)
    return TrainingConfig(**base)


class StubModel:
    """Stands in for a trained artifact: returns fixed decoded outputs."""

    graph = None

    def __init__(self, xy, floor, building):
        self.out = (np.asarray(xy, float), np.asarray(floor), np.asarray(building), None)

    def locate(self, _):
        return self.out


class TestTrain:
    def test_overfit_ten_samples(self):
        rng = make_rng(1)
        ds = with_rp_classes(make_dataset(rng.uniform(-100, -30, (10, 5)),
                                          locations=np.column_stack([np.arange(10) % 3, np.zeros(10)]),
                                          ap_positions=rng.uniform(0, 10, (5, 2))))
        cfg = gcn_config(batch_size=10)
        result = train(ds, None, build_graph(ds, cfg), cfg)
        assert result.history[-1]["accuracy"] == 1.0

    def test_same_seed_bit_identical(self):
        ds = toy_train_set()
        cfg = gcn_config(epochs=20)
        g = build_graph(ds, cfg)
        a, b = train(ds, None, g, cfg), train(ds, None, g, cfg)
        for name, arr in a.params.arrays().items():
            assert arr.tobytes() == b.params.arrays()[name].tobytes()
        assert a.history == b.history
        c = train(ds, None, g, gcn_config(epochs=20, seed=1))
        assert c.params.fc1_w.tobytes() != a.params.fc1_w.tobytes()

    @pytest.mark.parametrize("model", ["gcn", "dnn"])
    def test_initial_loss_near_log_k(self, model):
        train_set, _ = generate_synthetic(SyntheticScenario(train_samples_per_rp=2))
        cfg = gcn_config(epochs=1, model=model)
        graph = build_graph(train_set, cfg) if model == "gcn" else None
        result = train(train_set, None, graph, cfg)
        assert abs(result.initial_loss - math.log(100)) <= 0.1 * math.log(100)

    def test_loss_decreases(self):
        ds = toy_train_set()
        cfg = gcn_config(epochs=50)
        result = train(ds, None, build_graph(ds, cfg), cfg)
        assert result.history[-1]["loss"] < result.initial_loss

    def test_class_count_mismatch(self):
        ds = toy_train_set()
        cfg = gcn_config(n_classes=7)
        with pytest.raises(ConfigError) as exc:
            train(ds, None, build_graph(ds, cfg), cfg)
        assert exc.value.key == "n_classes"

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reports_epoch(self):
        ds = toy_train_set()
        cfg = gcn_config(epochs=5, learning_rate=1e308, model="dnn")
        with pytest.raises(DivergenceError) as exc:
            train(ds, None, None, cfg)
        assert exc.value.epoch >= 1

    def test_validation_curve_recorded(self):
        ds = toy_train_set()
        val = ds.subset(np.arange(3))
        cfg = gcn_config(epochs=3, model="dnn")
        result = train(ds, val, None, cfg)
        assert {"val_loss", "val_accuracy"} <= set(result.history[0])

    @pytest.mark.parametrize("bad", [{"epochs": 0}, {"batch_size": 0}, {"model": "cnn"},
                                     {"adjacency_method": "knn"}, {"learning_rate": -1.0}])
    def test_invalid_config(self, bad):
        with pytest.raises(ConfigError):
            TrainingConfig.from_dict(bad)

    def test_unknown_config_key(self):
        with pytest.raises(ConfigError) as exc:
            TrainingConfig.from_dict({"epochz": 3})
        assert exc.value.key == "epochz"

    def test_config_round_trip(self):
        cfg = gcn_config(seed=4)
        assert TrainingConfig.from_dict(cfg.to_dict()) == cfg


class TestNoLeakage:
    def test_graph_only_from_train(self):
        _, test = generate_synthetic(SyntheticScenario(train_samples_per_rp=1, test_samples_per_rp=1))
        with pytest.raises(ConfigError):
            build_graph(test, TrainingConfig())

    def test_train_rejects_test_role(self):
        _, test = generate_synthetic(SyntheticScenario(train_samples_per_rp=1, test_samples_per_rp=1))
        with pytest.raises(ConfigError):
            train(test, None, None, TrainingConfig(model="dnn", epochs=1))


class TestEvaluation:
    def test_perfect_predictions_zero_error(self):
        ds = toy_train_set()
        model = StubModel(ds.locations, ds.floor, ds.building)
        rep = evaluate_2d(model, None, ds)
        assert rep.mean_error == 0.0 and rep.stats["max"] == 0.0

    def test_three_and_five(self):
        rep = EvalReport.from_errors("2d", 2, [5.0, 3.0])
        assert rep.mean_error == 4.0 and rep.stats["median"] == 4.0
        np.testing.assert_array_equal(rep.cdf_errors, [3.0, 5.0])
        np.testing.assert_array_equal(rep.cdf_quantiles, [0.5, 1.0])

    def test_cdf_definition(self):
        xs, qs = empirical_cdf([3.0, 1.0, 2.0])
        assert list(zip(xs, qs)) == [(1.0, 1 / 3), (2.0, 2 / 3), (3.0, 1.0)]

    def test_cdf_properties(self):
        xs, qs = empirical_cdf(make_rng(0).exponential(5, 200))
        assert np.all(np.diff(xs) >= 0) and np.all(np.diff(qs) > 0)
        assert qs[-1] == 1.0 and qs[0] > 0

    def test_mean_matches_arithmetic(self):
        e = make_rng(1).exponential(4, 77)
        assert abs(EvalReport.from_errors("2d", 77, e).mean_error - sum(e) / len(e)) < 1e-9

    def test_boxplot_outliers(self):
        stats = boxplot_stats([1, 2, 3, 4, 100])
        assert stats["outliers"] == [100.0]
        assert stats["whisker_high"] == 4.0 and stats["median"] == 3.0
        assert stats["min"] <= stats["p25"] <= stats["p60"] <= stats["p75"] <= stats["max"]

    def test_empty_test_set(self):
        ds = toy_train_set().subset(np.array([], dtype=int))
        with pytest.raises(EvaluationError):
            evaluate_2d(StubModel(np.zeros((0, 2)), [], []), None, ds)

    def test_3d_all_wrong_floor(self):
        ds = toy_train_set()
        rep = evaluate_3d(StubModel(ds.locations, ds.floor + 1, ds.building), None, ds)
        assert rep.note == "no conditioned samples" and rep.mean_error is None
        assert rep.floor_accuracy == 0.0 and rep.building_accuracy == 1.0
        d = rep.to_dict()
        assert d["note"] == "no conditioned samples" and d["mean_error_m"] is None

    def test_3d_conditioned_subset_size(self):
        rng = make_rng(5)
        m = 40
        ds = make_dataset(np.zeros((m, 3)), locations=rng.uniform(0, 50, (m, 2)),
                          floor=rng.integers(0, 4, m), building=rng.integers(0, 3, m))
        floor = np.where(rng.uniform(size=m) < 0.8, ds.floor, ds.floor + 1)
        building = np.where(rng.uniform(size=m) < 0.9, ds.building, ds.building + 1)
        xy = ds.locations + rng.normal(0, 2, (m, 2))
        rep = report_3d(xy, floor, building, ds)
        joint = np.mean((floor == ds.floor) & (building == ds.building))
        assert rep.errors.size == rep.n_floor_building_correct == round(joint * m)
        assert 0 <= rep.floor_accuracy <= 1 and 0 <= rep.building_accuracy <= 1

    def test_2d_report_omits_floor_fields(self):
        d = EvalReport.from_errors("2d", 1, [1.0]).to_dict()
        assert "floor_accuracy" not in d and "building_accuracy" not in d

    def test_compare_runs_files(self, tmp_path):
        reps = [EvalReport.from_errors("2d", 3, [1.0, 2.0, 3.0]), EvalReport.from_errors("2d", 2, [3.0, 5.0])]
        table = compare_runs(reps, ["gcn", "dnn"], tmp_path / "plots")
        assert [r["label"] for r in table] == ["gcn", "dnn"]
        assert table[1]["mean_error_m"] == 4.0
        with open(tmp_path / "plots" / "cdf_gcn.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["error_m", "quantile"] and [float(v) for v in rows[-1]] == [3.0, 1.0]
        with open(tmp_path / "plots" / "box_dnn.csv") as fh:
            stats = dict(csv.reader(fh))
        assert float(stats["median"]) == 4.0

    def test_compare_runs_single(self):
        table = compare_runs([EvalReport.from_errors("2d", 1, [2.0])], ["only"])
        assert len(table) == 1 and table[0]["mean_error_m"] == 2.0

    def test_compare_runs_label_mismatch(self):
        with pytest.raises(EvaluationError):
            compare_runs([], [])


class TestArtifact:
    @pytest.mark.parametrize("model", ["gcn", "dnn"])
    def test_round_trip_exact(self, tmp_path, model):
        ds = toy_train_set()
        art, _ = fit_artifact(ds, gcn_config(epochs=3, model=model))
        save_artifact(art, tmp_path / "m.json")
        back = load_artifact(tmp_path / "m.json")
        for name, arr in art.params.arrays().items():
            assert arr.tobytes() == back.params.arrays()[name].tobytes()
        assert art.predict_proba(ds).tobytes() == back.predict_proba(ds).tobytes()
        assert back.kind == model and back.train_hash == ds.content_hash()

    def test_evaluate_on_fitted_model(self):
        ds = toy_train_set()
        art, _ = fit_artifact(ds, gcn_config(epochs=150))
        rep = evaluate_2d(art, None, ds)
        assert rep.mean_error < 1.0
        assert isinstance(art, ModelArtifact)
