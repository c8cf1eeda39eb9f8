import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simsoh import explore as E
from simsoh.costs import CostEstimate
from simsoh.dataset import FEATURE_NAMES, DatasetMeta, FeatureMask, WindowDataset, split_by_simulation
from simsoh.errors import ConfigError, DegenerateLabelError


def synthetic(n_sims=10, per_sim=40, seed=0, signal=0):
    """Windows whose label depends on one planted feature column."""
    rng = np.random.default_rng(seed)
    n = n_sims * per_sim
    X = rng.normal(size=(n, 12))
    y = 1 / (1 + np.exp(-2 * X[:, signal]))
    sims = np.repeat([f"s{i:02d}" for i in range(n_sims)], per_sim)
    data = WindowDataset(sims, np.tile(np.arange(per_sim), n_sims), X, y * 0.01, y)
    split = split_by_simulation(sims, seed=seed)
    meta = DatasetMeta(0.01, 0, seed, (0.5, 0.2, 0.3), 7200.0, 1.0, "cell", split.buckets)
    return data, meta


def point(cost, err, kind="gbt", memory=None, idx=0):
    mask = FeatureMask.from_indices(range(3 + idx % 10))
    return E.ParetoPoint(kind, f"{kind}_n{idx + 1}_d1" if kind == "gbt" else f"mlp_h{4 * (idx + 1)}",
                         mask, err, err * err, 0.5, err,
                         CostEstimate(cost, 0, cost if memory is None else memory))


def dominance_oracle(costs, errors):
    """O(n^2) definition: keep i unless something is <= on both axes and < on
    one, or is an identical pair that comes earlier."""
    keep = set()
    for i, (ci, ei) in enumerate(zip(costs, errors)):
        dominated = False
        for j, (cj, ej) in enumerate(zip(costs, errors)):
            if j == i:
                continue
            if cj <= ci and ej <= ei and (cj < ci or ej < ei):
                dominated = True
            elif cj == ci and ej == ei and j < i:
                dominated = True
        if not dominated:
            keep.add(i)
    return keep


class TestSpace:
    def test_default_counts(self):
        space = E.SearchSpace()
        assert len(space.gbt_configs()) == 48
        assert len(space.mlp_configs(0)) == 42
        assert sum(len(c.hidden_sizes) == 1 for c in space.mlp_configs(0)) == 6
        assert space.evaluation_count(10) == 900

    def test_work_items_default(self):
        masks = [FeatureMask.from_indices(range(k)) for k in range(12, 2, -1)]
        items = E.work_items(E.SearchSpace(), masks, seed=0)
        assert sum(i[0] == "gbt" for i in items) == 480
        assert sum(i[0] == "mlp" for i in items) == 420

    def test_config_file(self, tmp_path):
        path = tmp_path / "space.cfg"
        path.write_text("gbt_n_trees = 5, 50\ngbt_max_depth = 1\nmlp_hidden = 4, 32x32\nmask_sizes = 12, 3\n"
                        "mlp_epochs = 7\n")
        space = E.load_space(path)
        assert [c.key() for c in space.gbt_configs()] == ["gbt_n5_d1", "gbt_n50_d1"]
        assert [c.key() for c in space.mlp_configs(0)] == ["mlp_h4", "mlp_h32x32"]
        assert space.mlp_epochs == 7 and space.mask_sizes == (12, 3)

    def test_sizes_and_layers(self):
        space = E.space_from_dict({"mlp_sizes": "4, 8", "mlp_layers": "2"})
        assert space.mlp_hidden == ((4, 4), (4, 8), (8, 4), (8, 8))

    @pytest.mark.parametrize("values", [{"bogus": "1"}, {"gbt_max_depth": "0"}, {"mlp_hidden": "3"},
                                        {"mlp_hidden": "8x8x8"}, {"mask_sizes": "2"}, {"mlp_hidden": "ax"}])
    def test_invalid(self, values):
        with pytest.raises(ConfigError):
            E.space_from_dict(values)


class TestRfe:
    def test_ten_masks(self):
        data, _ = synthetic()
        masks = E.rfe(data.features, data.y)
        assert [len(m) for m in masks] == list(range(12, 2, -1))
        for big, small in zip(masks, masks[1:]):
            assert set(small.kept) < set(big.kept)

    @pytest.mark.parametrize("signal", [0, 5, 11])
    def test_planted_signal_survives(self, signal):
        data, _ = synthetic(signal=signal, seed=signal)
        assert FEATURE_NAMES[signal] in E.rfe(data.features, data.y)[-1].kept

    def test_min_features_twelve(self):
        data, _ = synthetic()
        assert E.rfe(data.features, data.y, min_features=12) == [FeatureMask.all()]

    def test_tie_drops_highest_index(self):
        # only column 0 carries signal; every other column has zero importance
        X = np.zeros((40, 12))
        X[:, 0] = np.arange(40)
        masks = E.rfe(X, (X[:, 0] > 19).astype(float), min_features=10)
        assert masks[1].kept == FEATURE_NAMES[:11]
        assert masks[2].kept == FEATURE_NAMES[:10]

    def test_degenerate(self):
        with pytest.raises(DegenerateLabelError):
            E.rfe(np.random.default_rng(0).normal(size=(20, 12)), np.ones(20))


class TestMetrics:
    def test_perfect(self):
        m = E.metrics([0.1, 0.5, 0.9], [0.1, 0.5, 0.9])
        assert (m.mae, m.mse, m.r2) == (0.0, 0.0, 1.0)

    def test_mean_predictor(self):
        y = np.array([0.2, 0.4, 0.9])
        assert E.metrics(np.full(3, y.mean()), y).r2 == pytest.approx(0.0, abs=1e-15)

    def test_hand_arithmetic(self):
        m = E.metrics([0.5, 0.5], [0.0, 1.0])
        assert (m.mae, m.mse, m.r2) == (50.0, 25.0, 0.0)

    def test_constant_labels(self):
        with pytest.raises(DegenerateLabelError):
            E.metrics([0.1, 0.2], [0.3, 0.3])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            E.metrics([0.1], [0.1, 0.2])


class TestPareto:
    def test_example(self):
        pts = [point(1, 5), point(2, 3, idx=1), point(3, 4, idx=2)]
        assert [(p.cost.total_time_proxy, p.mae) for p in E.pareto_front(pts)] == [(1, 5), (2, 3)]

    def test_single(self):
        p = point(4, 2)
        assert E.pareto_front([p]) == [p]

    def test_duplicate_kept_once(self):
        a, b = point(4, 2), point(4, 2, idx=1)
        assert E.pareto_front([a, b]) == [a]

    def test_failed_points_ignored(self):
        bad = dataclasses.replace(point(0, 0.0), failure="TrainingError: boom")
        good = point(5, 5)
        assert E.pareto_front([bad, good]) == [good]

    @settings(max_examples=300)
    @given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 20)), min_size=1, max_size=50))
    def test_matches_oracle(self, pairs):
        costs, errors = zip(*pairs)
        assert set(E.front_indices(costs, errors)) == dominance_oracle(costs, errors)

    @pytest.mark.parametrize("seed", range(5))
    def test_every_point_dominated_or_member(self, seed):
        rng = np.random.default_rng(seed)
        pts = [point(int(c), float(e), idx=i) for i, (c, e) in
               enumerate(zip(rng.integers(1, 30, 40), rng.integers(1, 30, 40)))]
        front = E.pareto_front(pts)
        for p in pts:
            assert p in front or any(f.cost.total_time_proxy <= p.cost.total_time_proxy and f.mae <= p.mae
                                     for f in front)
        for a in front:
            for b in front:
                assert a is b or not (b.cost.total_time_proxy <= a.cost.total_time_proxy and b.mae <= a.mae)


class TestExtremes:
    def test_single(self):
        p = point(3, 3)
        assert set(map(id, E.extremes([p]).values())) == {id(p)}

    def test_two_points(self):
        a, b = point(1, 5), point(2, 3, idx=1)
        ext = E.extremes([a, b])
        assert ext["lowest_error"] is b and ext["lowest_time"] is a

    def test_ties_use_other_axis(self):
        a, b, c = point(5, 3, memory=9), point(2, 3, memory=9, idx=1), point(2, 4, memory=1, idx=2)
        ext = E.extremes([a, b, c])
        assert ext["lowest_error"] is b
        assert ext["lowest_time"] is b
        assert ext["lowest_memory"] is c

    def test_time_and_memory_can_coincide(self):
        a, b = point(1, 9, kind="mlp", memory=1), point(9, 1, memory=9, idx=1)
        ext = E.extremes([a, b])
        assert ext["lowest_time"] is ext["lowest_memory"] is a

    @pytest.mark.parametrize("seed", range(5))
    def test_extremes_on_fronts(self, seed):
        rng = np.random.default_rng(seed)
        pts = [point(int(c), float(e), memory=int(m), idx=i) for i, (c, e, m) in
               enumerate(zip(rng.integers(1, 9, 30), rng.integers(1, 9, 30), rng.integers(1, 9, 30)))]
        report = E.RunReport(pts, [], 0)
        ext = report.extremes["all"]
        assert ext["lowest_error"] in report.fronts["time"]
        assert ext["lowest_time"] in report.fronts["time"]
        assert ext["lowest_memory"] in report.fronts["memory"]


SMALL = E.SearchSpace(gbt_n_trees=(5, 20), gbt_max_depth=(1, 3), mlp_hidden=((4,), (8, 8)),
                      mask_sizes=(12, 6, 3), mlp_epochs=3)


class TestGridSearch:
    def test_count_and_order(self):
        data, meta = synthetic()
        report = E.explore(data, meta, SMALL, seed=1)
        assert len(report.points) == SMALL.evaluation_count(3) == 18
        assert [len(m) for m in report.masks] == [12, 6, 3]
        assert report.points == sorted(report.points, key=E.point_order)
        assert all(p.ok for p in report.points)
        assert {p.model_kind for p in report.points} == {"gbt", "mlp"}
        mlps = [p for p in report.points if p.config == "mlp_h8x8"]
        assert all(p.hidden_layers == 2 and p.affine_layers == 3 for p in mlps)

    def test_single_config(self):
        data, meta = synthetic()
        space = E.SearchSpace(gbt_n_trees=(5,), gbt_max_depth=(2,), mlp_hidden=(), mask_sizes=(12,))
        assert len(E.explore(data, meta, space).points) == 1

    def test_parallel_matches_serial(self):
        data, meta = synthetic()
        serial = E.explore(data, meta, SMALL, seed=2)
        parallel = E.explore(data, meta, SMALL, seed=2, jobs=2)
        assert serial.points == parallel.points

    def test_failures_recorded(self):
        data, meta = synthetic()
        test_sims = set(meta.assignment.members("test"))
        rows = np.array([s in test_sims for s in data.sim_id])
        data.delta_soh_norm[rows] = 0.5
        masks = [FeatureMask.all()]
        from simsoh.dataset import dataset_splits
        points = E.grid_search(SMALL, dataset_splits(data, meta), masks, 7200)
        assert len(points) == 6
        assert all(not p.ok and "DegenerateLabelError" in p.failure for p in points)

    def test_progress_callback(self):
        data, meta = synthetic()
        seen = []
        E.explore(data, meta, SMALL, progress=lambda done, total, p: seen.append((done, total)))
        assert seen[-1] == (18, 18)


class TestReportFiles:
    def test_write_and_read_back(self, tmp_path):
        data, meta = synthetic()
        report = E.explore(data, meta, SMALL, seed=3)
        out = E.write_report(report, tmp_path / "rep", extra={"note": "x"})
        back = E.read_points(out / "points.csv")
        assert back == report.points
        summary = json.loads((out / "report.json").read_text())
        assert summary["evaluations"] == 18 and summary["by_kind"] == {"gbt": 12, "mlp": 6}
        assert summary["note"] == "x"
        assert E.read_points(out / "front_time.csv") == report.fronts["time"]

    def test_deterministic_digest(self, tmp_path):
        data, meta = synthetic()
        for name in ("a", "b"):
            E.write_report(E.explore(data, meta, SMALL, seed=4), tmp_path / name)
        assert E.report_digest(tmp_path / "a") == E.report_digest(tmp_path / "b")

    def test_plotdata(self, tmp_path):
        data, meta = synthetic()
        report = E.explore(data, meta, SMALL)
        paths = E.write_plotdata(report.points, tmp_path / "plot")
        assert len(paths) == 6
        front = (tmp_path / "plot" / "time_front.dat").read_text().splitlines()
        assert front[0].startswith("#") and len(front) == 1 + len(report.fronts["time"])
