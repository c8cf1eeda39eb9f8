import numpy as np
import pytest

from simsoh import constants as C
from simsoh import costs, gbt, mlp
from simsoh.explore import SearchSpace

W = costs.window_samples(2 * 3600.0, 1.0)


class TestFeatureCost:
    def test_window_samples(self):
        assert W == 7200

    @pytest.mark.parametrize("samples,features,expected", [(7200, 12, 86400), (7200, 0, 0), (1, 1, 1), (0, 5, 0)])
    def test_values(self, samples, features, expected):
        assert costs.feature_cost(samples, features) == expected

    def test_negative(self):
        with pytest.raises(ValueError):
            costs.feature_cost(-1, 3)


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(3000, 12))
    return X, X[:, 0] + np.sin(X[:, 1]) + 0.1 * rng.normal(size=3000)


class TestEstimate:
    def test_gbt_50x5_with_11_features(self, data):
        X, y = data
        ens = gbt.fit(X[:, :11], y, gbt.GbtConfig(50, 5))
        est = costs.estimate(ens, W)
        assert est.eval_ops == 250 and est.feature_ops == 79200
        assert est.feature_ops > 100 * est.eval_ops
        assert est.total_time_proxy == 79450
        assert est.memory_bytes == gbt.serialized_bytes(ens)

    def test_mlp_10_128_128_1(self):
        est = costs.estimate(mlp.init(mlp.MlpConfig((128, 128)), 10), W)
        assert est.eval_ops == 17792 and est.feature_ops == 72000

    def test_zero_sample_window(self):
        assert costs.estimate(mlp.init(mlp.MlpConfig((4,)), 3), 0).feature_ops == 0

    def test_axis(self):
        est = costs.CostEstimate(10, 5, 99)
        assert est.axis("time") == 15 and est.axis("memory") == 99
        with pytest.raises(ValueError):
            est.axis("energy")

    def test_unknown_model(self):
        with pytest.raises(TypeError):
            costs.estimate(object(), W)


class TestMonotone:
    @staticmethod
    def _leq(a, b):
        return a.feature_ops <= b.feature_ops and a.eval_ops <= b.eval_ops and a.memory_bytes <= b.memory_bytes

    @pytest.mark.parametrize("n", [1, 5, 20])
    def test_adding_a_tree(self, data, n):
        X, y = data
        a = costs.estimate(gbt.fit(X, y, gbt.GbtConfig(n, 4)), W)
        b = costs.estimate(gbt.fit(X, y, gbt.GbtConfig(n + 1, 4)), W)
        assert self._leq(a, b)

    def test_adding_a_feature(self, data):
        X, y = data
        for k in range(3, 12):
            a = costs.estimate(gbt.fit(X[:, :k], y, gbt.GbtConfig(5, 3)), W)
            b = costs.estimate(gbt.fit(X[:, :k + 1], y, gbt.GbtConfig(5, 3)), W)
            assert a.feature_ops < b.feature_ops
            a = costs.estimate(mlp.init(mlp.MlpConfig((8,)), k), W)
            b = costs.estimate(mlp.init(mlp.MlpConfig((8,)), k + 1), W)
            assert self._leq(a, b)

    @pytest.mark.parametrize("first", C.MLP_SIZES)
    def test_adding_a_layer(self, first):
        for second in C.MLP_SIZES:
            a = costs.estimate(mlp.init(mlp.MlpConfig((first,)), 6), W)
            b = costs.estimate(mlp.init(mlp.MlpConfig((first, second)), 6), W)
            assert self._leq(a, b)


class TestDominance:
    def test_feature_ops_dominate_over_default_grid(self):
        space = SearchSpace()
        checked = 0
        for n_features in range(C.RFE_MIN_FEATURES, 13):
            feature_ops = costs.feature_cost(W, n_features)
            for cfg in space.gbt_configs():
                # realized branch counts never exceed the n_trees x max_depth bound
                assert feature_ops >= gbt.branch_formula(cfg.n_trees, cfg.max_depth)
                checked += 1
            for cfg in space.mlp_configs(0):
                net = mlp.init(cfg, n_features)
                assert feature_ops >= costs.estimate(net, W).eval_ops
                checked += 1
        assert checked == 90 * 10
