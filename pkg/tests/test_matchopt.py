"""
测试遗传匹配
"""
import numpy as np
import pytest

from src.design import Stratum
from src.errors import ConfigError, ConstantCovariateError, ZeroVarianceError
from src.matchopt import (BalanceReport, GeneticConfig, MatchedPair, MatchedStratum, WeightVector, balance_report,
                          _smallest, check_balance, genetic_search, match_stratum, pre_match_smd, smd,
                          standardized_distance)

COVARIATES = ["U", "O", "E"]


def random_stratum(make_unit, rng, n_t, n_c, shift=0.0, t_index=0):
    def draw(k, offset, prefix):
        return [make_unit(user_id=f"{prefix}{i}", t_index=t_index,
                          U=float(rng.normal(offset, 1.0)), O=float(rng.normal()), E=float(rng.normal()))
                for i in range(k)]
    return Stratum(t_index, treated=draw(n_t, shift, "t"), control=draw(n_c, 0.0, "c"))


def reference_matches(stratum, confounders, w, ratio):
    """逐对计算距离并排序的参考实现"""
    pooled = np.array([[u.value(c) for c in confounders] for u in stratum.treated + stratum.control])
    scales = pooled.std(axis=0, ddof=1)
    result = []
    for i, t in enumerate(stratum.treated):
        a = [t.value(c) for c in confounders]
        ranked = sorted(
            (standardized_distance(a, [c.value(k) for k in confounders], scales, w), j)
            for j, c in enumerate(stratum.control)
        )
        result.extend((i, j) for _, j in ranked[:ratio])
    return result


def indices(stratum, matched):
    t_pos = {id(u): i for i, u in enumerate(stratum.treated)}
    c_pos = {id(u): j for j, u in enumerate(stratum.control)}
    return [(t_pos[id(p.treated)], c_pos[id(p.control)]) for p in matched.pairs]


class TestStandardizedDistance:
    """测试加权标准化距离"""

    def test_example(self):
        assert standardized_distance([1, 0], [0, 0], [1, 1], WeightVector((4.0, 1.0))) == pytest.approx(2.0)

    def test_zero_to_itself(self):
        assert standardized_distance([3, 5], [3, 5], [2, 7], WeightVector((1.0, 9.0))) == 0.0

    def test_zero_scale(self):
        with pytest.raises(ConstantCovariateError, match="constant covariate"):
            standardized_distance([1, 0], [0, 0], [1, 0], WeightVector.identity(2))

    def test_weights_must_be_positive(self):
        with pytest.raises(ValueError):
            WeightVector((1.0, 0.0))


class TestMatchStratum:
    """测试最近邻匹配"""

    def test_identical_control_chosen(self, make_unit):
        stratum = Stratum(0, treated=[make_unit(U=5.0)],
                          control=[make_unit(U=9.0), make_unit(U=5.0), make_unit(U=1.0)])

        matched = match_stratum(stratum, ["U"], ratio=1)

        assert matched.pairs[0].control is stratum.control[1]
        assert matched.pairs[0].distance == 0.0

    def test_single_control_reused(self, make_unit):
        stratum = Stratum(2, treated=[make_unit(U=1.0), make_unit(U=2.0)], control=[make_unit(U=4.0)])

        matched = match_stratum(stratum, ["U"], ratio=2)

        assert matched.pair_count == 4
        assert all(p.control is stratum.control[0] for p in matched.pairs)

    def test_matches_exhaustive_search(self, make_unit):
        rng = np.random.default_rng(17)
        for _ in range(20):
            stratum = random_stratum(make_unit, rng, int(rng.integers(1, 40)), int(rng.integers(2, 80)), shift=0.7)
            w = WeightVector(tuple(float(v) for v in np.exp(rng.uniform(-3, 3, 3))))

            matched = match_stratum(stratum, COVARIATES, w, ratio=2)

            assert indices(stratum, matched) == reference_matches(stratum, COVARIATES, w, 2)

    def test_precomputed_and_chunked_paths_agree(self, make_unit, monkeypatch):
        """大分层逐块计算与预计算平方差的匹配结果一致"""
        rng = np.random.default_rng(23)
        stratum = random_stratum(make_unit, rng, 300, 400, shift=0.4)
        w = WeightVector((0.3, 2.0, 7.5))

        fast = match_stratum(stratum, COVARIATES, w, ratio=3)
        monkeypatch.setattr("src.matchopt._PRECOMPUTE_LIMIT", 0)
        chunked = match_stratum(stratum, COVARIATES, w, ratio=3)

        assert indices(stratum, fast) == indices(stratum, chunked)
        assert [p.distance for p in fast.pairs] == [p.distance for p in chunked.pairs]

    @pytest.mark.parametrize("ratio", [1, 2, 5])
    def test_partial_selection_keeps_stable_order(self, ratio):
        """距离大量并列时, 部分选择与稳定全排序取前 ratio 个一致"""
        rng = np.random.default_rng(ratio)
        for _ in range(50):
            d2 = rng.integers(0, 6, size=(int(rng.integers(1, 30)), int(rng.integers(ratio + 1, 60)))).astype(float)

            expected = np.argsort(d2, axis=1, kind="stable")[:, :ratio]

            assert np.array_equal(_smallest(d2, ratio), expected)

    def test_weight_scale_invariance(self, make_unit):
        rng = np.random.default_rng(4)
        stratum = random_stratum(make_unit, rng, 25, 60, shift=0.5)
        w = WeightVector((0.5, 3.0, 1.2))

        a = match_stratum(stratum, COVARIATES, w)
        b = match_stratum(stratum, COVARIATES, w.scaled(2.0))

        assert indices(stratum, a) == indices(stratum, b)

    def test_constant_covariate_ignored(self, make_unit):
        stratum = Stratum(0, treated=[make_unit(U=1.0, D=1.0)],
                          control=[make_unit(U=3.0, D=1.0), make_unit(U=1.5, D=1.0)])

        matched = match_stratum(stratum, ["U", "D"], ratio=1)

        assert matched.pairs[0].control is stratum.control[1]


class TestBalance:
    """测试 SMD 与平衡判断"""

    def test_smd_example(self, make_unit):
        pairs = [MatchedPair(make_unit(user_id=f"t{v}", U=float(v)), make_unit(user_id="c", U=float(c)), 0.0)
                 for v, c in ((1, 1), (2, 1), (3, 3))]

        assert smd([MatchedStratum(0, pairs)], "U") == pytest.approx(1 / 3)

    def test_smd_sign_follows_covariate(self, make_unit):
        pairs = [MatchedPair(make_unit(user_id=f"t{v}", U=-float(v)), make_unit(user_id="c", U=-float(c)), 0.0)
                 for v, c in ((1, 1), (2, 1), (3, 3))]

        assert smd([MatchedStratum(0, pairs)], "U") == pytest.approx(-1 / 3)

    def test_smd_counts_distinct_treated_for_spread(self, make_unit):
        treated = [make_unit(user_id=f"t{v}", U=float(v)) for v in (1, 3)]
        control = make_unit(user_id="c", U=0.0)
        pairs = [MatchedPair(t, control, 0.0) for t in treated for _ in range(2)]

        # 均值差 2, 去重后处理组标准差 sqrt(2)
        assert smd([MatchedStratum(0, pairs)], "U") == pytest.approx(2 / np.sqrt(2))

    def test_constant_treated_covariate(self, make_unit):
        pairs = [MatchedPair(make_unit(user_id=f"t{i}", U=1.0), make_unit(user_id="c", U=0.0), 0.0)
                 for i in range(3)]

        with pytest.raises(ZeroVarianceError):
            smd([MatchedStratum(0, pairs)], "U")

    @pytest.mark.parametrize("values, expected", [
        ({"U": 0.1}, False),
        ({"U": 0.0999}, True),
        ({"U": -0.05, "O": 0.09}, True),
        ({"U": -0.1}, False),
    ])
    def test_check_balance(self, values, expected):
        assert check_balance(BalanceReport.from_smd(values)) is expected

    def test_pre_match_smd(self, make_unit):
        stratum = Stratum(0, treated=[make_unit(U=1.0), make_unit(U=3.0)],
                          control=[make_unit(U=0.0), make_unit(U=0.0)])

        assert pre_match_smd([stratum], ["U"]) == {"U": pytest.approx(2 / np.sqrt(2))}


class TestGeneticSearch:
    """测试遗传搜索"""

    @staticmethod
    def strata(make_unit, seed=8):
        rng = np.random.default_rng(seed)
        return [random_stratum(make_unit, rng, 30, 90, shift=0.8, t_index=t) for t in (1, 3)]

    def test_deterministic_for_seed_and_threads(self, make_unit):
        strata = self.strata(make_unit)
        cfg = GeneticConfig(population_size=10, generations=4, seed=5)

        a = genetic_search(strata, COVARIATES, cfg)
        b = genetic_search(strata, COVARIATES, GeneticConfig(population_size=10, generations=4, seed=5, threads=4))

        assert a.weights == b.weights
        assert a.history == b.history
        assert [indices(s, m) for s, m in zip(strata, a.matched)] == [indices(s, m) for s, m in zip(strata, b.matched)]

    def test_history_non_increasing_and_beats_identity(self, make_unit):
        strata = self.strata(make_unit)
        cfg = GeneticConfig(population_size=12, generations=6, seed=1)

        result = genetic_search(strata, COVARIATES, cfg)
        identity = [match_stratum(s, COVARIATES, ratio=2) for s in strata]

        assert len(result.history) == cfg.generations + 1
        assert all(b <= a for a, b in zip(result.history, result.history[1:]))
        assert result.history[-1] <= balance_report(identity, COVARIATES).mean_abs_smd + 1e-12
        assert result.report.mean_abs_smd == pytest.approx(result.history[-1])
        assert set(result.report.pre_smd) == set(COVARIATES)

    def test_reweighting_fixes_dominant_imbalance(self, make_unit):
        """只有一个协变量失衡时, 搜索结果明显优于单位权重"""
        rng = np.random.default_rng(23)
        treated = [make_unit(user_id=f"t{i}", t_index=0, U=float(100 * rng.normal(2.0, 1.0)), O=float(rng.normal()))
                   for i in range(80)]
        control = [make_unit(user_id=f"c{i}", t_index=0, U=float(100 * rng.normal(0.0, 1.0)), O=float(rng.normal()))
                   for i in range(320)]
        strata = [Stratum(0, treated=treated, control=control)]

        identity = balance_report([match_stratum(strata[0], ["U", "O"], ratio=2)], ["U", "O"]).mean_abs_smd
        result = genetic_search(strata, ["U", "O"], GeneticConfig(population_size=16, generations=10, seed=0))

        assert result.report.mean_abs_smd <= 0.8 * identity

    def test_mahalanobis_distance(self, make_unit):
        strata = self.strata(make_unit)

        result = genetic_search(strata, COVARIATES,
                                GeneticConfig(population_size=6, generations=2, distance="mahalanobis"))

        assert [m.pair_count for m in result.matched] == [60, 60]

    def test_single_treated_unit(self, make_unit):
        stratum = Stratum(0, treated=[make_unit(U=1.0)], control=[make_unit(U=2.0), make_unit(U=3.0)])

        with pytest.raises(ZeroVarianceError):
            genetic_search([stratum], ["U"], GeneticConfig(population_size=4, generations=1))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            GeneticConfig(population_size=2)
        with pytest.raises(ConfigError):
            GeneticConfig.from_dict({"distance": "euclid"})


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
