"""
测试研究设计
"""
import numpy as np
import pytest

from src.design import (DesignConfig, SubpopulationFilter, TreatmentKind, TreatmentRule, assign_treatment,
                        design_strata, design_summary, filter_subpopulation, stratify)
from src.errors import ConfigError, DegenerateDesignError
from src.ingest import PersonalityScores


def values_of(units, name="U"):
    return sorted(u.value(name) for u in units)


class TestTreatmentRule:
    """测试处理规则"""

    def test_alpha_range(self):
        with pytest.raises(ConfigError):
            TreatmentRule("U", TreatmentKind.LOW_TAIL, alpha=1.2)
        with pytest.raises(ConfigError):
            TreatmentRule("U", TreatmentKind.LOW_TAIL, alpha=-0.1)

    def test_unknown_variable(self):
        with pytest.raises(ConfigError):
            TreatmentRule("sleep", TreatmentKind.LOW_TAIL)

    def test_strict_mode_uses_campus_reference(self):
        rule = DesignConfig(o_rule_uses_campus_mean=True).rule("O", TreatmentKind.LOW_TAIL, 0.1)

        assert rule.reference_variable == "U"
        assert DesignConfig().rule("O", TreatmentKind.LOW_TAIL).reference_variable == "O"


class TestAssignTreatment:
    """测试处理分配"""

    def test_low_tail_at_mean(self, make_unit):
        units = [make_unit(U=float(v)) for v in (1, 2, 3, 4)]

        stratum = assign_treatment(units, TreatmentRule("U", TreatmentKind.LOW_TAIL))

        assert values_of(stratum.treated) == [1, 2]
        assert values_of(stratum.control) == [3, 4]
        assert stratum.mean == 2.5

    def test_low_tail_exclusion_band(self, make_unit):
        units = [make_unit(U=float(v)) for v in (8000, 8499, 8501, 11499, 11501, 12000)]

        stratum = assign_treatment(units, TreatmentRule("U", TreatmentKind.LOW_TAIL, 0.15), mean=10000.0)

        assert values_of(stratum.treated) == [8000, 8499]
        assert values_of(stratum.excluded) == [8501, 11499]
        assert values_of(stratum.control) == [11501, 12000]

    def test_high_tail(self, make_unit):
        units = [make_unit(SC=float(v)) for v in (0, 10, 20, 30)]

        stratum = assign_treatment(units, TreatmentRule("SC", TreatmentKind.HIGH_TAIL))

        assert values_of(stratum.treated, "SC") == [20, 30]
        assert values_of(stratum.control, "SC") == [0, 10]

    def test_positive(self, make_unit):
        units = [make_unit(E=float(v)) for v in (0, 0, 120)]

        stratum = assign_treatment(units, TreatmentRule("E", TreatmentKind.POSITIVE))

        assert values_of(stratum.treated, "E") == [120]
        assert len(stratum.control) == 2

    def test_reference_variable_sets_threshold(self, make_unit):
        units = [make_unit(U=100.0, O=50.0), make_unit(U=100.0, O=150.0), make_unit(U=100.0, O=90.0)]

        stratum = assign_treatment(units, TreatmentRule("O", TreatmentKind.LOW_TAIL, reference="U"))

        assert values_of(stratum.treated, "O") == [50, 90]

    def test_degenerate(self, make_unit):
        with pytest.raises(DegenerateDesignError, match="degenerate design"):
            assign_treatment([make_unit(U=5.0), make_unit(U=5.0)], TreatmentRule("U", TreatmentKind.LOW_TAIL))

    def test_larger_alpha_shrinks_groups(self, make_unit):
        rng = np.random.default_rng(2)
        units = [make_unit(U=float(v)) for v in rng.uniform(0, 20000, 200)]
        previous = None
        for alpha in (0.0, 0.1, 0.2, 0.3):
            stratum = assign_treatment(units, TreatmentRule("U", TreatmentKind.LOW_TAIL, alpha))
            treated = {id(u) for u in stratum.treated}
            control = {id(u) for u in stratum.control}
            if previous is not None:
                assert treated <= previous[0]
                assert control <= previous[1]
            previous = (treated, control)

    def test_order_invariant(self, make_unit):
        units = [make_unit(U=float(v)) for v in (5, 1, 9, 3, 7)]
        rule = TreatmentRule("U", TreatmentKind.LOW_TAIL)

        a = assign_treatment(units, rule)
        b = assign_treatment(list(reversed(units)), rule)

        assert values_of(a.treated) == values_of(b.treated)
        assert values_of(a.control) == values_of(b.control)


class TestStrata:
    """测试分层"""

    def test_stratify_by_instant(self, make_unit):
        units = [make_unit(t_index=t) for t in (0, 2, 2, 5)]

        strata = stratify(units, 6)

        assert [len(s) for s in strata] == [1, 0, 2, 0, 0, 1]

    def test_degenerate_stratum_skipped(self, make_unit):
        units = [make_unit(t_index=1, U=0.0), make_unit(t_index=1, U=0.0),
                 make_unit(t_index=3, U=100.0), make_unit(t_index=3, U=300.0)]

        strata = design_strata(units, TreatmentRule("U", TreatmentKind.LOW_TAIL))

        assert [s.t_index for s in strata] == [3]
        summary = design_summary(strata, TreatmentRule("U", TreatmentKind.LOW_TAIL))
        assert summary["strata"] == [{"t_index": 3, "mean": 200.0, "treated": 1, "control": 1, "excluded": 0}]

    def test_all_strata_degenerate(self, make_unit):
        with pytest.raises(DegenerateDesignError):
            design_strata([make_unit(t_index=1, U=0.0)], TreatmentRule("U", TreatmentKind.LOW_TAIL))

    def test_pooled_mean(self, make_unit):
        units = [make_unit(t_index=1, U=10.0), make_unit(t_index=1, U=30.0),
                 make_unit(t_index=2, U=20.0), make_unit(t_index=2, U=40.0)]
        rule = TreatmentRule("U", TreatmentKind.LOW_TAIL)

        assert [s.mean for s in design_strata(units, rule)] == [20.0, 30.0]
        assert [s.mean for s in design_strata(units, rule, cfg=DesignConfig(pooled_mean=True))] == [25.0, 25.0]


class TestSubpopulation:
    """测试子人群筛选"""

    @staticmethod
    def scores(uid, extroversion):
        return PersonalityScores(uid, extroversion, 3.0, 3.0, 3.0, 3.0)

    def test_strictly_above_participant_mean(self, make_unit):
        participants = {"a": self.scores("a", 2), "b": self.scores("b", 4), "c": self.scores("c", 6)}
        units = [make_unit(user_id=uid) for uid in ("a", "b", "c", "c")]

        kept = filter_subpopulation(units, participants, SubpopulationFilter.EXTROVERTS)

        assert [u.user_id for u in kept] == ["c", "c"]

    def test_all_keeps_everything(self, make_unit):
        units = [make_unit(user_id="a"), make_unit(user_id="z")]

        assert filter_subpopulation(units, {}, SubpopulationFilter.ALL) == units

    def test_equal_scores_give_empty_subpopulation(self, make_unit):
        participants = {"a": self.scores("a", 3), "b": self.scores("b", 3)}

        assert filter_subpopulation([make_unit(user_id="a")], participants, SubpopulationFilter.EXTROVERTS) == []


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
