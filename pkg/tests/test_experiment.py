import json
from itertools import product

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from augforge.errors import AllZeroDifferences, CorruptLedger, DuplicateRun, TooFewSamples, ValidationError
from augforge.experiment import (
    ExperimentPlan,
    RunResult,
    _ranks,
    compare_runs,
    expand_design,
    format_percent,
    improvement_report,
    read_ledger,
    record_run,
    render_tables,
    sign_test,
    wilcoxon_null,
    wilcoxon_signed_rank,
)

import oracles

# Clear-weather detection results, one column per training recipe.
CLEAR_TABLE = {
    "Baseline": {"map": 0.245, "map50": 0.442, "fr": 0.359, "vr": 0.443},
    "Flip": {"map": 0.257, "map50": 0.458, "fr": 0.343, "vr": 0.433},
    "Flip+Aug": {"map": 0.259, "map50": 0.464, "fr": 0.359, "vr": 0.429},
    "Batched Aug": {"map": 0.263, "map50": 0.466, "fr": 0.325, "vr": 0.438},
}


class TestDesign:
    def test_ratio_factor_with_folds(self):
        plan = ExperimentPlan({"ratio": ["1:1", "1:2", "1:3"]}, n_folds=5)
        runs = expand_design(plan)
        assert len(runs) == 15
        assert [(r.run_id, r.fold_index) for r in runs[:6]] == [
            ("r000", 0), ("r000", 1), ("r000", 2), ("r000", 3), ("r000", 4), ("r001", 0),
        ]

    def test_factor_order(self):
        plan = ExperimentPlan({"a": [1, 2], "b": ["x", "y", "z"]})
        runs = expand_design(plan)
        assert [tuple(r.factor_levels.values()) for r in runs] == list(product([1, 2], ["x", "y", "z"]))
        assert runs == expand_design(plan)

    def test_rejects_unknown_metric(self):
        with pytest.raises(ValidationError):
            ExperimentPlan({"a": [1]}, measured_metrics=("accuracy",))

    def test_round_trip(self):
        plan = ExperimentPlan({"a": [1, 2]}, ("miou",), "screening", {"model": "x"}, n_folds=3)
        assert ExperimentPlan.from_dict(json.loads(json.dumps(plan.to_dict()))) == plan


class TestLedger:
    def test_append_and_read(self, tmp_path):
        path = tmp_path / "l.jsonl"
        for i in range(3):
            record_run(path, RunResult(f"r{i}", {"x": i}, 0, {"map": 0.1 * i}))
        recs = read_ledger(path)
        assert [r.run_id for r in recs] == ["r0", "r1", "r2"]
        assert json.loads(path.read_text().splitlines()[0])["schema"] == 1

    def test_duplicate(self, tmp_path):
        path = tmp_path / "l.jsonl"
        record_run(path, RunResult("r", {}, 0, {"map": 0.1}))
        record_run(path, RunResult("r", {}, 1, {"map": 0.1}))
        with pytest.raises(DuplicateRun):
            record_run(path, RunResult("r", {}, 0, {"map": 0.2}))

    def test_corrupt_line(self, tmp_path):
        path = tmp_path / "l.jsonl"
        record_run(path, RunResult("r", {}, 0, {"map": 0.1}))
        with open(path, "a") as fh:
            fh.write("{broken\n")
        with pytest.raises(CorruptLedger, match="line 2"):
            read_ledger(path)

    def test_metric_range(self):
        with pytest.raises(ValidationError):
            RunResult("r", {}, 0, {"map": 1.5})

    def test_plan_metrics_enforced(self, tmp_path):
        plan = ExperimentPlan({"a": [1]}, measured_metrics=("map",))
        with pytest.raises(ValidationError):
            record_run(tmp_path / "l.jsonl", RunResult("r", {}, 0, {"miou": 0.5}), plan)


class TestImprovement:
    @pytest.mark.parametrize(
        "b,v,expected",
        [(0.245, 0.263, "+7.35"), (0.221, 0.239, "+8.14"), (0.3743, 0.5356, "+43.09"), (0.7275, 0.6480, "-10.93")],
    )
    def test_reference_deltas(self, b, v, expected):
        r = improvement_report({"map": b}, {"map": v})
        assert format_percent(r["map"]["percent"]) == expected

    def test_zero_baseline(self):
        r = improvement_report({"fr": 0.0}, {"fr": 0.1})
        assert r["fr"]["percent"] is None and r["fr"]["note"] == "undefined baseline"

    def test_directions(self):
        r = improvement_report({"map": 0.2, "vr": 0.2}, {"map": 0.2, "vr": 0.2})
        assert r["map"]["direction"] == "↑" and r["vr"]["direction"] == "↓"
        assert r["map"]["percent"] == 0.0

    def test_key_mismatch(self):
        with pytest.raises(ValidationError):
            improvement_report({"map": 0.1}, {"vr": 0.1})


class TestStatistics:
    @pytest.mark.parametrize("n", [5, 6])
    def test_sign_all_positive(self, n):
        r = sign_test([1.0] * n, [0.0] * n, "greater")
        assert r["p_value"] == 2.0**-n
        assert sign_test([1.0] * n, [0.0] * n)["p_value"] == 2.0 ** (1 - n)

    def test_wilcoxon_all_positive_six(self):
        r = wilcoxon_signed_rank([1, 2, 3, 4, 5, 6], [0] * 6, "greater")
        assert r["statistic"] == 21 and r["p_value"] == 0.015625

    def test_zero_differences(self):
        with pytest.raises(AllZeroDifferences):
            compare_runs([1, 2, 3], [1, 2, 3])

    def test_too_few(self):
        with pytest.raises(TooFewSamples):
            wilcoxon_signed_rank([1], [0])

    def test_ties_share_ranks(self):
        assert _ranks([3, 1, 3, 2]) == [3.5, 1, 3.5, 2]

    @settings(max_examples=150, deadline=None)
    @given(st.lists(st.integers(-4, 4).filter(lambda x: x != 0), min_size=1, max_size=10))
    def test_null_matches_enumeration(self, diffs):
        ranks = _ranks([abs(d) for d in diffs])
        assert wilcoxon_null(ranks) == oracles.wilcoxon_enumerated(ranks)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=2, max_size=25))
    def test_p_in_unit_interval(self, diffs):
        if all(d == 0 for d in diffs):
            return
        for alt in ("two-sided", "greater", "less"):
            p = wilcoxon_signed_rank(diffs, [0.0] * len(diffs), alt)["p_value"]
            assert 0 < p <= 1

    def test_scipy_agreement_without_ties(self):
        scipy_stats = pytest.importorskip("scipy.stats")
        a = [0.31, 0.27, 0.35, 0.29, 0.33, 0.30, 0.36]
        b = [0.30, 0.29, 0.31, 0.24, 0.32, 0.22, 0.28]
        ours = wilcoxon_signed_rank(a, b)["p_value"]
        theirs = scipy_stats.wilcoxon(a, b, method="exact").pvalue
        assert ours == pytest.approx(theirs, abs=1e-12)


class TestTables:
    def ledger(self):
        return [RunResult(f"r{i}", {"model": name}, 0, vals) for i, (name, vals) in enumerate(CLEAR_TABLE.items())]

    def test_cells_match_input(self):
        t = render_tables(self.ledger(), column_factor="model", baseline="Baseline")
        assert t.columns == list(CLEAR_TABLE)
        for name, vals in CLEAR_TABLE.items():
            for key, label in (("map", "mAP"), ("map50", "mAP50"), ("fr", "FR"), ("vr", "VR")):
                assert t.cells[(label, name)] == vals[key]

    def test_bold_best(self):
        t = render_tables(self.ledger(), column_factor="model")
        assert t.best(("FR", "fr")) == {"Batched Aug"}
        assert t.best(("VR", "vr")) == {"Flip+Aug"}
        assert t.best(("mAP", "map")) == {"Batched Aug"}
        text = t.to_text()
        assert "**0.325**" in text and "**0.429**" in text and "**0.263**" in text

    def test_fold_means(self):
        recs = [RunResult("a", {"v": "x"}, f, {"map": m}) for f, m in enumerate((0.2, 0.4))]
        t = render_tables(recs, column_factor="v")
        assert t.cells[("mAP", "x")] == pytest.approx(0.3)
        assert "means over folds" in t.to_text()

    def test_single_cell(self):
        t = render_tables([RunResult("a", {}, 0, {"miou": 0.5})])
        assert t.rows == [("mIoU", "miou")] and t.columns == ["a"]

    def test_missing_cells_reported(self):
        recs = [RunResult("a", {"v": "x"}, 0, {"map": 0.1}), RunResult("b", {"v": "y"}, 0, {"vr": 0.1})]
        t = render_tables(recs, column_factor="v")
        assert "mAP / y" in t.missing and "n/a" in t.to_text()

    def test_csv_raw_means(self):
        t = render_tables(self.ledger(), column_factor="model", baseline="Baseline")
        header, first = t.to_csv().splitlines()[:2]
        assert header.startswith("metric,Baseline,Flip")
        assert first.startswith("mAP,0.245,0.257,0.259,0.263,")
