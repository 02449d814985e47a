import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from augforge.errors import BudgetExceeded, UnknownMetric, ValidationError
from augforge.search import (
    BUDGET_ENV,
    Dim,
    ParamSpace,
    SearchTrace,
    grid_search,
    improvement_objective,
    param_key,
    random_search,
)

UNIT = ParamSpace((Dim("x", "continuous", lo=0.0, hi=1.0),))


def parabola(p):
    return -((p["x"] - 0.5) ** 2)


class TestSpace:
    def test_grid_endpoints(self):
        assert Dim("a", "continuous", lo=1, hi=3).grid(3) == [1.0, 2.0, 3.0]

    def test_log_grid(self):
        assert Dim("a", "continuous", lo=1, hi=100, log=True).grid(3) == pytest.approx([1, 10, 100])

    def test_mixed_grid_size(self):
        space = ParamSpace((Dim("a", "continuous", lo=0, hi=1), Dim("b", "discrete", values=(1, 2, 3))))
        assert space.grid_size(4) == 12 and len(space.grid(4)) == 12

    def test_round_trip(self):
        space = ParamSpace((Dim("a", "continuous", lo=0, hi=1, log=False), Dim("b", "discrete", values=("x", "y"))))
        assert ParamSpace.from_dict(space.to_dict()) == space

    def test_rejects_empty_interval(self):
        with pytest.raises(ValidationError):
            Dim("a", "continuous", lo=1, hi=1)

    def test_param_key_order_free(self):
        assert param_key({"b": 1, "a": 2}) == param_key({"a": 2, "b": 1})


class TestGrid:
    def test_recovers_optimum(self):
        trace = grid_search(UNIT, 11, parabola)
        assert trace.best_params == {"x": 0.5}
        assert trace.best_value == 0.0

    def test_budget(self):
        with pytest.raises(BudgetExceeded):
            grid_search(UNIT, 11, parabola, budget=10)

    def test_budget_env(self, monkeypatch):
        monkeypatch.setenv(BUDGET_ENV, "5")
        with pytest.raises(BudgetExceeded):
            grid_search(UNIT, 6, parabola)

    def test_parallel_same_order(self):
        assert grid_search(UNIT, 21, parabola, jobs=4).to_dict() == grid_search(UNIT, 21, parabola).to_dict()


class TestRandom:
    def test_deterministic(self):
        a = random_search(UNIT, 25, 99, parabola)
        b = random_search(UNIT, 25, 99, parabola)
        assert a.to_dict() == b.to_dict()
        assert random_search(UNIT, 25, 100, parabola).params != a.params

    def test_samples_in_space(self):
        space = ParamSpace((Dim("a", "continuous", lo=2, hi=3), Dim("b", "discrete", values=(5, 7))))
        trace = random_search(space, 50, 1, lambda p: 0.0)
        assert all(space.contains(p) for p in trace.params)


class TestArgmax:
    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(-5, 5), min_size=1, max_size=30))
    def test_first_maximum(self, values):
        trace = SearchTrace([{"i": i} for i in range(len(values))], [float(v) for v in values])
        assert trace.best_index == values.index(max(values))

    def test_trace_round_trip(self):
        trace = grid_search(UNIT, 5, parabola)
        assert SearchTrace.from_dict(trace.to_dict()).to_dict() == trace.to_dict()


class TestImprovementObjective:
    def test_directions(self):
        assert improvement_objective({"map": 0.2}, {"map": 0.3}, "map") == pytest.approx(0.1)
        assert improvement_objective({"vr": 0.4}, {"vr": 0.1}, "vr") == pytest.approx(0.3)

    def test_unknown(self):
        with pytest.raises(UnknownMetric):
            improvement_objective({"x": 1}, {"x": 2}, "x")


class TestEdgeCases:
    def test_single_sample(self):
        trace = random_search(UNIT, 1, 3, parabola)
        assert trace.best_index == 0 and len(trace) == 1

    def test_constant_objective_picks_first(self):
        assert random_search(UNIT, 10, 3, lambda p: 1.0).best_index == 0
        assert grid_search(UNIT, 4, lambda p: 1.0).best_index == 0

    def test_grid_has_no_duplicates(self):
        space = ParamSpace((Dim("a", "continuous", lo=0, hi=1), Dim("b", "discrete", values=(1, 2))))
        keys = [param_key(p) for p in grid_search(space, 5, lambda p: 0.0).params]
        assert len(keys) == len(set(keys)) == 10

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_best_dominates(self, seed):
        trace = random_search(UNIT, 20, seed, lambda p: (p["x"] * 7919) % 1)
        assert all(trace.best_value >= v for v in trace.values)
