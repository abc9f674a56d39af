import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mkv_milstein import Grid, MarkMeasure, RunConfig, substream, validate_model
from mkv_milstein.core import time_key
from mkv_milstein.measure import EmpiricalMeasure


class TestGrid:
    def test_floor_examples(self):
        assert Grid(1.0, 4).floor_time(0.3) == 0.25
        assert Grid(1.0, 4).floor_time(0.25) == 0.25
        assert Grid(2.0, 8).floor_time(1.999) == 1.75

    def test_endpoints(self):
        g = Grid(1.0, 4)
        assert g.floor_time(0.0) == 0.0
        assert g.floor_time(1.0) == 1.0
        assert g.floor_time(0.2499999) == 0.0

    def test_domain_errors(self):
        g = Grid(1.0, 4)
        with pytest.raises(ValueError):
            g.floor_time(-0.01)
        with pytest.raises(ValueError):
            g.floor_time(1.01)

    @given(st.integers(1, 97), st.floats(0.0, 1.0), st.floats(0.25, 4.0))
    @settings(max_examples=200, deadline=None)
    def test_floor_idempotent(self, n, frac, horizon):
        g = Grid(horizon, n)
        t = frac * horizon
        once = g.floor_time(t)
        assert g.floor_time(once) == once
        assert once <= t

    @given(st.integers(1, 50), st.integers(0, 50))
    @settings(max_examples=100, deadline=None)
    def test_grid_points_map_to_themselves(self, n, k):
        g = Grid(1.5, n)
        k = min(k, n)
        assert g.floor_time(g.point(k)) == g.point(k)

    def test_times_strictly_increasing(self):
        t = Grid(2.5, 17).times()
        assert t[0] == 0.0 and t[-1] == 2.5
        assert np.all(np.diff(t) > 0)

    def test_step_index_tie_rule(self):
        g = Grid(1.0, 4)
        # a grid point belongs to the earlier step
        assert g.step_index(0.25) == 0
        assert g.step_index(0.2500001) == 1
        assert g.step_index(1.0) == 3

    def test_invalid_construction(self):
        with pytest.raises(ValueError):
            Grid(0.0, 4)
        with pytest.raises(ValueError):
            Grid(1.0, 0)


class TestMarkMeasure:
    def test_total_intensity_and_probs(self):
        mm = MarkMeasure(np.array([1.0, -1.0, 2.0]), np.array([0.2, 0.2, 0.1]))
        assert mm.total_intensity == pytest.approx(0.5)
        assert mm.probabilities().sum() == pytest.approx(1.0)

    def test_symmetric_pair_moments(self):
        mm = MarkMeasure.symmetric_pair(0.5, 1.0)
        assert mm.moment(1) == 0.0
        assert mm.moment(2) == pytest.approx(0.5)

    def test_rejects_nonpositive_weights(self):
        with pytest.raises(ValueError):
            MarkMeasure(np.array([1.0]), np.array([0.0]))


class TestRunConfig:
    def test_validation(self):
        g = Grid(1.0, 4)
        with pytest.raises(ValueError):
            RunConfig(grid=g, particle_count=0)
        with pytest.raises(ValueError):
            RunConfig(grid=g, scheme="heun")
        with pytest.raises(ValueError):
            RunConfig(grid=g, taming="maybe")


class TestSubstream:
    def test_pure_function_of_key(self):
        a = substream(7, 1, 2, 3).standard_normal(4)
        b = substream(7, 1, 2, 3).standard_normal(4)
        assert np.array_equal(a, b)

    def test_distinct_keys_differ(self):
        a = substream(7, 1, 2, 3).standard_normal(4)
        b = substream(7, 1, 3, 3).standard_normal(4)
        c = substream(8, 1, 2, 3).standard_normal(4)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_time_key_roundtrip_distinct(self):
        assert time_key(0.125) != time_key(0.1250000001)


class TestValidateModel:
    def _probes(self, model, rng, count=4):
        pts = []
        for _ in range(count):
            x = rng.standard_normal(model.dim_state)
            mu = EmpiricalMeasure(rng.standard_normal((6, model.dim_state)))
            z = float(model.marks.atoms[0]) if model.marks.num_atoms else None
            pts.append((x, mu, z))
        return pts

    def test_linear_model_exact(self, linear_model, rng):
        report = validate_model(linear_model, self._probes(linear_model, rng))
        assert report.ok
        assert max(report.max_rel_error.values()) < 1e-8
        assert report.compensator_error < 1e-12

    def test_cubic_model_within_fd_tolerance(self, cubic_model, rng):
        report = validate_model(cubic_model, self._probes(cubic_model, rng))
        assert report.ok
        assert max(report.max_rel_error.values()) < 1e-6

    def test_injected_fault_flagged(self, linear_model, rng):
        from dataclasses import replace
        broken = replace(linear_model,
                         dx_drift=lambda x, mu: np.full(np.shape(x)[:-1] + (1, 1), 99.0))
        report = validate_model(broken, self._probes(linear_model, rng))
        assert not report.ok
        assert any(kind == "dx_drift" for kind, _ in report.flagged)

    def test_nonfinite_coefficient_fatal(self, linear_model, rng):
        from dataclasses import replace
        broken = replace(linear_model,
                         drift=lambda x, mu: np.full(np.shape(x), np.nan))
        report = validate_model(broken, self._probes(linear_model, rng))
        assert report.fatal
