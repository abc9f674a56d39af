import numpy as np
import pytest

from mkv_milstein import Grid, RunConfig, cubic_mean_field, mean_field_ou_jump


@pytest.fixture
def linear_model():
    return mean_field_ou_jump()

@pytest.fixture
def cubic_model():
    return cubic_mean_field()


@pytest.fixture
def small_config():
    return RunConfig(grid=Grid(1.0, 64), particle_count=8,
                     monte_carlo_runs=2, base_seed=123)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
