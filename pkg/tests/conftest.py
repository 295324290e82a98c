from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from adversarial_riesz.core import Dataset

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def treatment_dataset(n: int = 40, dim: int = 2, seed: int = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    d = rng.integers(0, 2, n).astype(float)
    d[:2] = [0.0, 1.0]
    w = rng.normal(size=(n, dim))
    y = d + w.sum(axis=1) + rng.normal(size=n)
    return Dataset(y=y, x=np.column_stack([d, w]), treatment=0)


@pytest.fixture
def ate_data() -> Dataset:
    return treatment_dataset()
