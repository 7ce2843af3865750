import time

import numpy as np
import pytest

from zilm.fit import FitConfig, ModelKind, fit
from zilm.models import build_design
from zilm.simulate import SimConfig, generate_dataset


@pytest.fixture(scope="session")
def tiny_dataset():
    """10 students x 5 items, 5 attempts each: the gradient-check instance."""
    return generate_dataset(SimConfig(n_students=10, n_items=5, n_attempts_per_student=5, seed=0))


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(SimConfig(n_students=120, n_items=40, seed=3))


@pytest.fixture(scope="session")
def small_design(small_dataset):
    return build_design(small_dataset)


@pytest.fixture(scope="session")
def default_dataset():
    """The default-scale population (5000 students x 400 items, seed 0)."""
    return generate_dataset(SimConfig())


@pytest.fixture(scope="session")
def default_design(default_dataset):
    return build_design(default_dataset)


@pytest.fixture(scope="session")
def default_fit_seconds():
    """Wall-clock spent fitting the default models; filled by default_models."""
    return {}


@pytest.fixture(scope="session")
def default_models(default_dataset, default_design, default_fit_seconds):
    """All three kinds fitted on the default dataset with default config."""
    cfg = FitConfig()
    start = time.perf_counter()
    models = {
        kind: fit(default_dataset, kind, cfg, design=default_design)
        for kind in (ModelKind.IRT, ModelKind.IRT_ZILM, ModelKind.KTM1)
    }
    default_fit_seconds["total"] = time.perf_counter() - start
    return models


@pytest.fixture(scope="session")
def default_delivery_report():
    from zilm.evaluate import forced_delivery_experiment
    return forced_delivery_experiment(SimConfig())


@pytest.fixture(scope="session")
def default_policy_reports(default_models):
    from zilm.evaluate import policy_experiment
    cfg = SimConfig()
    return {
        "random": policy_experiment(cfg, "random"),
        "oracle-active": policy_experiment(cfg, "oracle-active"),
        "oracle-adversarial": policy_experiment(cfg, "oracle-adversarial"),
        "model-active": policy_experiment(cfg, "model-active",
                                          model=default_models[ModelKind.IRT_ZILM]),
    }


def true_abilities(dataset):
    return np.array([s.ability for s in dataset.students])
