import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from potshare.coalition import CounterfactualPair
from potshare.models import LinearModel, MlpModel, MultilinearModel, ThresholdModel


def make_zoo(d=4, seed=0):
    """A small model zoo on ``d`` features, one of each family."""
    rng = np.random.default_rng(seed)
    return {
        "linear": LinearModel(rng.normal(size=d), 0.3),
        "multilinear": MultilinearModel(
            d, (((0, 1), 1.5), ((1, 2), -0.7), ((0, 1, 2), 2.0), ((3,), 0.4), ((0, 2, 3), -1.1)), 0.1
        ),
        "threshold": ThresholdModel(d, (
            {"feature": 0, "cut": 0.45, "left": 0.0,
             "right": {"feature": 1, "cut": 0.55, "left": 0.2, "right": 1.0}},
            {"feature": 2, "cut": 0.3, "left": -0.1, "right": {"feature": 3, "cut": 0.6, "left": 0.0, "right": 0.5}},
        )),
        "mlp_tanh": MlpModel((rng.normal(size=(d, 6)), rng.normal(size=(6, 1))),
                             (rng.normal(size=6), rng.normal(size=1)), "tanh", "sigmoid"),
        "mlp_relu": MlpModel((rng.normal(size=(d, 5)), rng.normal(size=(5, 1))),
                             (rng.normal(size=5), rng.normal(size=1)), "relu", "identity"),
    }


@pytest.fixture
def zoo():
    return make_zoo()


@pytest.fixture
def pair4():
    return CounterfactualPair([0.1, 0.2, 0.05, 0.3], [0.9, 0.8, 0.75, 0.95])
