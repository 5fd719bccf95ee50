"""
Shared fixtures for the counting service tests
"""

import os

import numpy as np
import pytest

from models.config_models import TrainConfig
from models.sample_models import ClassSpec, SceneSpec, ShapeKind
from scenes.generator import generate_scene
from tensor.autograd import set_default_dtype

slow = pytest.mark.skipif(os.environ.get("COUNTER_SLOW") != "1", reason="set COUNTER_SLOW=1 to run experiment tests")


@pytest.fixture(autouse=True)
def float64_default():
    set_default_dtype("float64")
    yield
    set_default_dtype("float64")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """32x32 query, 8x8 exemplars, S=8, C=8: small enough for finite differences"""
    return TrainConfig.profile("desk").with_changes(
        **{
            "encoder.query_size": (32, 32),
            "encoder.exemplar_size": (8, 8),
            "encoder.embed_dim": 8,
            "encoder.layers": 1,
            "relation.iterations": 1,
            "relation.shape_hidden": 4,
            "relation.prototype_size": 1,
            "batch_size": 2,
        }
    )


@pytest.fixture
def tiny_spec():
    """Two classes on a 32x32 canvas: red discs to count, red squares as distractors"""
    return SceneSpec(
        image_size=32,
        exemplar_size=8,
        classes=[
            ClassSpec(shape=ShapeKind.DISC, count_range=(2, 4), radius_range=(1.5, 2.5)),
            ClassSpec(shape=ShapeKind.SQUARE, count_range=(1, 2), radius_range=(1.5, 2.5)),
        ],
    )


@pytest.fixture
def tiny_samples(tiny_spec):
    return [generate_scene(tiny_spec, np.random.default_rng([7, i]), f"t{i}") for i in range(4)]
