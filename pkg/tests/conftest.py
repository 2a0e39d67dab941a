import numpy as np
import pytest

from cgssl.datasets import LabeledSet, generate_toy_dataset
from cgssl.models import ClassifierSpec


@pytest.fixture(scope="session")
def toy_spec():
    return ClassifierSpec(depth=10, width=1, num_classes=4, image_shape=(16, 16, 3))


@pytest.fixture(scope="session")
def toy_data():
    return generate_toy_dataset(4, 25, 16, seed=7)


@pytest.fixture(scope="session")
def tiny_labeled():
    """40 images, 4 classes, 16x16: small enough for fast training tests."""
    return generate_toy_dataset(4, 10, 16, seed=11)


def make_labeled(images, labels, num_classes, id_start=0):
    labels = np.asarray(labels)
    return LabeledSet(images, labels, id_start + np.arange(len(labels)), num_classes)
