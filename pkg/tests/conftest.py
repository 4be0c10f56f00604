"""Shared fixtures: the bundled toy model, eval set, and reference results."""

from pathlib import Path

import numpy as np
import pytest

from mxvit.model import evaluate, load_dataset, load_manifest

ROOT = Path(__file__).resolve().parent.parent
ASSETS = ROOT / "assets"
GOLDEN = Path(__file__).resolve().parent / "golden"


@pytest.fixture(scope="session")
def manifest():
    return load_manifest(ASSETS / "toy" / "manifest.json")


@pytest.fixture(scope="session")
def dataset(manifest):
    return load_dataset(ASSETS / "dataset", manifest.image_size)


@pytest.fixture(scope="session")
def reference_result(manifest, dataset):
    images, labels = dataset
    return evaluate(manifest, images, labels, "reference")


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
