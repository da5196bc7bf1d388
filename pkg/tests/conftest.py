from pathlib import Path

import numpy as np
import pytest

from aecodec import data

FIXTURE_DIR = Path(__file__).parent / "fixtures"
FIXTURE_IMAGE_DIR = FIXTURE_DIR / "images"
FIXTURE_JPEG = FIXTURE_DIR / "fixture_00_q75.jpg"


@pytest.fixture(scope="session")
def fixture_image_dir():
    return FIXTURE_IMAGE_DIR


@pytest.fixture(scope="session")
def fixture_records():
    return data.load_directory(FIXTURE_IMAGE_DIR)


@pytest.fixture(scope="session")
def fixture_images(fixture_records):
    """The bundled 8-image set as a (8,3,64,64) float32 tensor."""
    return np.stack([data.resize_to_square(r, 64) for r in fixture_records])
