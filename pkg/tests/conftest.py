import sys
from pathlib import Path

import numpy as np
import pytest

from evex.fixtures import toy_blob_image
from evex.imaging import Image

HELPERS = Path(__file__).parent / "helpers"


def fake_server_cmd(mode: str) -> tuple[str, ...]:
    return (sys.executable, str(HELPERS / "fake_server.py"), mode)


@pytest.fixture(scope="session")
def toy_scene():
    """(image, ground-truth mask) for the 64x64 toy blob scene."""
    return toy_blob_image()


@pytest.fixture()
def random_image():
    rng = np.random.default_rng(7)
    return Image(rng.integers(0, 256, size=(24, 24, 3), dtype=np.uint8))
