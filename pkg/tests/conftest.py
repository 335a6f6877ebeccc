import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def disk_mask(h, w, cy, cx, diameter):
    """Pixels whose centres lie within diameter/2 of (cy, cx)."""
    yy, xx = np.mgrid[0:h, 0:w]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= (diameter / 2.0) ** 2
