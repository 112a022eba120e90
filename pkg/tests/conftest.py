import sys
from pathlib import Path

import numpy as np
import pytest

# make tests/oracles.py importable regardless of invocation directory
sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(20260810))
