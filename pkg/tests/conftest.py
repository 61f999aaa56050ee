import numpy as np
import pytest

from eemmix.core import AllPixels, EemGrid, ReplicateSet, WavelengthAxis, build_mask


def make_set(rows, sample_id="x", weights=None):
    """ReplicateSet on a one-excitation grid whose pixels are the given values."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    p = rows.shape[1]
    ex = WavelengthAxis(200.0, 1.0, 1)
    em = WavelengthAxis(300.0, 1.0, p)
    mask = build_mask(ex, em, AllPixels())
    grids = [EemGrid(ex, em, r.reshape(p, 1), mask) for r in rows]
    return ReplicateSet(sample_id, grids, weights)


@pytest.fixture
def make_replicates():
    return make_set
