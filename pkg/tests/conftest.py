import numpy as np
import pytest

from langevin_anneal.potentials import CATALOG, catalog_get


@pytest.fixture(params=sorted(CATALOG))
def catalog_potential(request):
    return catalog_get(request.param)


def probe(dim, n=100, lo=-2.0, hi=2.0, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, size=(n, dim))
