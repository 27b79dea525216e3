import numpy as np
import pytest

from bacerul import losses as L
from bacerul.data import Normalizer
from bacerul.model import Dimensions, NetworkShapes, build_model

TINY_DIMS = Dimensions(m=3, n=5, d_z=2, rul_cap=125)
TINY_SHAPES = NetworkShapes(hidden_d=(6,), hidden_eg1=(6, 4), hidden_eg2=(6,), dropout=0.0)


def tiny_model(seed=0, ablation="none", shapes=TINY_SHAPES):
    rng = np.random.default_rng(seed)
    dims = TINY_DIMS if ablation != "no-cond" else Dimensions(3, 3, 2, 125)
    model = build_model(dims, Normalizer(np.zeros(dims.m), np.ones(dims.m)), rng, shapes, ablation)
    # positive hidden biases keep relu units alive for finite differences
    for net in model.networks().values():
        for b in net.biases[:-1]:
            b[:] = rng.uniform(0.05, 0.3, b.shape)
    return model


def tiny_batches(model, seed=1, batch=8, n_normal=4):
    rng = np.random.default_rng(seed)
    m, n, dz = model.dims.m, model.dims.n, model.dims.d_z
    ce = L.CeBatch(rng.normal(size=(batch, m)), rng.uniform(-1, 1, (batch, n)))
    rp = L.RpBatch(
        rng.uniform(0.05, 0.95, batch), rng.normal(size=(batch, n)), rng.uniform(-1, 1, (batch, dz)),
        np.ones(n_normal), rng.normal(size=(n_normal, n)), rng.uniform(-1, 1, (n_normal, dz)),
        rng.uniform(0.05, 1.0, batch), rng.normal(size=(batch, n)), rng.uniform(-1, 1, (batch, dz)),
    )
    return ce, rp


@pytest.fixture
def model():
    return tiny_model()


@pytest.fixture
def batches(model):
    return tiny_batches(model)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
