import os

# pin BLAS threads before numpy loads so reruns are bit-reproducible
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

from dtbpde.netfam import NetworkSpec, PeriodicEmbeddingSpec, init_params


@pytest.fixture(scope="session")
def cache_dir(tmp_path_factory):
    """Shared cache for pretrained bases and spectral references across the session."""
    env = os.environ.get("DTBPDE_CACHE")
    return env if env else str(tmp_path_factory.mktemp("dtbpde-cache"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_net(d=1, widths=(6, 6), activation="tanh", seed=0, **kw):
    spec = NetworkSpec("mlp", d, 1, widths, activation, **kw)
    return spec, init_params(spec, seed)


def periodic_net(d=1, widths=(6,), P=3, seed=0):
    spec = NetworkSpec("periodic_mlp", d, 1, widths, "tanh", PeriodicEmbeddingSpec(P))
    return spec, init_params(spec, seed)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
