import os
from types import SimpleNamespace

import numpy as np
import pytest

from nrtheat.config import RunConfig
from nrtheat.extension import difference_basis
from nrtheat.geometry import circle
from nrtheat.forward import TimeGrid
from nrtheat.operators import OperatorCache
from nrtheat.scan import synthesize_data

ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def cache_dir(tmp_path_factory):
    """Operator cache shared by the whole session (also seen by the CLI)."""
    d = tmp_path_factory.mktemp("nrt_cache")
    old = os.environ.get("NRT_CACHE_DIR")
    os.environ["NRT_CACHE_DIR"] = str(d)
    yield d
    if old is None:
        os.environ.pop("NRT_CACHE_DIR", None)
    else:
        os.environ["NRT_CACHE_DIR"] = old


@pytest.fixture(scope="session")
def cache(cache_dir):
    return OperatorCache(cache_dir)


@pytest.fixture(scope="session")
def std(cache):
    """Standard configuration with freshly synthesized data (about a minute)."""
    cfg = RunConfig.standard()
    data = synthesize_data(cfg, cache)
    return SimpleNamespace(
        cfg=cfg,
        omega=circle(),
        cavity=circle((0.3, 0.0), 0.25),
        grid=TimeGrid(1.0, 32),
        data=data,
        cauchy_w=data.cauchy_w,
        w_basis=difference_basis(data.u_basis, data.mu_basis),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def acceptance():
    """Record one summary line per acceptance criterion."""

    def record(number, passed, detail):
        status = "PASS" if passed else "FAIL"
        ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {status}  {detail}"
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
