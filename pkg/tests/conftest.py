import numpy as np
import pytest

from plenopress.camera_geometry import CameraSpec, canonical_tspc
from plenopress.codec_model.model import ModelParams


@pytest.fixture(scope="session")
def tspc() -> CameraSpec:
    return canonical_tspc()


@pytest.fixture(scope="session")
def small_spec(tspc) -> CameraSpec:
    """TSPC optics with a 12 x 8 lattice of complete microlenses."""
    return tspc.subgrid(12, 8)


@pytest.fixture(scope="session")
def toy_params() -> ModelParams:
    return ModelParams.init(N=8, M=8, heads=1, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting --------------------------------------------------------

ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
