import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from srdepth.synthscene import generate_dataset  # noqa: E402
from srdepth.tensorcore import Tensor  # noqa: E402


def t64(arr, grad=True):
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=grad)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset():
    """Two scenes x three triplets at the default 32x96 size."""
    return generate_dataset(2, 3, size=(32, 96), seed=11)


@pytest.fixture(scope="session")
def medium_dataset():
    """Twenty textured scenes, one triplet each, at 64x192."""
    return generate_dataset(20, 1, size=(64, 192), seed=5)


# acceptance criteria report their outcome here; the terminal summary prints one line each
ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} {detail}")
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[n]
        status = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status} | " + " | ".join(d for _, d in parts))
