import numpy as np
import pytest
import torch

from reflectsep.image import from_numpy, resize

PHOTOS = ("astronaut", "chelsea", "coffee", "rocket", "immunohistochemistry")


def photo(name: str, size: int = 64) -> torch.Tensor:
    import skimage.data

    return resize(from_numpy(getattr(skimage.data, name)()), size)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def photos():
    return {n: photo(n) for n in PHOTOS}


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(criterion: str, ok: bool | None, detail: str) -> None:
    """``ok=None`` records a skipped criterion."""
    status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
    line = f"[{status}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
