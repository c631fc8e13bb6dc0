import numpy as np
import pytest


def smooth_blocks(n, seed=0, size=64):
    """Cheap natural-ish test blocks: low-pass noise plus a gradient."""
    rng = np.random.default_rng(seed)
    from scipy.ndimage import gaussian_filter

    out = []
    for _ in range(n):
        x = gaussian_filter(rng.normal(0, 1, (size, size)), rng.uniform(1.5, 4))
        x = (x - x.mean()) / (x.std() + 1e-9) * rng.uniform(15, 40)
        ramp = np.linspace(-1, 1, size)[None, :] * rng.uniform(-30, 30)
        out.append(np.clip(np.rint(128 + rng.uniform(-40, 40) + x + ramp), 0, 255))
    return np.stack(out)


@pytest.fixture(scope="session")
def blocks():
    return smooth_blocks(24)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
