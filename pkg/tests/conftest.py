import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ambiup.model import ModelConfig  # noqa: E402

# per-criterion verdicts filled in by test_acceptance.py
ACCEPTANCE_RESULTS = {}


@pytest.fixture
def tiny_config():
    """Small enough for exhaustive finite-difference checks."""
    return ModelConfig(n_enc=8, kernel_len=4, enc_stride=2, n_bottleneck=4, n_conv=8,
                       p_kernel=3, x_blocks=2, repeats=1)


@pytest.fixture
def toy_config():
    """Trainable in seconds on a CPU."""
    return ModelConfig(n_enc=64, kernel_len=48, enc_stride=24, n_bottleneck=32, n_conv=64,
                       p_kernel=3, x_blocks=4, repeats=1)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {key}: {detail}")
