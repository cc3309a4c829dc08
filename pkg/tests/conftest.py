import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ncl.data import SynthConfig, synthetic_dataset  # noqa: E402
from ncl.encoder import EncoderConfig  # noqa: E402

SMALL_ENCODER = EncoderConfig(filters=8, dilations=[1, 2], embed_dim=8)


@pytest.fixture(scope="session")
def small_stays():
    """A 24-patient preprocessed synthetic cohort with a high positive rate."""
    return synthetic_dataset(SynthConfig(n_patients=24, mean_stay_len=30, n_channels=4, seed=11, prevalence=0.3))


@pytest.fixture
def small_encoder():
    return EncoderConfig(filters=8, dilations=[1, 2], embed_dim=8)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
