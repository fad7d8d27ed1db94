import numpy as np
import pytest

from socialref.corpus.generator import GenConfig, generate_session
from socialref.language import Vocab


@pytest.fixture(scope="session")
def small_session():
    cfg = GenConfig(player_count=5, utterances_per_session=30, seed=3, sessions=1)
    session, gold = generate_session(cfg)
    return session


@pytest.fixture(scope="session")
def small_vocab(small_session):
    return Vocab.from_sessions([small_session])


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def _finite_numerics():
    # any NaN/Inf produced inside numpy during a test is an error
    with np.errstate(invalid="raise", divide="raise", over="raise"):
        yield


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split()[0])):
            terminalreporter.write_line(line)
