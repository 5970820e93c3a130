import numpy as np
import pytest

from unified_asr import corpus
from unified_asr.gradcheck import tiny_model_config


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_sim():
    return corpus.SimConfig(num_train_sc=6, num_train_mc=6, num_test=9, frames_per_utt=8)


@pytest.fixture(scope="session")
def sc_utts(small_sim):
    return [corpus.make_utterance(small_sim, "train_sc", i, 10.0 + i, False) for i in range(6)]


@pytest.fixture(scope="session")
def mc_utts(small_sim):
    return [corpus.make_utterance(small_sim, "train_mc", i, 2.0 + 3 * i, True) for i in range(6)]


@pytest.fixture
def tiny_config():
    return tiny_model_config


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory, small_sim):
    out = tmp_path_factory.mktemp("data")
    corpus.generate_dataset(small_sim, out)
    return out


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
