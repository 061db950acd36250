import numpy as np
import pytest

from polyrefine import synthetic as syn
from polyrefine.estimator import BoundaryAnnotator

_ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training or sweep tests")
    config.addinivalue_line("markers", "acceptance: acceptance-criterion tests")


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        _ACCEPTANCE_RESULTS.append((report.nodeid.split("::")[-1], report.outcome.upper()))


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_RESULTS:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, outcome in _ACCEPTANCE_RESULTS:
            terminalreporter.write_line(f"{outcome}: {name}")


def micro_params(**overrides):
    """A tiny architecture + schedule for fast pipeline-level tests."""
    params = dict(
        residual_channels=(8, 12, 16),
        decoder_channels=8,
        hidden_dim=16,
        num_res_blocks=2,
        phase1_epochs=3,
        phase2_epochs=4,
        phase3_epochs=1,
        classifier_epochs=10,
        phase1_lr=2e-4,
        classifier_lr=0.05,
        gamma_switch_epoch=2,
        seed=9,
    )
    params.update(overrides)
    return params


@pytest.fixture(scope="session")
def micro_corpus():
    spec = syn.SyntheticSpec(count=24, max_height=32, max_width=160)
    samples = syn.gen_synthetic(spec, 21)
    return samples[:16], samples[16:20], samples[20:]


@pytest.fixture(scope="session")
def micro_model(micro_corpus):
    train, val, _ = micro_corpus
    annotator = BoundaryAnnotator(**micro_params())
    annotator.fit(train, val)
    return annotator
