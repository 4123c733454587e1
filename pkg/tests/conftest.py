import pytest

from polaramc.harness.config import ExperimentConfig
from polaramc.harness.dataset import generate_dataset

TINY = dict(
    frame_length=120,
    train_per_class=10,
    test_per_class=5,
    snrs=(0.0, 10.0),
    epochs=2,
    batch_size=16,
    profile="tiny",
)


@pytest.fixture(scope="session")
def tiny_config():
    return ExperimentConfig(**TINY)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory, tiny_config):
    return generate_dataset(tiny_config, tmp_path_factory.mktemp("data") / "tiny")


@pytest.fixture(scope="session")
def tiny_fading_dataset(tmp_path_factory, tiny_config):
    cfg = tiny_config.replace(fading=True)
    return cfg, generate_dataset(cfg, tmp_path_factory.mktemp("data") / "tiny_fading")


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def verdict():
    def record(criterion: str, ok: bool, detail: str) -> bool:
        line = f"{criterion} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
