import numpy as np
import pytest

from star_zsl import tensor as T


@pytest.fixture
def f64():
    with T.default_dtype(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory):
    """Default synthetic dataset, generated once per session."""
    from star_zsl.synthetic import SynthConfig, generate_synthetic

    root = tmp_path_factory.mktemp("synth") / "data"
    generate_synthetic(SynthConfig(), 0, root)
    return root


@pytest.fixture(scope="session")
def small_root(tmp_path_factory):
    """A small dataset for fast training tests: 5 categories, 3 known."""
    from star_zsl.synthetic import SynthConfig, generate_synthetic

    root = tmp_path_factory.mktemp("small") / "data"
    generate_synthetic(SynthConfig(num_categories=5, num_known=3, train_per_category=8, test_per_category=4,
                                   frames=8), 3, root)
    return root


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(number: int, ok: bool, detail: str) -> None:
        lines.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        print(lines[-1])
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
