import numpy as np
import pytest

from stepdistill.config import ExperimentConfig
from stepdistill.harness import fit_teacher


@pytest.fixture(scope="session")
def default_config(tmp_path_factory):
    return ExperimentConfig(output_dir=str(tmp_path_factory.mktemp("runs")))


@pytest.fixture(scope="session")
def teacher(default_config):
    """The default 8-mode teacher, trained once per session (about 20 s)."""
    return fit_teacher(default_config)


@pytest.fixture(scope="session")
def schedule(default_config):
    return default_config.noise_schedule()


@pytest.fixture(scope="session")
def data(default_config):
    return default_config.data_spec()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def teacher_ckpt(teacher, schedule, tmp_path_factory):
    from stepdistill.checkpoint import save_teacher

    return str(save_teacher(tmp_path_factory.mktemp("ckpt") / "teacher.ckpt", teacher, schedule))


@pytest.fixture
def small_config(default_config, teacher_ckpt, tmp_path):
    """Default config shrunk to a few seconds per run, reusing the session teacher."""
    return default_config.replace(**{
        "output_dir": str(tmp_path / "runs"), "epochs": 2, "eval.n_samples": 256,
        "rl.n_prompts": 2, "rl.group_size": 4, "teacher.checkpoint": teacher_ckpt,
    })


_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and short title")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    prev = _CRITERIA.get(n, (title, True, 0.0))
    if call.when == "call" or call.excinfo is not None:
        _CRITERIA[n] = (title, prev[1] and call.excinfo is None, prev[2] + call.duration)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, secs = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}  {'PASS' if ok else 'FAIL'}  {title}  ({secs:.1f}s)")
