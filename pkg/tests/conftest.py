import json

import pytest

from app import main
from mcco_services.problems import LinearParams, SyntheticParams, build_problem
from mcco_services.randomness import root_stream


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run the desk-scale reproductions")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def stream():
    return root_stream(42)


@pytest.fixture
def linear_chain():
    """f_t = a_t x + xi with a = (2, 3, 5); F(x) = 30 x."""
    return build_problem(LinearParams())


@pytest.fixture
def linear_two_stage():
    return build_problem(LinearParams(a=[1.0, 1.0]))


@pytest.fixture
def synthetic():
    return build_problem(SyntheticParams())


@pytest.fixture
def cli(capsys):
    """Run the CLI in-process; returns (exit code, parsed stdout or None, stderr)."""
    def run(*argv):
        code = main([str(a) for a in argv])
        captured = capsys.readouterr()
        payload = json.loads(captured.out) if captured.out.strip() else None
        return code, payload, captured.err
    return run


@pytest.fixture
def write_json_file(tmp_path):
    def write(name, payload):
        path = tmp_path / name
        path.write_text(json.dumps(payload))
        return str(path)
    return write

