import pytest


def pytest_addoption(parser):
    parser.addoption("--debug-tests", action="store_true", default=False, help="debug tests")
    parser.addoption("--run-slow", action="store_true", default=False, help="run slow tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running convergence checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="need --run-slow option to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="class")
def debug(request):
    response = request.config.getoption("--debug-tests")
    request.cls.debug = response
