import threading

import pytest

from sensorhub.cop import CopIngestor
from sensorhub.rest import Router
from sensorhub.server import SensorHubApp, ServiceConfig
from sensorhub.sos import SosService
from sensorhub.store import Store


@pytest.fixture
def store():
    return Store()


@pytest.fixture
def router(store):
    return Router(store, "http://test", sos=SosService(store), cop=CopIngestor(store))


@pytest.fixture
def client(router):
    from util import RouterClient

    return RouterClient(router)


@pytest.fixture
def live_app():
    app = SensorHubApp(ServiceConfig(bind="127.0.0.1:0"))
    thread = threading.Thread(target=app.serve_forever, daemon=True)
    thread.start()
    yield app
    app.shutdown()
    app.server_close()
    thread.join(timeout=5)


# one pass/fail line per acceptance criterion, shown after the run
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
