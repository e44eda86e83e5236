import socket
import threading
import time

import pytest
import uvicorn

from turkey.domain import (
    OrderingMode,
    StepDefinition,
    StepKind,
    builtin_registry,
    create_task,
    publish_task,
)
from turkey.service import ServiceConfig, create_app

FIXED_TIME = "2026-08-10T12:00:00+00:00"


class LiveServer:
    """Uvicorn in a daemon thread on an ephemeral port."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.app = create_app(config)
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind(("127.0.0.1", 0))
        self._sock.listen(128)
        self.port = self._sock.getsockname()[1]
        self.url = f"http://127.0.0.1:{self.port}"
        self._server = uvicorn.Server(uvicorn.Config(app=self.app, log_level="error"))
        self._thread = threading.Thread(
            target=self._server.run, kwargs={"sockets": [self._sock]}, daemon=True
        )

    @property
    def service(self):
        return self.app.state.service

    def start(self):
        self._thread.start()
        deadline = time.monotonic() + 10
        while not self._server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("server did not start in time")
            time.sleep(0.01)
        return self

    def stop(self):
        self._server.should_exit = True
        self._thread.join(timeout=10)


@pytest.fixture
def live_server(tmp_path):
    server = LiveServer(
        ServiceConfig(
            db_path=str(tmp_path / "live.db"),
            admin_token="secret-admin",
            fixed_time=FIXED_TIME,
        )
    ).start()
    yield server
    server.stop()


@pytest.fixture
def registry():
    return builtin_registry()


def make_steps(n=3):
    return tuple(
        StepDefinition(
            step_id=f"s{i + 1}",
            kind=StepKind.TEXT_RESPONSE,
            prompt=f"Question {i + 1}",
        )
        for i in range(n)
    )


def make_task(
    registry,
    *,
    n_steps=3,
    ordering_mode=OrderingMode.FIXED,
    auditors=("clicks_total", "mouse_movement"),
    published=True,
    task_id="t1",
):
    task = create_task(
        registry,
        name="labels",
        description="demo task",
        steps=make_steps(n_steps),
        ordering_mode=ordering_mode,
        auditors=auditors,
        task_id=task_id,
    )
    return publish_task(task) if published else task
