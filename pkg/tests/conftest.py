import logging
from pathlib import Path

import pytest

from avband import main as cli
from avband.core.config import config
from avband.core.probe import EchoResponder

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(autouse=True)
def isolated_logs(tmp_path, monkeypatch):
    """日志写到临时目录，测试结束后卸载处理器"""
    monkeypatch.setattr(config.output, "log_dir", str(tmp_path / "logs"))
    yield
    root = logging.getLogger()
    for handler in cli._installed_handlers:
        root.removeHandler(handler)
        handler.close()
    cli._installed_handlers.clear()


@pytest.fixture
def ripe_forward_csv() -> Path:
    return FIXTURES / "ripe_forward.csv"


@pytest.fixture
def ripe_reverse_csv() -> Path:
    return FIXTURES / "ripe_reverse.csv"


@pytest.fixture
def ripe_sndp() -> Path:
    return FIXTURES / "ripe_sndp.txt"


@pytest.fixture
def ripe_rcdp() -> Path:
    return FIXTURES / "ripe_rcdp.txt"


@pytest.fixture
def exact_line_csv() -> Path:
    return FIXTURES / "exact_line.csv"


@pytest.fixture
def echo_responder():
    """按需启动本地 UDP echo 应答器，测试结束后全部停止"""
    started = []

    def start(delays=None, default_delay=0.0) -> EchoResponder:
        responder = EchoResponder("127.0.0.1", 0, delays=delays, default_delay=default_delay)
        responder.start()
        started.append(responder)
        return responder

    yield start
    for responder in started:
        responder.stop()
