from pathlib import Path

import pytest

from mrag.dataset import load_instances
from mrag.mocks import build_mock_registry

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def mini_path() -> Path:
    return FIXTURES / "remplan_mini.jsonl"


@pytest.fixture(scope="session")
def micro_path() -> Path:
    return FIXTURES / "remplan_micro.jsonl"


@pytest.fixture(scope="session")
def similarity_path() -> Path:
    return FIXTURES / "similarity_20.txt"


@pytest.fixture(scope="session")
def search_fixtures_dir() -> Path:
    return FIXTURES / "search_fixtures"


@pytest.fixture(scope="session")
def mini_instances(mini_path):
    return load_instances(mini_path)


@pytest.fixture(scope="session")
def micro_instances(micro_path):
    return load_instances(micro_path)


@pytest.fixture()
def mock_registry(search_fixtures_dir):
    return build_mock_registry(search_fixtures_dir)
