from pathlib import Path

import pytest

from femtocache.config import load_config

ROOT = Path(__file__).resolve().parents[1]
SCENARIO = ROOT / "scenarios" / "table3.yaml"


@pytest.fixture(scope="session")
def scenario_path():
    return SCENARIO


@pytest.fixture(scope="session")
def scenario():
    return load_config(SCENARIO)
