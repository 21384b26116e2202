import json
import os

import pytest

from beamkit.model import load_config

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")


@pytest.fixture(scope="session")
def desk_cfg():
    """Desk-scale scenario in link-normalized units (noise = 1 W)."""
    return load_config(os.path.join(CONFIG_DIR, "desk64.json"))


@pytest.fixture(scope="session")
def desk_cfg_dict():
    with open(os.path.join(CONFIG_DIR, "desk64.json")) as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def physical_cfg():
    """Full-scale parameters: -91 dBm noise, real path loss at 50 m."""
    return load_config(os.path.join(CONFIG_DIR, "table1_physical.json"))
