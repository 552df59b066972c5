import json
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

# Add project root to sys.path for module imports
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from modules.costmodel import default_tables  # noqa: E402
from modules.search import DesignSpaceConfig, sweep  # noqa: E402
from utils.data_loader import DataLoader  # noqa: E402
from utils.generate_fixtures import generate_bundle  # noqa: E402

settings.register_profile(
    "default", settings(suppress_health_check=[HealthCheck.too_slow], max_examples=200, deadline=None)
)
settings.load_profile("default")

FIXTURES = Path(__file__).resolve().parent / "fixtures"


@pytest.fixture(scope="session")
def bundle(tmp_path_factory):
    """Desk-scale network and digits generated once per test session."""
    return generate_bundle(tmp_path_factory.mktemp("data"))


@pytest.fixture(scope="session")
def loader(bundle):
    return DataLoader(bundle['data_dir'])


@pytest.fixture(scope="session")
def lenet_toy(loader):
    return loader.load_network('lenet_toy')


@pytest.fixture(scope="session")
def digits(loader):
    return loader.load_dataset('digits-toy')


@pytest.fixture(scope="session")
def frozen_search():
    """Search outcome on the bundled network over the default design space."""
    return json.loads((FIXTURES / 'default_space_search.json').read_text())


@pytest.fixture(scope="session")
def default_sweep(lenet_toy, digits, frozen_search):
    """Measured sweep of the default design space over every bundled digit."""
    samples = digits.images[:frozen_search['samples']]
    return sweep(lenet_toy, samples, digits, DesignSpaceConfig.default(), default_tables())
