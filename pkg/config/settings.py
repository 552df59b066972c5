import logging
import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

logger = logging.getLogger(__name__)


def env_int(name, default, minimum=1):
    """Integer setting from the environment; unparsable or too-small values fall back to `default`."""
    raw = os.getenv(name)
    if raw is None or not raw.strip():
        return default
    try:
        value = int(raw)
    except ValueError:
        logger.warning("%s=%r is not an integer; using %d", name, raw, default)
        return default
    if value < minimum:
        logger.warning("%s=%d is below %d; using %d", name, value, minimum, default)
        return default
    return value


APP_NAME = "Precis"
VERSION = "1.0.0"

PROJECT_ROOT = Path(__file__).resolve().parent.parent
DATA_DIR = Path(os.getenv("PRECIS_DATA_DIR", PROJECT_ROOT / "data"))

# Worker cap for format-level parallelism
THREADS = env_int("PRECIS_THREADS", os.cpu_count() or 1)

# Logging
LOG_LEVEL = os.getenv("PRECIS_LOG_LEVEL", "WARNING").upper()
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# Bundled networks (relative to DATA_DIR)
NETWORKS = {
    'lenet_toy': 'networks/lenet_toy/manifest.json',
}

# Bundled datasets (relative to DATA_DIR)
DATASETS = {
    'digits-toy': {'kind': 'mnist', 'images': 'digits-toy/t10k-images-idx3-ubyte', 'labels': 'digits-toy/t10k-labels-idx1-ubyte'},
    'mnist-test': {'kind': 'mnist', 'images': 'mnist/t10k-images-idx3-ubyte', 'labels': 'mnist/t10k-labels-idx1-ubyte'},
    'cifar10-test': {'kind': 'cifar10', 'batch': 'cifar-10-batches-bin/test_batch.bin'},
}

# Search defaults (target 99% normalized accuracy, two refinement evaluations, ten samples)
DEFAULT_SAMPLES = 10
DEFAULT_TARGET = 0.99
DEFAULT_REFINE = 2
PREDICTION_CLAMP = (0.0, 1.05)

# Default design space: 128 float + 64 fixed formats
DEFAULT_SPACE = {
    'float_mantissa': (1, 16),
    'float_exponent': (1, 8),
    'float_step': 1,
    'fixed_integer': (1, 15),
    'fixed_fraction': (1, 15),
    'fixed_step': 2,
}

# Cost model: width -> (speedup, energy savings) anchors of the default float table
BASELINE_WIDTH = 32
FLOAT_COST_ANCHORS = {
    14: (7.2, 3.4),  # float:m7e6
    15: (5.7, 3.0),  # float:m8e6
    32: (1.0, 1.0),
}
FLOAT_TABLE_WIDTHS = (12, 32)
FIXED_TABLE_WIDTHS = (2, 32)

# Inputs evaluated per vectorized forward chunk
BATCH_SIZE = 256

# Largest format enumerate_values will expand
ENUMERATE_MAX_BITS = 14

# Report contracts
SWEEP_COLUMNS = ['format', 'mode', 'accuracy', 'normalized_accuracy', 'r2', 'speedup', 'energy_savings']
TRACE_COLUMNS = ['step', 'running_sum', 'exact_running_sum']
FLOAT_DIGITS = 10

EXIT_CODES = {
    'ok': 0,
    'error': 1,
    'usage': 2,
    'fallback': 3,
}
