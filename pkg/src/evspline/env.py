"""Process environment setup for evspline runs."""

import logging
import sys

import numpy as np
from dotenv import load_dotenv

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def apply_runtime_settings(runtime_config):
    """Load .env, configure logging and the numpy floating-point policy."""
    load_dotenv()
    level = getattr(logging, runtime_config.log_level, None)
    if not isinstance(level, int):
        print(f"Warning: unknown log level {runtime_config.log_level!r}, using INFO")
        level = logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stdout, force=True)
    # overflow in a trial step is rejected by the solver
    np.seterr(over="raise", invalid="warn", divide="warn", under="ignore")
