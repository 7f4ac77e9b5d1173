"""Configuration for the FT-GMRES library and experiment harness"""

import logging
import os

# Defaults, overridable from the environment
DEFAULT_SEED = int(os.getenv("FTGMRES_SEED", "0"))
DEFAULT_TIME_STEP = float(os.getenv("FTGMRES_TIME_STEP", "0.001"))
DEFAULT_P_DETECT = float(os.getenv("FTGMRES_P_DETECT", "0.9"))
DEFAULT_LOG_CAPACITY = int(os.getenv("FTGMRES_LOG_CAPACITY", "1024"))
DEFAULT_SCRUB_WINDOW = int(os.getenv("FTGMRES_SCRUB_WINDOW", "2"))
LOG_LEVEL = os.getenv("FTGMRES_LOG_LEVEL", "WARNING")

# Where the optional UFSMC downloads live (Ill_Stokes.mtx, mult_dcop_03.mtx)
UFSMC_DIR = os.getenv("FTGMRES_UFSMC_DIR", "matrices")


def configure_logging(level: str | None = None) -> None:
    """Install a console handler for the library loggers."""
    logging.basicConfig(
        level=(level or LOG_LEVEL).upper(),
        format="%(asctime)s %(levelname)s:%(name)s: %(message)s",
    )
