"""Epipolar multi-image super-resolution.

Plane-sweep sampling of super-resolved features along epipolar rays,
fused by cascaded view/ray transformers into a residual correction on a
single-image super-resolution baseline.
"""

import logging
import os

__version__ = "0.1.0"

_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def configure_logging():
    level = _LEVELS.get(os.environ.get("EPIMISR_LOG", "error").lower(), logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("epimisr").setLevel(level)
