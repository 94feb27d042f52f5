"""Logging setup for the command line interface.

Library modules only create module loggers (``logging.getLogger(__name__)``);
handlers are configured once, here, when the CLI starts.
"""

from __future__ import annotations

import logging

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(verbosity: int = 0) -> None:
    """Configure the root logger.

    Args:
        verbosity: ``> 0`` enables DEBUG, ``< 0`` restricts to WARNING,
            ``0`` keeps INFO.
    """
    if verbosity > 0:
        level = logging.DEBUG
    elif verbosity < 0:
        level = logging.WARNING
    else:
        level = logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)
