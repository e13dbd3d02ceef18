"""
Logging setup.

Keeping handler configuration in one place lets every entry point (CLI,
scripts, tests) share the same format and level rules.
"""

from __future__ import annotations

import logging
import os
import sys
from typing import Optional

from src.config.settings import LOG_ENV_VAR


_LEVELS = {
    "error": logging.ERROR,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}

_HANDLER_NAME = "uqfair-stderr"


def resolve_level(value: Optional[str] = None) -> int:
    """
    Map a `UQFAIR_LOG` value to a logging level; unknown values fall back to INFO.
    """

    if value is None:
        value = os.environ.get(LOG_ENV_VAR, "info")
    return _LEVELS.get(value.strip().lower(), logging.INFO)


def configure_logging(level: Optional[str] = None) -> logging.Logger:
    """
    Attach a single stderr handler to the `src` logger tree.

    Calling it again only updates the level, so repeated CLI invocations in
    one process do not stack handlers.
    """

    root = logging.getLogger("src")
    root.setLevel(resolve_level(level))
    root.propagate = False

    if not any(h.get_name() == _HANDLER_NAME for h in root.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.set_name(_HANDLER_NAME)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        root.addHandler(handler)

    # numpy floating point warnings are handled explicitly in the metric code
    logging.getLogger("py.warnings").setLevel(logging.ERROR)
    return root
