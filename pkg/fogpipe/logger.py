import logging
import os
import sys

# Root of the package logger tree
ROOT_LOGGER = "fogpipe"
LOG_FORMAT  = "%(asctime)s [%(levelname)s] %(message)s"


def get_logger(name=None, level=None):
    """Return a logger below the fogpipe root, configuring the root once.

        Parameters
        ----------
        name : string, optional
            Child logger name, e.g. ``"nsga"`` gives ``fogpipe.nsga``.

        level : string or int, optional
            Level for the root logger. Falls back to the ``FOGPIPE_LOG_LEVEL``
            environment variable and finally to INFO.

        Returns
        -------
        logger : logging.Logger
        """
    root = logging.getLogger(ROOT_LOGGER)

    if not root.handlers:
        handler = logging.StreamHandler(sys.stdout)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)
        root.propagate = False
        root.setLevel(os.getenv("FOGPIPE_LOG_LEVEL", "INFO").upper())

    if level is not None:
        root.setLevel(level.upper() if isinstance(level, str) else level)

    if name is None:
        return root
    return root.getChild(name)
