import logging
import sys
from typing import Optional

from chemostat.common.config import SETTINGS

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(filename)s:%(name)s.%(funcName)s:%(lineno)d - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


class Log:
    """Logging setup for command-line runs"""

    @staticmethod
    def init(level: Optional[str] = None, log_file: Optional[str] = None):
        """
        Route every record to stdout, and to ``log_file`` when given

        Python warnings (off-manifold growth curves, empty region queries) are
        captured into the ``py.warnings`` logger so they land in the run log.
        """
        level = level or SETTINGS.LOG_LEVEL
        formatter = logging.Formatter(fmt=LOG_FORMAT, datefmt=DATE_FORMAT)

        logging.root.handlers = []
        handlers = [logging.StreamHandler(sys.stdout)]
        if log_file:
            handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
        for handler in handlers:
            handler.setLevel(level)
            handler.setFormatter(formatter)
            logging.root.addHandler(handler)
        logging.root.setLevel(level)

        logging.captureWarnings(True)
