import logging

_logger = logging.getLogger("pygeotherm")
