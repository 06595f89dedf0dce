import logging

import pytest

from semid.infra.logs import ROOT_LOGGER


@pytest.fixture(autouse=True)
def _reset_package_logger():
    # CLI runs attach handlers to captured streams that close after invoke
    yield
    logger = logging.getLogger(ROOT_LOGGER)
    for h in list(logger.handlers):
        logger.removeHandler(h)
        h.close()
    logger.propagate = True
