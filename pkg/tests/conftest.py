import logging

import pytest
from click.testing import CliRunner

from moescale.datastore import generate_campaign
from moescale.fitter import FitOptions, fit_joint
from moescale.laws import PUBLISHED_CONSTANTS


@pytest.fixture
def constants():
    return PUBLISHED_CONSTANTS


@pytest.fixture(scope="session")
def campaign():
    """Noiseless 446-record campaign from the published constants."""
    return generate_campaign(PUBLISHED_CONSTANTS, sigma=0.0, seed=0)


@pytest.fixture(scope="session")
def joint_fit(campaign):
    return fit_joint(campaign.records, FitOptions(starts=8, seed=0))


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def registry_dir(tmp_path, monkeypatch):
    path = tmp_path / "registry"
    monkeypatch.setenv("MOESCALE_REGISTRY_DIR", str(path))
    return path


@pytest.fixture(autouse=True)
def _reset_moescale_logger():
    """The CLI installs its own handler; undo it between tests."""
    yield
    logger = logging.getLogger("moescale")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    logger.setLevel(logging.NOTSET)
    logger.propagate = True
