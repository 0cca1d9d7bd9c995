"""
Pytest configuration and fixtures for the iss-lab tests.
"""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from iss_lab.boundary import dirichlet_control, neumann_control
from iss_lab.config import LabSettings
from iss_lab.service import ScenarioService
from iss_lab.solver import InputSignal, random_piecewise_input
from iss_lab.spectral import StateVector, dirichlet_laplacian_1d, make_operator, neumann_laplacian_1d


@pytest.fixture
def neumann_op():
    """Neumann heat operator with a = 1 on 16 modes."""
    return neumann_laplacian_1d(1.0, 16)


@pytest.fixture
def neumann_b(neumann_op):
    return neumann_control(neumann_op)


@pytest.fixture
def dirichlet_op():
    """Dirichlet heat operator on 16 modes."""
    return dirichlet_laplacian_1d(16)


@pytest.fixture
def dirichlet_b(dirichlet_op):
    return dirichlet_control(dirichlet_op)


@pytest.fixture
def scalar_op():
    """The scalar system x' = -x + u."""
    return make_operator([-1.0], label="scalar")


@pytest.fixture
def random_input():
    """Eight random intervals on [0, 1] with values in [-1, 1]."""
    return random_piecewise_input(7, 8, 1.0, 1.0)


@pytest.fixture
def unit_input():
    return InputSignal.constant(1.0, 1.0)


@pytest.fixture
def random_state():
    """Factory for smooth random initial states (coefficients decaying like n^-2)."""
    def factory(n_modes: int, seed: int = 0) -> StateVector:
        rng = np.random.default_rng(seed)
        return StateVector(coefficients=rng.standard_normal(n_modes) * (1.0 + np.arange(n_modes)) ** -2.0)
    return factory


@pytest.fixture
def lab_settings(tmp_path):
    """Settings with an explicit output root under the test's temporary directory."""
    return LabSettings(OUT=str(tmp_path / "out"))


@pytest.fixture
def lab_service(lab_settings):
    return ScenarioService(lab_settings)


@pytest.fixture
def write_config(tmp_path):
    """Write a config dict (or raw text) to a JSON file and return its path."""
    def factory(content, name: str = "config.json"):
        path = tmp_path / name
        path.write_text(content if isinstance(content, str) else json.dumps(content, indent=2))
        return path
    return factory


@pytest.fixture
def cli_runner():
    return CliRunner()


@pytest.fixture
def mock_service(mocker):
    """
    Replace the CLI's shared ScenarioService with a mock.
    """
    service = mocker.Mock(spec=ScenarioService)
    mocker.patch("iss_lab.main.service", service)
    return service
