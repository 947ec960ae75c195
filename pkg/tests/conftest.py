import pytest

from cpsrecover import config as cfgmod
from cpsrecover import sim


@pytest.fixture(scope="session")
def case_result():
    """One default case-study run shared by read-only tests."""
    return sim.run_scenario(cfgmod.build_case_study(seed=42))


@pytest.fixture(scope="session")
def case_models():
    return cfgmod.build_models(cfgmod.default_config())
