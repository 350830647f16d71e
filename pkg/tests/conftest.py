import numpy as np
import pytest

from fricloop import DesignTarget, PlantConfig, RationalTF, design_discrete


@pytest.fixture(scope="session")
def plant_defaults():
    return PlantConfig()


@pytest.fixture(scope="session")
def designed(plant_defaults):
    """Default controller design, shared across the whole session."""
    return design_discrete(DesignTarget(),
                           RationalTF.constant(plant_defaults.gain_nominal),
                           plant_defaults.antialias_tf,
                           plant_defaults.sensor_tf)


@pytest.fixture(scope="session")
def controller_filter(designed):
    return designed.filter


def random_stable_second_order(rng, fn_range=(20.0, 900.0)):
    from fricloop import make_second_order
    gain = rng.uniform(0.5, 2.0)
    fn = np.exp(rng.uniform(np.log(fn_range[0]), np.log(fn_range[1])))
    zeta = rng.uniform(0.2, 1.5)
    return make_second_order(gain, fn, zeta)
