from pathlib import Path

import numpy as np
import pytest

from metashadow.emulator import fit_port_operators, read_counts_csv, read_transmission_csv
from metashadow.noise import NoiseParams, load_noise

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "metashadow" / "fixtures"

# calibrated reference noise values for the octa6 device
REF_P_BF = np.array([0.012466, 0.054692, 0.000383])
REF_P_AD = np.array([7.14e-3, 0.0, 1.46e-5])
# per basis: (outcome 0, outcome 1) = (H, V), (H+V, H-V), (LC, RC)
REF_P_PL = np.array([[0.223475, 0.144225], [0.275352, 0.162548], [0.228934, 0.234566]])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def ref_noise() -> NoiseParams:
    return load_noise(FIXTURES / "calibrated_noise.json")


@pytest.fixture(scope="session")
def transmission():
    return read_transmission_csv(FIXTURES / "transmission.csv")


@pytest.fixture(scope="session")
def fitted_ops(transmission):
    return fit_port_operators(transmission)


@pytest.fixture(scope="session")
def calibration_counts():
    return read_counts_csv(FIXTURES / "calibration_counts.csv")


def random_noise(design, rng, bf_max=0.3, ad_max=0.3, pl_max=0.5) -> NoiseParams:
    from metashadow.povm import build_povm

    nb = build_povm(design).n_bases
    return NoiseParams(
        design,
        rng.uniform(0, bf_max, nb),
        rng.uniform(0, ad_max, nb),
        rng.uniform(0, pl_max, (nb, 2)),
    )
