import numpy as np
import pytest

from iongrad.models import ForceField, ProbeParams


@pytest.fixture
def rng():
    return np.random.default_rng(20250819)


@pytest.fixture
def small_probe():
    """Tiny two-ion probe for operator-level checks (dim 36)."""
    return ProbeParams(
        num_ions=2, omega0=40.0, gamma=0.5, delta=6.0, kappa=1.0,
        g=(0.8, 0.8), phi=(0.3, 0.3), x0=14.5e-9, n_max=3,
    )


@pytest.fixture
def fast_trap():
    """Desk-scale trap with strong separation Omega >> delta >> g, gamma."""
    return ProbeParams(
        num_ions=2, omega0=8250.0, gamma=1.0, delta=350.0, kappa=60.0,
        g=(62.5, 62.5), phi=(0.0, 0.0), x0=14.5e-9, n_max=6,
    )


@pytest.fixture
def phonon_probe():
    """Constant-drive trap for the phonon readout (no sweep)."""
    return ProbeParams(
        num_ions=2, omega0=300.0, gamma=0.0, delta=0.6, kappa=0.28,
        g=(2.5, 2.5), phi=(np.pi / 3, np.pi / 3), x0=14.5e-9, n_max=14,
    )


@pytest.fixture
def phonon_force():
    return ForceField(F=(7e-24, 5e-24), xi=np.pi / 2)
