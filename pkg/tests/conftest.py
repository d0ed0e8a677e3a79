"""Shared fixtures: the flagship detection run is computed once per session."""

import pytest

from qndsim.model import default_params
from qndsim.protocol import (
    DEFAULT_FIT_GRID,
    efficiency_scan,
    run_protocol,
)


@pytest.fixture(scope="session")
def table_run_n2():
    """Full protocol at the reference operating point, two-photon truncation."""
    return run_protocol(default_params())


@pytest.fixture(scope="session")
def table_run_n1():
    """Same run with the single-photon three-element construction."""
    return run_protocol(default_params(), n_ph=1)


@pytest.fixture(scope="session")
def table_efficiency():
    """Efficiency scan at the reference operating point, grid up to 0.6."""
    return efficiency_scan(
        default_params(), None, DEFAULT_FIT_GRID + (0.3, 0.45, 0.6)
    )


@pytest.fixture(scope="session")
def coherent_loss_record():
    """Quadrature data for a weak coherent state through a lossy detector."""
    import math

    from qndsim import tomography
    from qndsim.linalg import QuantumState, coherent, ket_density

    state = QuantumState(ket_density(coherent(5, math.sqrt(0.137))), (5,))
    return tomography.sample(
        state, tomography.phase_settings(100), 10_000, eta=0.43, seed=12
    )


@pytest.fixture(scope="session")
def composite_tomo():
    """Composite records for the ideal entangled target plus the corrected fit."""
    from qndsim import tomography
    from qndsim.protocol import ideal_composite

    state = ideal_composite(0.165)
    record = tomography.sample_composite(
        state, tomography.phase_settings(100), 10_000, eta=0.43, seed=21
    )
    return state, record, tomography.composite_mle(record)


@pytest.fixture(scope="session")
def composite_uncorrected(composite_tomo):
    """Composite reconstruction without detector-efficiency correction."""
    from qndsim import tomography

    _, record, _ = composite_tomo
    return tomography.composite_mle(record, correct_efficiency=False)
