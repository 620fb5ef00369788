import numpy as np
import pytest

import mimoregion as mr


def single_user_scenario(evm: float = 0.0) -> mr.Scenario:
    """One user, two antennas, h = [1, 0], sigma^2 = 1, total power 2."""
    return mr.Scenario(
        num_transmitters=1,
        antennas_per_transmitter=(2,),
        channels=np.array([[1.0, 0.0]], dtype=complex),
        data_clusters=(frozenset({0}),),
        coord_clusters=(frozenset({0}),),
        noise_powers=np.array([1.0]),
        power_constraints=(mr.total_power_constraint(1, 2, 2.0),),
        evm=np.array([evm, 0.0]),
        metrics=(mr.PerformanceMetric("rate"),),
    )


def orthogonal_two_user_scenario() -> mr.Scenario:
    """Two users on orthogonal channels, full clusters, total power 2."""
    return mr.Scenario(
        num_transmitters=1,
        antennas_per_transmitter=(2,),
        channels=np.array([[1.0, 0.0], [0.0, 1.0]], dtype=complex),
        data_clusters=(frozenset({0, 1}),),
        coord_clusters=(frozenset({0, 1}),),
        noise_powers=np.ones(2),
        power_constraints=(mr.total_power_constraint(2, 2, 2.0),),
        evm=np.zeros(2),
        metrics=(mr.PerformanceMetric("rate"),) * 2,
    )


def total_power_two_user(seed: int, snr_db: float = 10.0, evm: float = 0.0) -> mr.Scenario:
    """Single-transmitter N=2 random scenario under one total power constraint."""
    base = mr.generate_scenario(
        "network-mimo", num_antennas=2, num_users=2, snr_db=snr_db, evm=evm, seed=seed
    )
    budget = 10.0 ** (snr_db / 10.0) / 2.0
    return mr.Scenario(
        num_transmitters=1,
        antennas_per_transmitter=(2,),
        channels=base.channels,
        data_clusters=base.data_clusters,
        coord_clusters=base.coord_clusters,
        noise_powers=base.noise_powers,
        power_constraints=(mr.total_power_constraint(2, 2, budget),),
        evm=base.evm,
        metrics=base.metrics,
    )


@pytest.fixture(scope="session")
def worked_single():
    return single_user_scenario(evm=0.1)


@pytest.fixture(scope="session")
def worked_single_ideal():
    return single_user_scenario(evm=0.0)


@pytest.fixture(scope="session")
def ortho_two():
    return orthogonal_two_user_scenario()
