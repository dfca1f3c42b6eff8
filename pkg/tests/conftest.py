import numpy as np
import pytest

from resetfree import EnvSpec, make_gridworld, trap_gridworld_3x3


def chain_spec(horizon=2, bonus=0.0, time_varying=True):
    """Two states: ``g`` (0) and a trap (1).  ``a0`` stays at g, ``a1`` enters the trap.

    With ``bonus > 0`` the first-step action ``a1`` pays ``bonus`` so that the
    trap is tempting; every other reward is zero.
    """
    H = horizon
    P = np.zeros((H, 2, 2, 2))
    P[:, 0, 0, 0] = 1.0
    P[:, 0, 1, 1] = 1.0
    P[:, 1, :, 1] = 1.0
    r = np.zeros((H, 2, 2))
    if time_varying:
        r[0, 0, 1] = bonus
    else:
        r[:, 0, 1] = bonus
    start = np.array([1.0, 0.0])
    return EnvSpec(2, 2, H, P, r, reset_states=(1,), start_dist=start, post_reset_dist=start, name="chain")


def one_state_spec(horizon=3, reward=0.5, num_actions=2):
    P = np.ones((horizon, 1, num_actions, 1))
    r = np.full((horizon, 1, num_actions), reward)
    return EnvSpec(1, num_actions, horizon, P, r, start_dist=np.array([1.0]), name="one")


@pytest.fixture
def chain():
    return chain_spec()


@pytest.fixture
def grid3():
    return trap_gridworld_3x3()


@pytest.fixture
def grid3_det():
    return make_gridworld(3, 3, [(1, 1)], (2, 2), 0.0, 5)
