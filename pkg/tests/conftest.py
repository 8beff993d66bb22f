import numpy as np
import pytest

from dualac.mdp import TabularMdp


def make_single_state_mdp(gamma=0.9, r=1.0, n_actions=1):
    """One state, self-loop, constant reward: V* = r / (1 - gamma)."""
    P = np.ones((1, n_actions, 1))
    R = np.full((1, n_actions), r)
    return TabularMdp(transition=P, reward=R, gamma=gamma, mu=np.array([1.0]))


def make_chain2_mdp(gamma=0.5):
    """Two-state deterministic chain, hand-solvable.

    s0: a0 self-loop (R=0), a1 -> s1 (R=0); s1: both actions self-loop (R=1).
    With gamma=0.5: V*(s1) = 2, V*(s0) = 1; optimal policy takes a1 at s0.
    """
    P = np.zeros((2, 2, 2))
    P[0, 0, 0] = 1.0
    P[0, 1, 1] = 1.0
    P[1, :, 1] = 1.0
    R = np.array([[0.0, 0.0], [1.0, 1.0]])
    return TabularMdp(transition=P, reward=R, gamma=gamma, mu=np.array([1.0, 0.0]))


@pytest.fixture
def single_state_mdp():
    return make_single_state_mdp()


@pytest.fixture
def chain2_mdp():
    return make_chain2_mdp()
