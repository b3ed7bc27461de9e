import numpy as np
import pytest

from mixbell.data import DomainPair, SamplingDistribution, perturb_dynamics, random_mdp
from mixbell.mdp import TabularMDP


def deterministic_mdp(num_states, num_actions, discount, seed=0, reward_bound=1.0):
    rng = np.random.default_rng(seed)
    succ = rng.integers(num_states, size=(num_states, num_actions))
    P = np.zeros((num_states, num_actions, num_states))
    P[np.arange(num_states)[:, None], np.arange(num_actions)[None, :], succ] = 1.0
    reward = rng.uniform(-0.9, 0.9, size=(num_states, num_actions)) * reward_bound
    return TabularMDP(P, reward, np.full(num_states, 1.0 / num_states), discount, reward_bound)


def random_sa(shape, rng):
    p = rng.uniform(0.2, 1.0, size=shape)
    return SamplingDistribution(p / p.sum())


def make_pair(S=5, A=3, gamma=0.9, epsilon=0.3, seed=0, uniform=True):
    target = random_mdp(S, A, gamma, seed=seed)
    source = perturb_dynamics(target, epsilon, seed + 1000)
    if uniform:
        sa_t = sa_s = SamplingDistribution.uniform(S, A)
    else:
        rng = np.random.default_rng(seed)
        sa_t, sa_s = random_sa((S, A), rng), random_sa((S, A), rng)
    return DomainPair(target, source, sa_t, sa_s)


@pytest.fixture
def pair():
    return make_pair()
