"""Finite discounted MDPs, exact Bellman operators and value computations.

Q-tables are plain ``(num_states, num_actions)`` float arrays. Transition
tensors are indexed ``P[s, a, s_next]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

ROW_SUM_TOL = 1e-12
VALUE_ITERATION_TOL = 1e-10


class ConvergenceError(RuntimeError):
    """An iterative solve stopped before reaching its tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


def _frozen(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TabularMDP:
    transition: np.ndarray
    reward: np.ndarray
    initial_dist: np.ndarray
    discount: float
    reward_bound: float

    def __post_init__(self):
        object.__setattr__(self, "transition", _frozen(self.transition))
        object.__setattr__(self, "reward", _frozen(self.reward))
        object.__setattr__(self, "initial_dist", _frozen(self.initial_dist))
        object.__setattr__(self, "discount", float(self.discount))
        object.__setattr__(self, "reward_bound", float(self.reward_bound))
        if self.transition.ndim != 3 or self.reward.ndim != 2:
            raise ValueError("transition must be (S, A, S) and reward (S, A)")
        S, A, S2 = self.transition.shape
        if S != S2 or self.reward.shape != (S, A) or self.initial_dist.shape != (S,):
            raise ValueError(
                f"inconsistent shapes: transition {self.transition.shape}, "
                f"reward {self.reward.shape}, initial_dist {self.initial_dist.shape}"
            )

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.reward.shape

    @property
    def q_bound(self) -> float:
        """Largest attainable |Q| under the reward bound: B / (1 - gamma)."""
        return self.reward_bound / (1.0 - self.discount)

    def with_transition(self, transition) -> "TabularMDP":
        return TabularMDP(transition, self.reward, self.initial_dist,
                          self.discount, self.reward_bound)

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "discount": self.discount,
            "reward_bound": self.reward_bound,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "initial_dist": self.initial_dist.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TabularMDP":
        mdp = cls(d["transition"], d["reward"], d["initial_dist"],
                  d["discount"], d["reward_bound"])
        if (mdp.num_states, mdp.num_actions) != (d["num_states"], d["num_actions"]):
            raise ValueError("num_states/num_actions disagree with array shapes")
        return mdp


def save_mdp(mdp: TabularMDP, path) -> None:
    # json writes floats with repr(), the shortest string that round-trips
    Path(path).write_text(json.dumps(mdp.to_dict(), indent=1) + "\n")


def load_mdp(path) -> TabularMDP:
    return TabularMDP.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Policy:
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _frozen(self.probs))

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "Policy":
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))

    def validate(self) -> list[str]:
        problems = []
        if np.any(self.probs < 0):
            problems.append("policy has negative entries")
        dev = np.abs(self.probs.sum(axis=1) - 1.0)
        for s in np.flatnonzero(dev > ROW_SUM_TOL):
            problems.append(f"policy row {s} sums to {self.probs[s].sum()!r}")
        return problems


@dataclass(frozen=True)
class Optimality:
    """Q-learning style backup: max over next actions."""


@dataclass(frozen=True)
class PolicyEvaluation:
    """Actor-critic style backup: expectation under ``policy``."""

    policy: Policy

    def __post_init__(self):
        problems = self.policy.validate()
        if problems:
            raise ValueError("; ".join(problems))


OperatorMode = Union[Optimality, PolicyEvaluation]
OPTIMALITY = Optimality()


@dataclass
class ValidationResult:
    problems: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems

    def __bool__(self) -> bool:
        return self.ok


def validate_mdp(mdp: TabularMDP) -> ValidationResult:
    """Check stochasticity, the strict reward bound and the discount range."""
    problems = []
    P = mdp.transition
    if np.any(P < 0):
        for s, a, t in np.argwhere(P < 0):
            problems.append(f"P[{s}][{a}][{t}] = {P[s, a, t]!r} is negative")
    sums = P.sum(axis=2)
    for s, a in np.argwhere(np.abs(sums - 1.0) > ROW_SUM_TOL):
        problems.append(
            f"row ({s}, {a}) sums to {sums[s, a]!r} (off by {sums[s, a] - 1.0:+.3e})")
    rho = mdp.initial_dist
    if np.any(rho < 0):
        problems.append("initial_dist has negative entries")
    if abs(rho.sum() - 1.0) > ROW_SUM_TOL:
        problems.append(f"initial_dist sums to {rho.sum()!r}")
    if not mdp.reward_bound > 0:
        problems.append(f"reward_bound {mdp.reward_bound!r} must be positive")
    for s, a in np.argwhere(~(np.abs(mdp.reward) < mdp.reward_bound)):
        problems.append(
            f"|r[{s}][{a}]| = {abs(mdp.reward[s, a])!r} is not below B = {mdp.reward_bound!r}")
    if not 0.0 <= mdp.discount < 1.0:
        problems.append(f"discount {mdp.discount!r} outside [0, 1)")
    if not np.all(np.isfinite(P)) or not np.all(np.isfinite(mdp.reward)):
        problems.append("non-finite entries in transition or reward")
    return ValidationResult(problems)


def _check_q(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q)):
        raise ValueError("Q-table has non-finite entries")
    return q


def state_values(q: np.ndarray, mode: OperatorMode = OPTIMALITY) -> np.ndarray:
    """Next-state value V(s') = max_a' Q(s', a') or sum_a' pi(a'|s') Q(s', a').

    Works on a single table ``(S, A)`` or a stack ``(..., S, A)``.
    """
    if isinstance(mode, PolicyEvaluation):
        return (q * mode.policy.probs).sum(axis=-1)
    return q.max(axis=-1)


def exact_backup(mdp: TabularMDP, q, mode: OperatorMode = OPTIMALITY) -> np.ndarray:
    q = _check_q(q)
    return mdp.reward + mdp.discount * (mdp.transition @ state_values(q, mode))


def stochastic_backup(q, reward: float, next_state: int, discount: float,
                      mode: OperatorMode = OPTIMALITY) -> float:
    """One-sample backup r + gamma * V(s') at a realized next state."""
    q = np.asarray(q, dtype=float)
    if not 0 <= next_state < q.shape[0]:
        raise IndexError(f"next_state {next_state} out of range [0, {q.shape[0]})")
    return float(reward + discount * state_values(q, mode)[next_state])


def optimal_q(mdp: TabularMDP, tol: float = VALUE_ITERATION_TOL,
              max_iters: int = 100_000, mode: OperatorMode = OPTIMALITY) -> np.ndarray:
    """Value iteration until the returned table is within ``tol`` of the fixed
    point in sup norm (its Bellman residual is then below ``tol`` too).

    With a ``PolicyEvaluation`` mode this returns the fixed point Q^pi instead of Q*.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = np.zeros(mdp.shape)
    for _ in range(max_iters):
        q_next = exact_backup(mdp, q, mode)
        residual = np.max(np.abs(q_next - q))
        q = q_next
        # ||q_next - Q*|| <= gamma / (1 - gamma) * ||q_next - q||
        if mdp.discount * residual <= tol * (1.0 - mdp.discount):
            return q
    raise ConvergenceError(f"value iteration did not converge in {max_iters} iterations",
                           float(np.max(np.abs(exact_backup(mdp, q, mode) - q))))


def greedy_policy(q) -> Policy:
    q = _check_q(q)
    probs = np.zeros_like(q)
    # argmax returns the first maximizer, i.e. the lowest action index
    probs[np.arange(q.shape[0]), np.argmax(q, axis=1)] = 1.0
    return Policy(probs)


def policy_value(mdp: TabularMDP, policy: Policy, tol: float = VALUE_ITERATION_TOL) -> float:
    """rho-weighted discounted return of ``policy``, by a direct linear solve."""
    pi = policy.probs
    r_pi = (pi * mdp.reward).sum(axis=1)
    P_pi = np.einsum("sa,sat->st", pi, mdp.transition)
    lhs = np.eye(mdp.num_states) - mdp.discount * P_pi
    v = np.linalg.solve(lhs, r_pi)
    residual = float(np.max(np.abs(lhs @ v - r_pi)))
    if residual > tol:
        raise ConvergenceError("policy evaluation solve is inaccurate", residual)
    return float(mdp.initial_dist @ v)
