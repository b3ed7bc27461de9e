"""Source/target domain construction and i.i.d. transition datasets."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .mdp import ROW_SUM_TOL, TabularMDP, _frozen


@dataclass(frozen=True)
class SamplingDistribution:
    """Strictly positive distribution over state-action pairs."""

    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 2:
            raise ValueError("sampling distribution must be a (S, A) table")
        if not np.all(probs > 0):
            raise ValueError("sampling distribution must be strictly positive")
        if abs(probs.sum() - 1.0) > ROW_SUM_TOL:
            raise ValueError(f"sampling distribution sums to {probs.sum()!r}")

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "SamplingDistribution":
        return cls(np.full((num_states, num_actions), 1.0 / (num_states * num_actions)))

    def to_dict(self) -> dict:
        return {"probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SamplingDistribution":
        return cls(d["probs"])


@dataclass(frozen=True)
class DomainPair:
    target: TabularMDP
    source: TabularMDP
    target_sa: SamplingDistribution
    source_sa: SamplingDistribution

    def __post_init__(self):
        t, s = self.target, self.source
        same = (
            t.shape == s.shape
            and np.array_equal(t.reward, s.reward)
            and np.array_equal(t.initial_dist, s.initial_dist)
            and t.discount == s.discount
            and t.reward_bound == s.reward_bound
        )
        if not same:
            raise ValueError("target and source may differ only in their transition tensors")
        if self.target_sa.probs.shape != t.shape or self.source_sa.probs.shape != t.shape:
            raise ValueError("sampling distributions must match the MDP shape")


@dataclass(frozen=True)
class TransitionDataset:
    """i.i.d. ``(s, a, s')`` triples stored as three parallel integer arrays."""

    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    num_states: int
    num_actions: int
    seed: int | None = None

    def __post_init__(self):
        for name in ("states", "actions", "next_states"):
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype=np.int64))
        n = len(self.states)
        if len(self.actions) != n or len(self.next_states) != n:
            raise ValueError("triple arrays must have equal length")
        S, A = self.num_states, self.num_actions
        if n and (self.states.min() < 0 or self.states.max() >= S
                  or self.actions.min() < 0 or self.actions.max() >= A
                  or self.next_states.min() < 0 or self.next_states.max() >= S):
            raise ValueError("dataset index out of range")

    @property
    def size(self) -> int:
        return len(self.states)

    @property
    def triples(self) -> list[tuple[int, int, int]]:
        return list(zip(self.states.tolist(), self.actions.tolist(), self.next_states.tolist()))

    @cached_property
    def next_state_counts(self) -> np.ndarray:
        """C[s, a, s'] = number of triples equal to (s, a, s')."""
        S, A = self.num_states, self.num_actions
        flat = (self.states * A + self.actions) * S + self.next_states
        return np.bincount(flat, minlength=S * A * S).reshape(S, A, S)

    @cached_property
    def counts(self) -> np.ndarray:
        return self.next_state_counts.sum(axis=2)

    @cached_property
    def empirical_dist(self) -> np.ndarray:
        return self.counts / self.size


@dataclass
class CoverageResult:
    uncovered: list[tuple[int, int]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.uncovered

    def __bool__(self) -> bool:
        return self.ok


def random_mdp(num_states: int, num_actions: int, discount: float,
               reward_bound: float = 1.0, seed: int = 0,
               branching: int | None = None) -> TabularMDP:
    """Random MDP with Dirichlet(1) transition rows and rewards in (-B, B).

    ``branching`` restricts each row to that many randomly chosen successors.
    """
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(num_states), size=(num_states, num_actions))
    if branching is not None:
        if not 1 <= branching <= num_states:
            raise ValueError("branching must lie in [1, num_states]")
        mask = np.zeros_like(P, dtype=bool)
        for s in range(num_states):
            for a in range(num_actions):
                mask[s, a, rng.choice(num_states, size=branching, replace=False)] = True
        P = np.where(mask, P, 0.0)
        P /= P.sum(axis=2, keepdims=True)
    # open interval: the bound on |r| is strict
    reward = reward_bound * rng.uniform(-1.0, 1.0, size=(num_states, num_actions))
    reward = np.clip(reward, -np.nextafter(reward_bound, 0), np.nextafter(reward_bound, 0))
    rho = np.full(num_states, 1.0 / num_states)
    return TabularMDP(P, reward, rho, discount, reward_bound)


def perturb_dynamics(mdp: TabularMDP, epsilon: float, seed: int) -> TabularMDP:
    """Mix every transition row with a seeded random row: (1-eps) P + eps R."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon {epsilon!r} outside [0, 1]")
    rng = np.random.default_rng(seed)
    R = rng.dirichlet(np.ones(mdp.num_states), size=(mdp.num_states, mdp.num_actions))
    return mdp.with_transition((1.0 - epsilon) * mdp.transition + epsilon * R)


def sample_indices(transition: np.ndarray, sa_probs: np.ndarray, n: int,
                   rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    S, A = sa_probs.shape
    flat = rng.choice(S * A, size=n, p=sa_probs.ravel())
    states, actions = np.divmod(flat, A)
    cdf = np.cumsum(transition[states, actions], axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(n)
    next_states = (cdf <= u[:, None]).sum(axis=1)
    return states, actions, np.minimum(next_states, S - 1)


def sample_dataset(mdp: TabularMDP, sa_dist: SamplingDistribution, n: int,
                   seed: int) -> TransitionDataset:
    """Draw ``n`` i.i.d. triples: (s, a) ~ sa_dist, then s' ~ P[s, a]."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    s, a, sp = sample_indices(mdp.transition, sa_dist.probs, n, rng)
    return TransitionDataset(s, a, sp, mdp.num_states, mdp.num_actions, seed)


def coverage_check(dataset: TransitionDataset) -> CoverageResult:
    return CoverageResult([(int(s), int(a)) for s, a in np.argwhere(dataset.counts == 0)])


def beta_bounds(p_hat, p_source, p_target) -> tuple[float, float]:
    """Extreme values of the three distribution ratios p_hat/p_source,
    p_hat/p_target and p_source/p_target over all cells."""
    p_hat, p_source, p_target = (np.asarray(p, dtype=float) for p in (p_hat, p_source, p_target))
    for name, p in (("empirical", p_hat), ("source", p_source), ("target", p_target)):
        if np.any(p <= 0):
            cells = [tuple(map(int, c)) for c in np.argwhere(p <= 0)]
            raise ValueError(f"{name} distribution has zero cells: {cells}")
    ratios = np.stack([p_hat / p_source, p_hat / p_target, p_source / p_target])
    return float(ratios.min()), float(ratios.max())


def save_dataset(dataset: TransitionDataset, path) -> None:
    header = {"n": dataset.size, "seed": dataset.seed,
              "num_states": dataset.num_states, "num_actions": dataset.num_actions}
    lines = [json.dumps(header)]
    lines += [json.dumps({"s": s, "a": a, "sp": sp}) for s, a, sp in dataset.triples]
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> TransitionDataset:
    lines = Path(path).read_text().splitlines()
    header = json.loads(lines[0])
    rows = [json.loads(line) for line in lines[1:] if line.strip()]
    if len(rows) != header["n"]:
        raise ValueError(f"header says n={header['n']} but found {len(rows)} triples")
    return TransitionDataset(
        np.array([r["s"] for r in rows], dtype=np.int64),
        np.array([r["a"] for r in rows], dtype=np.int64),
        np.array([r["sp"] for r in rows], dtype=np.int64),
        header["num_states"], header["num_actions"], header.get("seed"),
    )


def save_sampling_distribution(dist: SamplingDistribution, path) -> None:
    Path(path).write_text(json.dumps(dist.to_dict()) + "\n")


def load_sampling_distribution(path) -> SamplingDistribution:
    return SamplingDistribution.from_dict(json.loads(Path(path).read_text()))
