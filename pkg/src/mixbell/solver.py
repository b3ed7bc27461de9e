"""Weighted source/target fitted Q-iteration.

Each step minimizes

    (1 - lam) * empirical TD error on the target dataset
    + lam * exact TD error under the source domain

over all Q-tables. The objective separates over (s, a) and every cell has a
closed-form minimizer; ``weighted_update`` computes it, and
``brute_force_minimizer`` recovers it by direct 1-D search as an oracle.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bounds import backup_variances, dynamics_gap_xi
from .data import DomainPair, SamplingDistribution, TransitionDataset
from .mdp import OPTIMALITY, OperatorMode, Optimality, TabularMDP, exact_backup, state_values

TRACE_COLUMNS = ("k", "emp_td", "exact_td_target", "xi_k", "var_term_k",
                 "dist_expabs", "dist_sup")


class UncoveredCellError(ValueError):
    """lam = 0 leaves a cell with no data and no source term."""


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda {lam!r} outside [0, 1]")
    return lam


def sample_backups(q_prev, dataset: TransitionDataset, mdp: TabularMDP,
                   mode: OperatorMode = OPTIMALITY) -> np.ndarray:
    """One-sample backup r(s_i, a_i) + gamma V(s'_i) for every triple."""
    v = state_values(np.asarray(q_prev, dtype=float), mode)
    return mdp.reward[dataset.states, dataset.actions] + mdp.discount * v[dataset.next_states]


def empirical_backup_means(q_prev, dataset: TransitionDataset, mdp: TabularMDP,
                           mode: OperatorMode = OPTIMALITY) -> np.ndarray:
    """Per-cell average of the one-sample backups; NaN on uncovered cells."""
    counts = dataset.counts
    with np.errstate(invalid="ignore", divide="ignore"):
        freq = dataset.next_state_counts / counts[:, :, None]
    v = state_values(np.asarray(q_prev, dtype=float), mode)
    return mdp.reward + mdp.discount * (freq @ v)


def mix_backups(empirical_mean, counts, n: int, source_backup, source_sa_probs,
                lam: float) -> np.ndarray:
    """Closed-form cell minimizer written as a convex combination.

    With p_hat = N(s,a)/N the minimizer is w * empirical_mean + (1 - w) * source_backup,
    w = (1-lam) p_hat / ((1-lam) p_hat + lam p_src). This equals the ratio form
    algebraically and makes lam = 0 and lam = 1 reproduce their endpoints exactly.
    Broadcasts over leading batch axes of ``empirical_mean`` and ``counts``.
    """
    p_hat = counts / n
    data_mass = (1.0 - lam) * p_hat
    denom = data_mass + lam * source_sa_probs
    if np.any(denom == 0):
        cells = sorted({(int(i[-2]), int(i[-1])) for i in np.argwhere(denom == 0)})
        raise UncoveredCellError(f"lambda = 0 with uncovered cells {cells}")
    w = data_mass / denom
    emp = np.where(counts > 0, empirical_mean, 0.0)
    return w * emp + (1.0 - w) * source_backup


def weighted_update(q_prev, dataset: TransitionDataset, source: TabularMDP,
                    source_sa: SamplingDistribution, lam: float,
                    mode: OperatorMode = OPTIMALITY) -> np.ndarray:
    """One step of the weighted iteration from ``q_prev``.

    Target and source share rewards and discount, so the one-sample backups on
    the target data are formed with the source's reward table.
    """
    lam = _check_lambda(lam)
    q_prev = np.asarray(q_prev, dtype=float)
    emp = empirical_backup_means(q_prev, dataset, source, mode)
    src = exact_backup(source, q_prev, mode)
    return mix_backups(emp, dataset.counts, dataset.size, src, source_sa.probs, lam)


def brute_force_minimizer(q_prev, dataset: TransitionDataset, source: TabularMDP,
                          source_sa: SamplingDistribution, lam: float,
                          mode: OperatorMode = OPTIMALITY, tol: float = 1e-10) -> np.ndarray:
    """Minimize the weighted objective cell by cell with ternary search.

    Deliberately shares no code with ``weighted_update``: backups are formed
    triple by triple and the per-cell objective is searched directly.
    """
    lam = _check_lambda(lam)
    q_prev = np.asarray(q_prev, dtype=float)
    S, A = q_prev.shape
    gamma = source.discount
    if isinstance(mode, Optimality):
        values = [max(q_prev[t]) for t in range(S)]
    else:
        values = [sum(mode.policy.probs[t, b] * q_prev[t, b] for b in range(A)) for t in range(S)]

    per_cell: dict[tuple[int, int], list[float]] = {}
    for s, a, t in dataset.triples:
        per_cell.setdefault((s, a), []).append(source.reward[s, a] + gamma * values[t])

    n = dataset.size
    radius = 2.0 * source.reward_bound / (1.0 - gamma)
    out = np.empty((S, A))
    for s in range(S):
        for a in range(A):
            samples = per_cell.get((s, a), [])
            targets = np.array(samples + [source.reward[s, a] + gamma * values[t] for t in range(S)])
            weights = np.array([(1.0 - lam) / n] * len(samples)
                               + [lam * source_sa.probs[s, a] * source.transition[s, a, t]
                                  for t in range(S)])
            if not np.any(weights > 0):
                raise UncoveredCellError(f"lambda = 0 with uncovered cell ({s}, {a})")
            out[s, a] = _ternary_min(weights, targets, -radius, radius, tol)
    return out


def _ternary_min(weights, targets, lo, hi, tol):
    # f(v) = sum w (v - b)^2. f(m2) - f(m1) = (m2 - m1) * sum w (m1 + m2 - 2b); comparing
    # through this factorization keeps the comparison exact where f itself is flat.
    while hi - lo > tol:
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if np.dot(weights, m1 + m2 - 2.0 * targets) > 0:
            hi = m2
        else:
            lo = m1
    return 0.5 * (lo + hi)


def target_update(q_prev, target: TabularMDP, mode: OperatorMode = OPTIMALITY) -> np.ndarray:
    """Exact minimizer of the expected target TD error: the target backup."""
    return exact_backup(target, q_prev, mode)


def empirical_td_error(q, q_prev, dataset: TransitionDataset, mdp: TabularMDP,
                       mode: OperatorMode = OPTIMALITY) -> float:
    if dataset.size == 0:
        raise ValueError("empty dataset")
    q = np.asarray(q, dtype=float)
    resid = q[dataset.states, dataset.actions] - sample_backups(q_prev, dataset, mdp, mode)
    return float(np.mean(resid ** 2))


def expected_td_error(q, q_prev, mdp: TabularMDP, sa_dist: SamplingDistribution,
                      mode: OperatorMode = OPTIMALITY) -> float:
    """Exact TD error with (s, a) ~ sa_dist and s' ~ P[s, a]."""
    q = np.asarray(q, dtype=float)
    v = state_values(np.asarray(q_prev, dtype=float), mode)
    b_hat = mdp.reward[:, :, None] + mdp.discount * v[None, None, :]
    sq = (q[:, :, None] - b_hat) ** 2
    return float(np.einsum("sa,sat,sat->", sa_dist.probs, mdp.transition, sq))


@dataclass(frozen=True)
class SolveConfig:
    lam: float
    num_iterations: int
    mode: OperatorMode = OPTIMALITY
    init_q: np.ndarray | None = None

    def __post_init__(self):
        _check_lambda(self.lam)
        if self.num_iterations < 1:
            raise ValueError("num_iterations must be at least 1")


@dataclass
class SolveTrace:
    """Iterates Q^0..Q^K and per-step diagnostics for steps k = 1..K.

    Row k describes the step Q^{k-1} -> Q^k: TD errors of Q^k against backups
    of Q^{k-1}, the dynamics gap and realized variance term of Q^{k-1}, and
    distances of Q^k to Q* when Q* was supplied.
    """

    q_history: list[np.ndarray]
    dataset: TransitionDataset
    emp_td: list[float] = field(default_factory=list)
    exact_td_target: list[float] = field(default_factory=list)
    xi: list[float] = field(default_factory=list)
    var_term: list[float] = field(default_factory=list)
    dist_expabs: list[float] = field(default_factory=list)
    dist_sup: list[float] = field(default_factory=list)

    @property
    def final_q(self) -> np.ndarray:
        return self.q_history[-1]

    def rows(self):
        for k in range(1, len(self.q_history)):
            i = k - 1
            yield (k, self.emp_td[i], self.exact_td_target[i], self.xi[i], self.var_term[i],
                   self.dist_expabs[i] if self.dist_expabs else float("nan"),
                   self.dist_sup[i] if self.dist_sup else float("nan"))

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TRACE_COLUMNS)
            for row in self.rows():
                writer.writerow([row[0]] + [repr(float(x)) for x in row[1:]])


def run_fqi(pair: DomainPair, dataset: TransitionDataset, config: SolveConfig,
            q_star=None) -> SolveTrace:
    mode = config.mode
    target = pair.target
    q = (np.zeros(target.shape) if config.init_q is None
         else np.array(config.init_q, dtype=float))
    trace = SolveTrace([q], dataset)
    counts = dataset.counts
    covered = bool(np.all(counts > 0))
    for _ in range(config.num_iterations):
        q_next = weighted_update(q, dataset, pair.source, pair.source_sa, config.lam, mode)
        trace.emp_td.append(empirical_td_error(q_next, q, dataset, target, mode))
        trace.exact_td_target.append(expected_td_error(q_next, q, target, pair.target_sa, mode))
        trace.xi.append(dynamics_gap_xi(q, target, pair.source, mode))
        trace.var_term.append(float(np.max(backup_variances(q, target, mode) / counts))
                              if covered else float("inf"))
        if q_star is not None:
            diff = np.abs(q_next - q_star)
            trace.dist_expabs.append(float(np.sum(pair.target_sa.probs * diff)))
            trace.dist_sup.append(float(diff.max()))
        trace.q_history.append(q_next)
        q = q_next
    return trace
