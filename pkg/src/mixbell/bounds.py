"""Dynamics gap, backup variance and the performance/convergence bounds.

The bound formulas take plain floats so they can be evaluated, scanned and
minimized independently of any MDP.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .mdp import OPTIMALITY, OperatorMode, TabularMDP, exact_backup, state_values

if TYPE_CHECKING:
    from .data import DomainPair
    from .solver import SolveTrace

WORST_CASE = "worst_case"
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def dynamics_gap_xi(q, target: TabularMDP, source: TabularMDP,
                    mode: OperatorMode = OPTIMALITY) -> float:
    """max over (s, a) of the squared difference of the target and source backups."""
    if target.shape != source.shape:
        raise ValueError("domains must share state and action spaces")
    diff = exact_backup(target, q, mode) - exact_backup(source, q, mode)
    return float(np.max(diff ** 2))


def backup_variances(q, mdp: TabularMDP, mode: OperatorMode = OPTIMALITY) -> np.ndarray:
    """Variance of the one-sample backup at every cell, under s' ~ P[s, a].

    The reward cancels, leaving gamma^2 Var[V(s')].
    """
    v = state_values(np.asarray(q, dtype=float), mode)
    mean = mdp.transition @ v
    # centred second moment avoids the cancellation in E[X^2] - E[X]^2
    centred = v[None, None, :] - mean[:, :, None]
    return mdp.discount ** 2 * np.einsum("sat,sat->sa", mdp.transition, centred ** 2)


def variance_of_backup(q, mdp: TabularMDP, s: int, a: int,
                       mode: OperatorMode = OPTIMALITY) -> float:
    return float(backup_variances(q, mdp, mode)[s, a])


def varsigma(q, mdp: TabularMDP, counts=WORST_CASE, mode: OperatorMode = OPTIMALITY) -> float:
    """Maximal normalized backup variance.

    ``counts="worst_case"`` uses N(s, a) = 1 everywhere, the largest value over
    all covering datasets; passing a count table gives the realized value.
    """
    var = backup_variances(q, mdp, mode)
    if isinstance(counts, str):
        if counts != WORST_CASE:
            raise ValueError(f"unknown counts policy {counts!r}")
        return float(var.max())
    counts = np.asarray(counts)
    if np.any(counts <= 0):
        raise ValueError("realized varsigma needs every N(s, a) >= 1")
    return float(np.max(var / counts))


@dataclass(frozen=True)
class BoundInputs:
    lam: float
    varsigma: float
    xi: float
    beta_l: float
    beta_u: float
    reward_bound: float
    discount: float
    num_states: int
    num_actions: int
    n: int
    delta: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda {self.lam!r} outside [0, 1]")
        if self.varsigma < 0 or self.xi < 0:
            raise ValueError("varsigma and xi must be nonnegative")
        if not self.beta_u >= self.beta_l > 0:
            raise ValueError("need beta_u >= beta_l > 0")
        if not 0.0 <= self.discount < 1.0 or self.reward_bound <= 0:
            raise ValueError("need 0 <= gamma < 1 and B > 0")
        if self.n < 1 or not 0.0 < self.delta < 1.0:
            raise ValueError("need n >= 1 and delta in (0, 1)")


@dataclass(frozen=True)
class ConvergenceInputs:
    lam: float
    beta_l: float
    beta_u: float
    discount: float
    sigma_max: float
    xi_max: float
    k: int
    init_dist_term: float

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda {self.lam!r} outside [0, 1]")
        if not self.beta_u >= self.beta_l > 0:
            raise ValueError("need beta_u >= beta_l > 0")
        if min(self.sigma_max, self.xi_max, self.init_dist_term) < 0 or self.k < 0:
            raise ValueError("sigma_max, xi_max, init_dist_term and k must be nonnegative")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("need 0 <= gamma < 1")


def variance_weight(lam: float, beta_u: float) -> float:
    """(1 - lam) / (1 - lam + lam / beta_u)"""
    return (1.0 - lam) / (1.0 - lam + lam / beta_u)


def gap_weight(lam: float, beta_l: float) -> float:
    """lam / ((1 - lam) beta_l + lam)"""
    return lam / ((1.0 - lam) * beta_l + lam)


def _expected_rhs(lam, varsigma_, xi, beta_l, beta_u) -> float:
    return variance_weight(lam, beta_u) ** 2 * varsigma_ + gap_weight(lam, beta_l) ** 2 * xi


def expected_bound_rhs(inp: BoundInputs) -> float:
    return _expected_rhs(inp.lam, inp.varsigma, inp.xi, inp.beta_l, inp.beta_u)


def concentration_term(inp: BoundInputs) -> float:
    """Deviation allowance added by the high-probability bound."""
    lam, g, B, bl = inp.lam, inp.discount, inp.reward_bound, inp.beta_l
    denom = (1.0 - lam) * bl ** 2 + lam * bl
    variance_part = 8.0 * g * B ** 2 / (1.0 - g) ** 2 * inp.beta_u * (1.0 - lam) ** 2 / denom
    gap_part = 4.0 * g * B / (1.0 - g) * lam * (1.0 - lam) * math.sqrt(inp.xi) / denom
    scale = math.sqrt(0.5 * math.log(1.0 / inp.delta)) * inp.num_states * inp.num_actions
    return scale / math.sqrt(inp.n) * (variance_part + gap_part)


def worst_case_bound_rhs(inp: BoundInputs) -> float:
    return expected_bound_rhs(inp) + concentration_term(inp)


def optimal_lambda_closed(beta: float, varsigma_: float, xi: float) -> float:
    """Minimizer of the expected bound when beta_l = beta_u = beta."""
    if beta <= 0 or varsigma_ < 0 or xi < 0:
        raise ValueError("need beta > 0 and nonnegative varsigma, xi")
    num = beta ** 2 * varsigma_
    denom = num + beta * xi
    if denom == 0:
        raise ValueError("varsigma = xi = 0: the bound vanishes for every lambda")
    return num / denom


def golden_section(f, lo: float, hi: float, tol: float) -> float:
    """Minimize a unimodal ``f`` on [lo, hi] to an interval of width ``tol``."""
    x1 = hi - GOLDEN * (hi - lo)
    x2 = lo + GOLDEN * (hi - lo)
    f1, f2 = f(x1), f(x2)
    while hi - lo > tol:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - GOLDEN * (hi - lo)
            f1 = f(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + GOLDEN * (hi - lo)
            f2 = f(x2)
    return 0.5 * (lo + hi)


def optimal_lambda_numeric(inp: BoundInputs, tol: float = 1e-9, grid_points: int = 1001) -> float:
    """argmin of the expected bound over [0, 1]: grid scan, then golden section
    inside the bracket around the best grid point."""
    if tol <= 0:
        raise ValueError("tol must be positive")

    def f(lam):
        return _expected_rhs(lam, inp.varsigma, inp.xi, inp.beta_l, inp.beta_u)

    grid = np.linspace(0.0, 1.0, grid_points)
    values = np.array([f(x) for x in grid])
    i = int(np.argmin(values))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid_points - 1)]
    lam = golden_section(f, lo, hi, tol)
    # the refined point may lose to a bracket end when the minimum sits on the boundary
    return min((lam, lo, hi), key=lambda x: (f(x), x))


def convergence_bound_rhs(inp: ConvergenceInputs) -> float:
    g = inp.discount
    decay = g ** (inp.k + 1)
    per_step = (variance_weight(inp.lam, inp.beta_u) * inp.sigma_max
                + gap_weight(inp.lam, inp.beta_l) * math.sqrt(inp.xi_max))
    return decay * inp.init_dist_term + (1.0 - decay) / (1.0 - g) * per_step


def neighborhood_c(lam: float, beta_l: float, beta_u: float, discount: float,
                   sigma_max: float, xi_max: float) -> float:
    per_step = (variance_weight(lam, beta_u) * sigma_max
                + gap_weight(lam, beta_l) * math.sqrt(xi_max))
    return per_step / (1.0 - discount)


def trace_maxima(trace: "SolveTrace", pair: "DomainPair",
                 mode: OperatorMode = OPTIMALITY) -> tuple[float, float]:
    """Finite-trace estimates of xi_max and sigma_max.

    Both are maxima over the recorded iterates only, hence lower estimates of
    the suprema over all iterations. sigma_max uses the realized dataset and
    skips cells it does not cover.
    """
    from .solver import empirical_backup_means

    dataset = trace.dataset
    xi_max = 0.0
    sigma_max = 0.0
    covered = dataset.counts > 0
    for q in trace.q_history:
        xi_max = max(xi_max, dynamics_gap_xi(q, pair.target, pair.source, mode))
        dev = np.abs(empirical_backup_means(q, dataset, pair.target, mode)
                     - exact_backup(pair.target, q, mode))
        if covered.any():
            sigma_max = max(sigma_max, float(dev[covered].max()))
    return xi_max, sigma_max


def sigma_max_upper(mdp: TabularMDP) -> float:
    """Analytic ceiling on the empirical-mean deviation over every dataset and
    every iterate bounded by B/(1-gamma): gamma times the reachable value
    spread, zero for single-successor rows."""
    support = (mdp.transition > 0).sum(axis=2)
    spread = np.where(support >= 2, 2.0 * mdp.q_bound, 0.0)
    return float(mdp.discount * spread.max())


def xi_max_upper(target: TabularMDP, source: TabularMDP) -> float:
    """Analytic ceiling on the dynamics gap of any Q bounded by B/(1-gamma):
    (gamma * TV(P, P') * 2B/(1-gamma))^2 with the worst row's total variation."""
    tv = 0.5 * np.abs(target.transition - source.transition).sum(axis=2).max()
    return float((target.discount * tv * 2.0 * target.q_bound) ** 2)
