"""Monte-Carlo bound validation and lambda sweeps on random tabular domains.

Seed splitting: the dataset for resample ``m`` of a (purpose, family, n) cell
is drawn with ``SeedSequence([master_seed, purpose, family, n, m, attempt])``.
A dataset therefore depends only on its own coordinates and never on the
order work is scheduled in; ``attempt`` counts coverage retries. Datasets do
not depend on epsilon, so every epsilon column sees the same target data.

Means and standard errors are reduced with ``math.fsum``, which is exactly
rounded and so independent of resample order.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .bounds import (BoundInputs, ConvergenceInputs, backup_variances, convergence_bound_rhs,
                     dynamics_gap_xi, expected_bound_rhs, neighborhood_c, optimal_lambda_closed,
                     optimal_lambda_numeric, sigma_max_upper, varsigma, worst_case_bound_rhs,
                     xi_max_upper)
from .data import (DomainPair, SamplingDistribution, beta_bounds, coverage_check,
                   perturb_dynamics, random_mdp, sample_dataset)
from .mdp import OPTIMALITY, TabularMDP, exact_backup, optimal_q, state_values
from .solver import mix_backups

LAMBDA_GRID = (0.0, 0.2, 0.4, 0.5, 0.6, 0.8, 1.0)
PURPOSE = {"theorem1": 1, "theorem2": 2, "theorem3": 3, "sweep": 4}
EVAL_METRICS = ("td_gap", "policy_return")
SE_MULTIPLIER = 3.0
DECAY_FACTOR = 1.01


class CoverageError(RuntimeError):
    """No covering dataset was found within the retry cap."""


@dataclass(frozen=True)
class ExperimentConfig:
    num_states: int = 5
    num_actions: int = 3
    discount: float = 0.9
    reward_bound: float = 1.0
    reward_seed: int = 0
    dynamics_seed: int = 1
    branching: int | None = None
    epsilons: tuple[float, ...] = (0.0, 0.2, 0.5)
    n_list: tuple[int, ...] = (100, 400)
    lambda_grid: tuple[float, ...] = LAMBDA_GRID
    num_resamples: int = 1000
    worst_case_resamples: int = 2000
    num_iterations: int = 50
    delta: float = 0.1
    master_seed: int = 0
    eval_metric: str = "td_gap"
    theorems: tuple[int, ...] = (1, 2, 3)
    num_families: int = 20
    coverage_retries: int = 1000

    def __post_init__(self):
        for name in ("epsilons", "n_list", "lambda_grid", "theorems"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not all(0.0 <= x <= 1.0 for x in self.lambda_grid) or not self.lambda_grid:
            raise ValueError("lambda_grid must be a nonempty subset of [0, 1]")
        if not all(0.0 <= e <= 1.0 for e in self.epsilons):
            raise ValueError("epsilons must lie in [0, 1]")
        if min(self.num_resamples, self.worst_case_resamples) < 2:
            raise ValueError("standard errors need at least 2 resamples")
        if self.num_iterations < 1 or any(n < 1 for n in self.n_list):
            raise ValueError("num_iterations and every n must be positive")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.eval_metric not in EVAL_METRICS:
            raise ValueError(f"eval_metric must be one of {EVAL_METRICS}")
        if not set(self.theorems) <= {1, 2, 3}:
            raise ValueError("theorems must be drawn from {1, 2, 3}")

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))


def child_seed(*path: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in path]).generate_state(1, np.uint64)[0])


def build_pair(config: ExperimentConfig, epsilon: float, family: int = 0) -> DomainPair:
    """Target from ``reward_seed + family``; source mixes it toward a random
    tensor drawn from ``dynamics_seed + family``. Both sample (s, a) uniformly."""
    target = random_mdp(config.num_states, config.num_actions, config.discount,
                        config.reward_bound, config.reward_seed + family, config.branching)
    source = perturb_dynamics(target, epsilon, config.dynamics_seed + family)
    uniform = SamplingDistribution.uniform(config.num_states, config.num_actions)
    return DomainPair(target, source, uniform, uniform)


def mean_se(values) -> tuple[float, float]:
    values = [float(x) for x in values]
    m = len(values)
    mean = math.fsum(values) / m
    if m < 2:
        return mean, float("nan")
    var = math.fsum((x - mean) ** 2 for x in values) / (m - 1)
    return mean, math.sqrt(var / m)


# --------------------------------------------------------------------------
# batched datasets and updates
# --------------------------------------------------------------------------

@dataclass
class DatasetBatch:
    """Next-state count tensors of M datasets of size n, shape (M, S, A, S)."""

    next_state_counts: np.ndarray
    n: int
    seeds: list[int] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.next_state_counts.shape[0]

    @property
    def counts(self) -> np.ndarray:
        return self.next_state_counts.sum(axis=3)

    @property
    def freq(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.next_state_counts / self.counts[..., None]


def draw_datasets(mdp: TabularMDP, sa_dist: SamplingDistribution, n: int, num: int,
                  seed_path: tuple[int, ...], retries: int,
                  require_coverage: bool = True) -> DatasetBatch:
    S, A = mdp.shape
    C = np.empty((num, S, A, S), dtype=np.int64)
    seeds = []
    for m in range(num):
        for attempt in range(retries + 1):
            seed = child_seed(*seed_path, m, attempt)
            ds = sample_dataset(mdp, sa_dist, n, seed)
            if not require_coverage or coverage_check(ds):
                break
        else:
            raise CoverageError(f"no covering dataset of size {n} in {retries + 1} draws "
                                f"(resample {m})")
        C[m] = ds.next_state_counts
        seeds.append(seed)
    return DatasetBatch(C, n, seeds)


def batch_beta_bounds(batch: DatasetBatch, pair: DomainPair) -> tuple[float, float]:
    """Ratio bounds valid for every dataset in the batch at once."""
    lows, highs = zip(*(beta_bounds(c / batch.n, pair.source_sa.probs, pair.target_sa.probs)
                        for c in batch.counts))
    return min(lows), max(highs)


def _backup(mdp: TabularMDP, v: np.ndarray) -> np.ndarray:
    # v: (M, S) -> (M, S, A); the one routine used for every batched exact backup
    return mdp.reward + mdp.discount * np.einsum("sat,mt->msa", mdp.transition, v)


def _empirical_means(batch: DatasetBatch, mdp: TabularMDP, v: np.ndarray) -> np.ndarray:
    return mdp.reward + mdp.discount * np.einsum("msat,mt->msa", batch.freq, v)


def _batch_values(q, M: int, mode) -> np.ndarray:
    v = state_values(np.asarray(q, dtype=float), mode)
    return np.broadcast_to(v, (M, v.shape[-1]))


def batch_weighted_update(q_prev, batch: DatasetBatch, source: TabularMDP,
                          source_sa: SamplingDistribution, lam: float, mode=OPTIMALITY):
    """``weighted_update`` applied to every dataset of the batch.

    ``q_prev`` is one table (S, A) shared by all datasets or a stack (M, S, A).
    """
    v = _batch_values(q_prev, batch.size, mode)
    emp = _empirical_means(batch, source, v)
    return mix_backups(emp, batch.counts, batch.n, _backup(source, v), source_sa.probs, lam)


def batch_expected_td_error(q_batch, v_prev, mdp: TabularMDP,
                            sa_dist: SamplingDistribution) -> np.ndarray:
    """Exact TD error of each Q in the stack against one-sample backups built
    from next-state values ``v_prev`` (M, S)."""
    b_hat = mdp.reward[None, :, :, None] + mdp.discount * v_prev[:, None, None, :]
    sq = (q_batch[..., None] - b_hat) ** 2
    return np.einsum("sa,sat,msat->m", sa_dist.probs, mdp.transition, sq)


def comparator_iterates(mdp: TabularMDP, num_iterations: int, mode=OPTIMALITY,
                        init_q=None) -> list[np.ndarray]:
    q = np.zeros(mdp.shape) if init_q is None else np.asarray(init_q, dtype=float)
    out = [q]
    for _ in range(num_iterations):
        q = exact_backup(mdp, q, mode)
        out.append(q)
    return out


def _same_dynamics(pair: DomainPair) -> bool:
    return np.array_equal(pair.target.transition, pair.source.transition)


def _finite(x):
    x = float(x)
    return x if math.isfinite(x) else None


# --------------------------------------------------------------------------
# bound checks
# --------------------------------------------------------------------------

def _one_step_gaps(pair, batch, q_k, lam, mode):
    """Per-dataset excess target TD error of the weighted step over the exact step."""
    M = batch.size
    v = _batch_values(q_k, M, mode)
    exact_next = _backup(pair.target, v)
    q_lam = batch_weighted_update(q_k, batch, pair.source, pair.source_sa, lam, mode)
    return (batch_expected_td_error(q_lam, v, pair.target, pair.target_sa)
            - batch_expected_td_error(exact_next, v, pair.target, pair.target_sa))


def _bound_inputs(config, pair, n, lam, vs, xi, beta_l, beta_u):
    return BoundInputs(lam=lam, varsigma=vs, xi=xi, beta_l=beta_l, beta_u=beta_u,
                       reward_bound=pair.target.reward_bound, discount=pair.target.discount,
                       num_states=pair.target.num_states, num_actions=pair.target.num_actions,
                       n=n, delta=config.delta)


def _optimal_lambdas(inp: BoundInputs) -> tuple[float | None, float | None]:
    if inp.varsigma == 0 and inp.xi == 0:
        return None, None
    closed = (optimal_lambda_closed(inp.beta_l, inp.varsigma, inp.xi)
              if inp.beta_l == inp.beta_u else None)
    return closed, optimal_lambda_numeric(inp)


def check_theorem1(pair: DomainPair, config: ExperimentConfig, n: int, family: int = 0,
                   mode=OPTIMALITY) -> list[dict]:
    """Expected-bound check: for every comparator iterate Q^k (k = 1..K) and every
    lambda, the mean over resamples of the excess target TD error of one
    weighted step against the expected bound with worst-case varsigma."""
    target = pair.target
    batch = draw_datasets(target, pair.target_sa, n, config.num_resamples,
                          (config.master_seed, PURPOSE["theorem1"], family, n),
                          config.coverage_retries)
    beta_l, beta_u = batch_beta_bounds(batch, pair)
    counts = batch.counts
    rows = []
    iterates = comparator_iterates(target, config.num_iterations, mode)
    for k in range(1, config.num_iterations + 1):
        q_k = iterates[k]
        xi = dynamics_gap_xi(q_k, target, pair.source, mode)
        vs_worst = varsigma(q_k, target, mode=mode)
        vs_realized, _ = mean_se((backup_variances(q_k, target, mode) / counts).max(axis=(1, 2)))
        inp0 = _bound_inputs(config, pair, n, 0.0, vs_worst, xi, beta_l, beta_u)
        closed, numeric = _optimal_lambdas(inp0)
        for lam in config.lambda_grid:
            lhs, se = mean_se(_one_step_gaps(pair, batch, q_k, lam, mode))
            inp = replace(inp0, lam=lam)
            rhs = expected_bound_rhs(inp)
            rows.append({
                "k": k, "lambda": lam, "lhs_mean": lhs, "lhs_se": se,
                "rhs_worst_case": rhs,
                "rhs_realized": expected_bound_rhs(replace(inp, varsigma=vs_realized)),
                "xi": xi, "varsigma_worst_case": vs_worst,
                "varsigma_realized_mean": vs_realized,
                "beta_l": beta_l, "beta_u": beta_u,
                "lambda_star_closed": closed, "lambda_star_numeric": numeric,
                "pass": bool(lhs <= rhs + SE_MULTIPLIER * se),
            })
    return rows


def check_theorem2(pair: DomainPair, config: ExperimentConfig, n: int, family: int = 0,
                   mode=OPTIMALITY) -> list[dict]:
    """High-probability bound check: the fraction of resamples whose excess
    target TD error exceeds the bound must stay below delta plus 3 binomial SEs."""
    target = pair.target
    M = config.worst_case_resamples
    batch = draw_datasets(target, pair.target_sa, n, M,
                          (config.master_seed, PURPOSE["theorem2"], family, n),
                          config.coverage_retries)
    beta_l, beta_u = batch_beta_bounds(batch, pair)
    d = config.delta
    allowed = d + SE_MULTIPLIER * math.sqrt(d * (1.0 - d) / M)
    rows = []
    iterates = comparator_iterates(target, config.num_iterations, mode)
    for k in range(1, config.num_iterations + 1):
        q_k = iterates[k]
        xi = dynamics_gap_xi(q_k, target, pair.source, mode)
        vs_worst = varsigma(q_k, target, mode=mode)
        for lam in config.lambda_grid:
            gaps = _one_step_gaps(pair, batch, q_k, lam, mode)
            rhs = worst_case_bound_rhs(_bound_inputs(config, pair, n, lam, vs_worst, xi,
                                                     beta_l, beta_u))
            frac = int(np.count_nonzero(gaps > rhs)) / M
            rows.append({
                "k": k, "lambda": lam, "violation_fraction": frac, "allowed_fraction": allowed,
                "rhs": rhs, "max_realized": float(gaps.max()), "xi": xi,
                "varsigma_worst_case": vs_worst, "beta_l": beta_l, "beta_u": beta_u,
                "pass": bool(frac <= allowed),
            })
    return rows


def run_weighted_fqi_batch(pair: DomainPair, batch: DatasetBatch, lam: float,
                           num_iterations: int, mode=OPTIMALITY, init_q=None):
    """Weighted iteration on every dataset of the batch at once.

    Returns the stack of iterates (K+1, M, S, A) plus trace estimates of
    xi_max and sigma_max over iterates Q^0..Q^{K-1}.
    """
    M = batch.size
    q0 = np.zeros(pair.target.shape) if init_q is None else np.asarray(init_q, dtype=float)
    q = np.broadcast_to(q0, (M,) + q0.shape).copy()
    history = [q]
    xi_max = sigma_max = 0.0
    covered = batch.counts > 0
    for _ in range(num_iterations):
        v = state_values(q, mode)
        b_target = _backup(pair.target, v)
        b_source = _backup(pair.source, v)
        emp = _empirical_means(batch, pair.source, v)
        xi_max = max(xi_max, float(np.max((b_target - b_source) ** 2)))
        if covered.any():
            sigma_max = max(sigma_max, float(np.max(np.abs(emp - b_target)[covered])))
        q = mix_backups(emp, batch.counts, batch.n, b_source, pair.source_sa.probs, lam)
        history.append(q)
    return np.stack(history), xi_max, sigma_max


def check_theorem3(pair: DomainPair, config: ExperimentConfig, n: int, family: int = 0,
                   mode=OPTIMALITY) -> list[dict]:
    """Convergence check, one record per lambda.

    The distance of Q_lam^k to Q* is the target-sampling weighted mean absolute
    error (``expabs``, used for the verdict); the sup norm is reported beside
    it. The initial term is E_D ||Q^0 - Q*||_inf, i.e. the sup-norm distance
    of Q^0. Verdicts use analytic ceilings on sigma_max and xi_max; trace
    estimates are reported next to them.
    """
    target = pair.target
    batch = draw_datasets(target, pair.target_sa, n, config.num_resamples,
                          (config.master_seed, PURPOSE["theorem3"], family, n),
                          config.coverage_retries)
    beta_l, beta_u = batch_beta_bounds(batch, pair)
    gamma = target.discount
    q_star = optimal_q(target, mode=mode)
    q0 = np.zeros(target.shape)
    mu = pair.target_sa.probs
    init = float(np.max(np.abs(q0 - q_star)))
    sig_up = sigma_max_upper(target)
    xi_up = xi_max_upper(target, pair.source)
    same = _same_dynamics(pair)
    K = config.num_iterations
    cells = []
    for lam in config.lambda_grid:
        history, xi_trace, sig_trace = run_weighted_fqi_batch(pair, batch, lam, K, mode)
        diff = np.abs(history[1:] - q_star)
        dist = {"expabs": np.einsum("sa,kmsa->km", mu, diff), "sup": diff.max(axis=(2, 3))}
        c_up = neighborhood_c(lam, beta_l, beta_u, gamma, sig_up, xi_up)
        record = {
            "lambda": lam, "beta_l": beta_l, "beta_u": beta_u,
            "sigma_max_trace": sig_trace, "sigma_max_upper": sig_up,
            "xi_max_trace": xi_trace, "xi_max_upper": xi_up,
            "init_dist_term": init,
            "neighborhood_c_upper": c_up,
            "neighborhood_c_trace": neighborhood_c(lam, beta_l, beta_u, gamma,
                                                   sig_trace, xi_trace),
            "source_equals_target": same,
            "per_k": [],
        }
        ok = {"expabs": True, "sup": True}
        decay_ok = {"expabs": True, "sup": True}
        final = {}
        for k in range(K):
            upper = ConvergenceInputs(lam, beta_l, beta_u, gamma, sig_up, xi_up, k, init)
            rhs = convergence_bound_rhs(upper)
            entry = {"k": k + 1, "rhs_upper": rhs,
                     "rhs_trace": convergence_bound_rhs(replace(upper, sigma_max=sig_trace,
                                                                xi_max=xi_trace))}
            for reading in ("expabs", "sup"):
                lhs, se = mean_se(dist[reading][k])
                entry.update({f"lhs_{reading}": lhs, f"se_{reading}": se})
                ok[reading] &= lhs <= rhs + SE_MULTIPLIER * se
                decay_ok[reading] &= lhs <= DECAY_FACTOR * gamma ** (k + 1) * init
                final[reading] = (lhs, se)
            record["per_k"].append(entry)
        for reading in ("expabs", "sup"):
            lhs, se = final[reading]
            record[f"bound_holds_every_k_{reading}"] = bool(ok[reading])
            record[f"final_within_c_{reading}"] = bool(lhs <= c_up + SE_MULTIPLIER * se)
            record[f"decay_within_factor_{reading}"] = (bool(decay_ok[reading])
                                                       if same and lam == 1.0 else None)
        record["pass"] = record["bound_holds_every_k_expabs"]
        cells.append(record)
    return cells


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

def _sanitize(obj):
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (bool, type(None), str)):
        return obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _finite(obj)
    return obj


@dataclass
class BoundCheckReport:
    config: ExperimentConfig
    theorem1: list[dict] = field(default_factory=list)
    theorem2: list[dict] = field(default_factory=list)
    theorem3: list[dict] = field(default_factory=list)

    def failures(self) -> list[str]:
        out = []
        for name, rows in (("theorem1", self.theorem1), ("theorem2", self.theorem2),
                           ("theorem3", self.theorem3)):
            for r in rows:
                if not r["pass"]:
                    where = f"epsilon={r['epsilon']} n={r['n']} lambda={r['lambda']}"
                    if "k" in r:
                        where += f" k={r['k']}"
                    out.append(f"{name}: {where}")
        return out

    @property
    def passed(self) -> bool:
        return not self.failures()

    def summary(self) -> str:
        parts = []
        for name, rows in (("theorem1", self.theorem1), ("theorem2", self.theorem2),
                           ("theorem3", self.theorem3)):
            if rows:
                bad = sum(not r["pass"] for r in rows)
                parts.append(f"{name} {len(rows) - bad}/{len(rows)}")
        return ("PASS" if self.passed else "FAIL") + " " + " ".join(parts)

    def to_dict(self) -> dict:
        def section(rows):
            return {"verdict": "pass" if all(r["pass"] for r in rows) else "fail",
                    "violations": sum(not r["pass"] for r in rows), "rows": rows}

        d = {"config": self.config.to_dict(), "config_hash": self.config.hash(),
             "verdict": "pass" if self.passed else "fail"}
        for name in ("theorem1", "theorem2", "theorem3"):
            rows = getattr(self, name)
            if rows:
                d[name] = section(rows)
        return _sanitize(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*items)))


def _check_cell(config: ExperimentConfig, epsilon: float, n: int):
    pair = build_pair(config, epsilon)
    tag = {"epsilon": epsilon, "n": n}
    out = {}
    for th, fn in ((1, check_theorem1), (2, check_theorem2), (3, check_theorem3)):
        out[th] = [{**tag, **r} for r in fn(pair, config, n)] if th in config.theorems else []
    return out


def run_bound_checks(config: ExperimentConfig, jobs: int = 1) -> BoundCheckReport:
    cells = [(config, eps, n) for eps in config.epsilons for n in config.n_list]
    report = BoundCheckReport(config)
    for res in _map(_check_cell, cells, jobs):
        report.theorem1 += res[1]
        report.theorem2 += res[2]
        report.theorem3 += res[3]
    return report


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------

def batch_policy_returns(mdp: TabularMDP, q_batch: np.ndarray) -> np.ndarray:
    """policy_value of the greedy policy of every table in the stack."""
    M = q_batch.shape[0]
    S = mdp.num_states
    actions = np.argmax(q_batch, axis=2)
    rows = np.arange(S)
    P_pi = mdp.transition[rows, actions]
    r_pi = mdp.reward[rows, actions]
    v = np.linalg.solve(np.eye(S) - mdp.discount * P_pi, r_pi[..., None])[..., 0]
    return v @ mdp.initial_dist


def _sweep_family(config: ExperimentConfig, family: int) -> list[dict]:
    M = config.num_resamples
    K = config.num_iterations
    cells = []
    base = build_pair(config, 0.0, family)
    batches = {n: draw_datasets(base.target, base.target_sa, n, M,
                                (config.master_seed, PURPOSE["sweep"], family, n),
                                config.coverage_retries)
               for n in config.n_list}
    for eps in config.epsilons:
        pair = build_pair(config, eps, family)
        for n in config.n_list:
            for lam in config.lambda_grid:
                history, _, _ = run_weighted_fqi_batch(pair, batches[n], lam, K)
                q_last, q_prev = history[-1], history[-2]
                v_prev = state_values(q_prev, OPTIMALITY)
                exact_next = _backup(pair.target, v_prev)
                td_gap = (batch_expected_td_error(q_last, v_prev, pair.target, pair.target_sa)
                          - batch_expected_td_error(exact_next, v_prev, pair.target,
                                                    pair.target_sa))
                xi = np.max((exact_next - _backup(pair.source, v_prev)) ** 2, axis=(1, 2))
                returns = batch_policy_returns(pair.target, q_last)
                gap_mean, gap_se = mean_se(td_gap)
                ret_mean, ret_se = mean_se(returns)
                cells.append({
                    "family": family, "epsilon": eps, "n": n, "lambda": lam, "M": M,
                    "td_gap_mean": gap_mean, "td_gap_sd": gap_se * math.sqrt(M),
                    "policy_return_mean": ret_mean, "policy_return_sd": ret_se * math.sqrt(M),
                    "xi_measured": mean_se(xi)[0],
                })
    return cells


@dataclass
class SweepReport:
    config: ExperimentConfig
    cells: list[dict]

    def __post_init__(self):
        metric = self.config.eval_metric
        sign = 1.0 if metric == "td_gap" else -1.0
        groups: dict[tuple, list[dict]] = {}
        for c in self.cells:
            groups.setdefault((c["family"], c["epsilon"], c["n"]), []).append(c)
        self.best = {}
        for key, group in groups.items():
            # ties go to the smaller lambda
            best = min(group, key=lambda c: (sign * c[f"{metric}_mean"], c["lambda"]))
            self.best[key] = best["lambda"]
        for c in self.cells:
            c["metric_mean"] = c[f"{metric}_mean"]
            c["metric_sd"] = c[f"{metric}_sd"]
            c["best_lambda"] = int(self.best[(c["family"], c["epsilon"], c["n"])] == c["lambda"])

    @property
    def families(self) -> list[int]:
        return sorted({c["family"] for c in self.cells})

    def epsilon_trend(self, n: int) -> list[bool]:
        """Per family: is best lambda non-decreasing as epsilon decreases?"""
        eps_desc = sorted(self.config.epsilons, reverse=True)
        out = []
        for f in self.families:
            seq = [self.best[(f, e, n)] for e in eps_desc]
            out.append(all(a <= b for a, b in zip(seq, seq[1:])))
        return out

    def n_trend(self, epsilon: float) -> list[bool]:
        """Per family: is best lambda non-increasing as n grows?"""
        n_asc = sorted(self.config.n_list)
        out = []
        for f in self.families:
            seq = [self.best[(f, epsilon, n)] for n in n_asc]
            out.append(all(a >= b for a, b in zip(seq, seq[1:])))
        return out

    def trend_summary(self) -> dict:
        return {
            "epsilon_trend_fraction": {str(n): sum(t) / len(t) for n in self.config.n_list
                                       for t in [self.epsilon_trend(n)]},
            "n_trend_fraction": {str(e): sum(t) / len(t) for e in self.config.epsilons
                                 for t in [self.n_trend(e)]},
        }


def sweep(config: ExperimentConfig, families=None, jobs: int = 1) -> SweepReport:
    if families is None:
        families = range(config.num_families)
    cells = []
    for chunk in _map(_sweep_family, [(config, f) for f in families], jobs):
        cells += chunk
    return SweepReport(config, cells)


CELL_COLUMNS = ("family", "epsilon", "n", "lambda", "metric_mean", "metric_sd", "M",
                "best_lambda", "xi_measured", "td_gap_mean", "td_gap_sd",
                "policy_return_mean", "policy_return_sd")


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


def emit_reports(reports, out_dir) -> list[Path]:
    """Write bound reports as JSON and sweeps as one CSV per axis.

    Returns the written paths; an empty list of reports writes nothing.
    """
    out_dir = Path(out_dir)
    written = []
    for report in reports:
        if isinstance(report, BoundCheckReport):
            path = out_dir / "bound_report.json"
            path.write_text(report.to_json())
            written.append(path)
        elif isinstance(report, SweepReport):
            cells = report.cells
            path = out_dir / "sweep_by_lambda.csv"
            _write_csv(path, CELL_COLUMNS, ([c[k] for k in CELL_COLUMNS] for c in cells))
            written.append(path)
            keys = sorted(report.best, key=lambda t: (t[0], t[2], -t[1]))
            path = out_dir / "sweep_by_epsilon.csv"
            _write_csv(path, ("family", "n", "epsilon", "best_lambda"),
                       ((f, n, e, report.best[(f, e, n)]) for f, e, n in keys))
            written.append(path)
            keys = sorted(report.best, key=lambda t: (t[0], t[1], t[2]))
            path = out_dir / "sweep_by_n.csv"
            _write_csv(path, ("family", "epsilon", "n", "best_lambda"),
                       ((f, e, n, report.best[(f, e, n)]) for f, e, n in keys))
            written.append(path)
        else:
            raise TypeError(f"cannot emit {type(report).__name__}")
    return written
