import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixbell import harness
from mixbell.data import DomainPair, SamplingDistribution, perturb_dynamics, sample_dataset
from mixbell.harness import (BoundCheckReport, ExperimentConfig, SweepReport, check_theorem1,
                             check_theorem2, check_theorem3, draw_datasets, emit_reports,
                             mean_se, run_bound_checks, sweep)
from mixbell.mdp import greedy_policy, policy_value
from mixbell.solver import expected_td_error, weighted_update

from conftest import deterministic_mdp, make_pair

SMALL = dict(num_resamples=30, worst_case_resamples=40, num_iterations=6,
             epsilons=(0.0, 0.3), n_list=(60,))


def small(**kw):
    return ExperimentConfig(**{**SMALL, **kw})


def same_pair(mdp):
    sa = SamplingDistribution.uniform(*mdp.shape)
    return DomainPair(mdp, mdp, sa, sa)


def test_config_round_trip_and_hash():
    cfg = small()
    back = ExperimentConfig.from_dict(cfg.to_dict())
    assert back == cfg and back.hash() == cfg.hash()
    assert small(master_seed=1).hash() != cfg.hash()
    with pytest.raises(ValueError, match="unknown config keys"):
        ExperimentConfig.from_dict({"num_states": 3, "colour": 1})
    with pytest.raises(ValueError):
        small(lambda_grid=(0.0, 1.5))
    with pytest.raises(ValueError):
        small(eval_metric="score")


def test_child_seeds_depend_only_on_coordinates():
    assert harness.child_seed(0, 1, 2, 3, 4, 0) == harness.child_seed(0, 1, 2, 3, 4, 0)
    seeds = {harness.child_seed(0, 1, 0, 100, m, 0) for m in range(500)}
    assert len(seeds) == 500


def test_batch_update_matches_single_dataset_update():
    pair = make_pair(epsilon=0.3, seed=2, uniform=False)
    batch = draw_datasets(pair.target, pair.target_sa, 80, 5, (0, 9, 0, 80), 100)
    q = np.random.default_rng(2).normal(size=pair.target.shape)
    v = np.broadcast_to(q.max(axis=1), (5, 5))
    for lam in (0.0, 0.3, 1.0):
        out = harness.batch_weighted_update(q, batch, pair.source, pair.source_sa, lam)
        tds = harness.batch_expected_td_error(out, v, pair.target, pair.target_sa)
        for m, seed in enumerate(batch.seeds):
            ds = sample_dataset(pair.target, pair.target_sa, 80, seed)
            single = weighted_update(q, ds, pair.source, pair.source_sa, lam)
            np.testing.assert_allclose(out[m], single, rtol=0, atol=1e-12)
            assert tds[m] == pytest.approx(
                expected_td_error(single, q, pair.target, pair.target_sa), abs=1e-12)


def test_draw_datasets_covers_or_raises():
    pair = make_pair(seed=1)
    batch = draw_datasets(pair.target, pair.target_sa, 30, 10, (0, 1, 0, 30), 1000)
    assert np.all(batch.counts > 0) and batch.size == 10
    with pytest.raises(harness.CoverageError):
        draw_datasets(pair.target, pair.target_sa, 10, 1, (0, 1, 0, 10), 3)


def test_batch_policy_returns_match_single():
    pair = make_pair(seed=3)
    q = np.random.default_rng(3).normal(size=(4, 5, 3))
    got = harness.batch_policy_returns(pair.target, q)
    for m in range(4):
        assert got[m] == pytest.approx(policy_value(pair.target, greedy_policy(q[m])), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(values=st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=40), seed=st.integers(0, 99))
def test_mean_se_is_order_invariant(values, seed):
    perm = list(np.random.default_rng(seed).permutation(values))
    assert mean_se(values) == mean_se(perm)


def test_theorem1_same_domain_lambda_one_is_equality():
    pair = same_pair(make_pair(seed=0).target)
    rows = check_theorem1(pair, small(), 60)
    for r in rows:
        if r["lambda"] == 1.0:
            assert r["lhs_mean"] == 0.0 and r["rhs_worst_case"] == 0.0 and r["pass"]


def test_theorem1_deterministic_target_lambda_zero_is_exact():
    det = deterministic_mdp(4, 3, 0.9, seed=1)
    pair = DomainPair(det, perturb_dynamics(det, 0.5, 2), *[SamplingDistribution.uniform(4, 3)] * 2)
    rows = check_theorem1(pair, small(), 60)
    for r in rows:
        if r["lambda"] == 0.0:
            assert abs(r["lhs_mean"]) <= 1e-20
            assert r["varsigma_realized_mean"] == 0.0


def test_theorem1_random_pair_passes_everywhere():
    pair = make_pair(epsilon=0.3, seed=11)
    rows = check_theorem1(pair, ExperimentConfig(num_resamples=1000, num_iterations=10), 200)
    assert len(rows) == 70 and all(r["pass"] for r in rows)
    assert all(r["rhs_realized"] <= r["rhs_worst_case"] for r in rows)


def test_theorem2_cases():
    pair = make_pair(epsilon=0.3, seed=5)
    rows = check_theorem2(pair, small(), 60)
    assert all(r["violation_fraction"] == 0.0 for r in rows if r["lambda"] == 1.0)
    loose = check_theorem2(pair, small(delta=0.5), 30)
    assert all(r["violation_fraction"] <= 0.5 + 3 * math.sqrt(0.25 / 40) for r in loose)
    flat = make_pair(gamma=0.0, epsilon=0.3, seed=5)
    for r in check_theorem2(flat, small(), 60):
        assert r["rhs"] == pytest.approx(
            (1 - r["lambda"]) ** 2 / (1 - r["lambda"] + r["lambda"] / r["beta_u"]) ** 2
            * r["varsigma_worst_case"]
            + (r["lambda"] / ((1 - r["lambda"]) * r["beta_l"] + r["lambda"])) ** 2 * r["xi"])


def test_theorem3_value_iteration_rates():
    pair = same_pair(make_pair(seed=7).target)
    cells = check_theorem3(pair, small(num_iterations=30), 60)
    top = next(c for c in cells if c["lambda"] == 1.0)
    assert top["decay_within_factor_expabs"] and top["decay_within_factor_sup"]
    assert top["sigma_max_trace"] >= 0 and top["xi_max_trace"] == 0.0

    det = deterministic_mdp(4, 3, 0.9, seed=4)
    cells = check_theorem3(same_pair(det), small(num_iterations=30), 60)
    zero = next(c for c in cells if c["lambda"] == 0.0)
    init = zero["init_dist_term"]
    for e in zero["per_k"]:
        assert e["lhs_sup"] <= 0.9 ** e["k"] * init + 1e-12


def test_theorem3_random_pair_ends_inside_neighborhood():
    pair = make_pair(epsilon=0.3, seed=9)
    cells = check_theorem3(pair, ExperimentConfig(num_resamples=200, num_iterations=50), 100)
    assert all(c["pass"] for c in cells)
    assert all(c["final_within_c_expabs"] for c in cells)


def test_sweep_constant_for_identical_deterministic_domains(monkeypatch):
    det = deterministic_mdp(4, 3, 0.9, seed=3)
    monkeypatch.setattr(harness, "build_pair", lambda cfg, eps, family=0: same_pair(det))
    cfg = small(epsilons=(0.0,), n_list=(60,), num_families=1, num_states=4)
    rep = sweep(cfg)
    gaps = [c["td_gap_mean"] for c in rep.cells]
    assert max(gaps) - min(gaps) <= 1e-12
    assert rep.best[(0, 0.0, 60)] == 0.0  # ties go to the smaller lambda


def test_sweep_report_shape_and_best():
    cfg = small(epsilons=(0.0, 0.5), n_list=(40, 80), num_families=2, num_resamples=10)
    rep = sweep(cfg)
    assert len(rep.cells) == 2 * 2 * 2 * 7
    for key, best in rep.best.items():
        group = [c for c in rep.cells if (c["family"], c["epsilon"], c["n"]) == key]
        assert best in cfg.lambda_grid
        assert min(c["td_gap_mean"] for c in group) == next(
            c["td_gap_mean"] for c in group if c["lambda"] == best)
    ret = SweepReport(ExperimentConfig(**{**cfg.to_dict(), "eval_metric": "policy_return"}),
                      [dict(c) for c in rep.cells])
    for key, best in ret.best.items():
        group = [c for c in ret.cells if (c["family"], c["epsilon"], c["n"]) == key]
        assert max(c["policy_return_mean"] for c in group) == next(
            c["policy_return_mean"] for c in group if c["lambda"] == best)


def test_emit_nothing(tmp_path):
    assert emit_reports([], tmp_path) == []
    assert list(tmp_path.iterdir()) == []


def test_single_cell_sweep_csv(tmp_path):
    cfg = small(epsilons=(0.2,), n_list=(50,), lambda_grid=(0.5,), num_families=1)
    paths = emit_reports([sweep(cfg)], tmp_path)
    rows = list(csv.reader(open(tmp_path / "sweep_by_lambda.csv")))
    assert len(rows) == 2 and rows[0][:6] == ["family", "epsilon", "n", "lambda", "metric_mean",
                                              "metric_sd"]
    assert rows[1][7] == "1"
    assert {p.name for p in paths} == {"sweep_by_lambda.csv", "sweep_by_epsilon.csv",
                                       "sweep_by_n.csv"}


def test_reports_are_byte_identical_across_runs_and_jobs(tmp_path):
    cfg = small()
    outs = []
    for i, jobs in enumerate((1, 1, 2)):
        d = tmp_path / str(i)
        d.mkdir()
        emit_reports([run_bound_checks(cfg, jobs=jobs), sweep(small(num_families=2), jobs=jobs)],
                     d)
        outs.append({p.name: p.read_bytes() for p in d.iterdir()})
    assert outs[0] == outs[1] == outs[2]


def test_report_json_has_no_nan(tmp_path):
    rep = run_bound_checks(small(theorems=(3,)))
    text = rep.to_json()
    assert "NaN" not in text and "Infinity" not in text
    assert isinstance(rep, BoundCheckReport) and rep.summary().startswith(("PASS", "FAIL"))
