import json
import subprocess
import sys

import numpy as np
import pytest

from mixbell.cli import build_parser, main
from mixbell.mdp import load_mdp

SUBCOMMANDS = ("gen-mdp", "perturb", "collect", "solve", "check-bounds", "sweep", "report")
TINY = ["--resamples", "10", "--worst-case-resamples", "10", "--iters", "4",
        "--epsilons", "0,0.3", "--n-list", "60"]


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.mark.parametrize("sub", SUBCOMMANDS)
def test_help_lists_flags(sub, capsys):
    with pytest.raises(SystemExit) as info:
        main([sub, "--help"])
    assert info.value.code == 0
    text = capsys.readouterr().out
    for action in build_parser()._subparsers._group_actions[0].choices[sub]._actions:
        for flag in action.option_strings:
            assert flag in text


def test_gen_then_zero_perturb_copies_transitions(tmp_path, capsys):
    m, s = tmp_path / "m.json", tmp_path / "s.json"
    assert run(["gen-mdp", "--states", "4", "--actions", "3", "--gamma", "0.95", "--seed", "7",
                "--out", str(m)], capsys)[0] == 0
    assert run(["perturb", "--in", str(m), "--epsilon", "0", "--seed", "1", "--out", str(s)],
               capsys)[0] == 0
    np.testing.assert_array_equal(load_mdp(s).transition, load_mdp(m).transition)


def test_solve_same_domain_reaches_fixed_point(tmp_path, capsys):
    m, d, t = tmp_path / "m.json", tmp_path / "d.jsonl", tmp_path / "t.csv"
    main(["gen-mdp", "--states", "4", "--actions", "3", "--gamma", "0.9", "--seed", "7",
          "--out", str(m)])
    main(["collect", "--mdp", str(m), "--n", "100", "--seed", "2", "--out", str(d)])
    code, out, _ = run(["solve", "--target", str(m), "--source", str(m), "--data", str(d),
                        "--lambda", "1", "--iters", "200", "--out", str(t)], capsys)
    assert code == 0
    residual = float(out.strip().rsplit(" ", 1)[1])
    assert residual <= 1e-8
    assert len(t.read_text().splitlines()) == 201


def test_missing_file_and_bad_flag_exit_2(tmp_path, capsys):
    code, _, err = run(["perturb", "--in", str(tmp_path / "nope.json"), "--epsilon", "0",
                        "--seed", "1", "--out", str(tmp_path / "x.json")], capsys)
    assert code == 2 and "nope.json" in err
    with pytest.raises(SystemExit) as info:
        main(["gen-mdp", "--states", "2", "--actions", "2", "--gamma", "0.9", "--seed", "1",
              "--out", "x", "--colour", "red"])
    assert info.value.code == 2
    assert "--colour" in capsys.readouterr().err
    code, _, err = run(["gen-mdp", "--states", "2", "--actions", "2", "--gamma", "1.5",
                        "--seed", "1", "--out", str(tmp_path / "x.json")], capsys)
    assert code == 2


def test_bad_config_key_is_usage_error(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"colour": 1}))
    code, _, err = run(["check-bounds", "--config", str(cfg), "--out-dir", str(tmp_path)], capsys)
    assert code == 2 and "colour" in err


def test_check_bounds_writes_run_dir_and_summary(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("MIXBELL_OUT_DIR", str(tmp_path / "runs"))
    code, out, _ = run(["check-bounds", "--config", "default.json", *TINY], capsys)
    assert code == 0
    assert out.startswith("PASS") and len(out.strip().splitlines()) == 1
    (run_dir,) = (tmp_path / "runs").iterdir()
    effective = json.loads((run_dir / "config.json").read_text())
    assert effective["num_resamples"] == 10 and effective["n_list"] == [60]
    report = json.loads((run_dir / "bound_report.json").read_text())
    assert report["config_hash"] == run_dir.name and report["verdict"] == "pass"
    code, out, _ = run(["report", "--in", str(run_dir / "bound_report.json")], capsys)
    assert code == 0 and "theorem1: pass" in out


def test_check_bounds_failure_exit_1(tmp_path, capsys, monkeypatch):
    from mixbell import harness

    real = harness.check_theorem1

    def broken(*args, **kw):
        rows = real(*args, **kw)
        rows[0]["pass"] = False
        return rows

    monkeypatch.setattr(harness, "check_theorem1", broken)
    code, out, err = run(["check-bounds", *TINY, "--theorems", "1", "--out-dir", str(tmp_path)],
                         capsys)
    assert code == 1 and out.startswith("FAIL")
    assert "theorem1: epsilon=0.0 n=60 lambda=0.0 k=1" in err


def test_sweep_writes_csvs(tmp_path, capsys):
    code, out, _ = run(["sweep", *TINY, "--families", "2", "--out-dir", str(tmp_path)], capsys)
    assert code == 0
    (run_dir,) = tmp_path.iterdir()
    names = {p.name for p in run_dir.iterdir()}
    assert {"sweep_by_lambda.csv", "sweep_by_epsilon.csv", "sweep_by_n.csv",
            "config.json"} <= names


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "mixbell", "--help"], capture_output=True,
                          text=True)
    assert proc.returncode == 0 and "check-bounds" in proc.stdout
