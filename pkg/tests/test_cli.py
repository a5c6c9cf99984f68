import json

import pytest

from negcount import cli, kernels


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run_json(capsys, argv):
    code = cli.main(argv)
    return code, json.loads(capsys.readouterr().out) if code == 0 else None


COUNT_CFG = {
    "task": "count",
    "model": {"family": "Z1"},
    "potential": {"kind": "explicit", "entries": [[0, 3.0], [4, 1.0]]},
}


def test_count_task(tmp_path, capsys):
    code, report = run_json(capsys, ["run", write_config(tmp_path, COUNT_CFG)])
    assert code == 0
    assert report["results"]["n0"] == 2
    assert report["results"]["method"] == "dense"
    assert set(report) == {"task", "inputs_digest", "results", "tool_version", "wall_time"}


def test_bound_task_with_contributions(tmp_path, capsys):
    cfg = {
        "task": "bound",
        "model": {"family": "Z1"},
        "potential": {"kind": "explicit", "entries": [[2, 0.2]]},
        "params": {"bound": "bargmann_general", "check_count": True},
    }
    code, report = run_json(capsys, ["run", write_config(tmp_path, cfg), "--emit-contributions"])
    assert code == 0
    res = report["results"]
    assert res["value"] == pytest.approx(1.4)
    assert res["n0"] == 1
    assert res["contributions"] == [[2, pytest.approx(0.4)]]


def test_results_are_deterministic(tmp_path, capsys):
    path = write_config(tmp_path, COUNT_CFG)
    _, a = run_json(capsys, ["run", path])
    _, b = run_json(capsys, ["run", path])
    assert a["results"] == b["results"] and a["inputs_digest"] == b["inputs_digest"]


def test_malformed_json_exits_1_with_line(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "task": "count",\n  "model": {"family": "Z1"}\n  "potential": {}\n}')
    assert cli.main(["run", str(path)]) == 1
    assert "line 4" in capsys.readouterr().err


def test_unknown_family_names_the_field(tmp_path, capsys):
    cfg = dict(COUNT_CFG, model={"family": "Z7"})
    assert cli.main(["run", write_config(tmp_path, cfg)]) == 1
    assert "model.family" in capsys.readouterr().err


def test_usage_error_exits_1(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["run"])
    assert exc.value.code == 1


def test_seed_precedence(tmp_path, capsys, monkeypatch):
    cfg = {
        "task": "walk",
        "seed": 5,
        "model": {"family": "Z1"},
        "params": {"experiment": "laplace", "start": 2, "lam": 0.5, "t_cap": 100, "n_walks": 50},
    }
    path = write_config(tmp_path, cfg)
    _, from_config = run_json(capsys, ["run", path])
    monkeypatch.setenv("SPECTRAL_SEED", "9")
    _, from_env = run_json(capsys, ["run", path])
    _, from_flag = run_json(capsys, ["run", path, "--seed", "5"])
    assert from_config["task"]["seed"] == 5 and from_env["task"]["seed"] == 9
    assert from_flag["results"] == from_config["results"]
    assert from_env["results"]["estimate"] != from_config["results"]["estimate"]


def test_csv_output(tmp_path, capsys):
    assert cli.main(["run", write_config(tmp_path, COUNT_CFG), "--format", "csv"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "key value"
    assert "n0 2" in lines


def test_verify_suite_passes(capsys):
    assert cli.main(["verify", "operators"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["passed"] and {c["criterion"] for c in summary["criteria"]} == {7, 10}


def test_verify_unknown_suite_exits_1(capsys):
    assert cli.main(["verify", "nonsense"]) == 1


def test_injected_fault_fails_verification(monkeypatch, capsys):
    monkeypatch.setattr(kernels, "z1_resolvent", lambda lam, d: -1.01 / (lam * lam + 4 * lam) ** 0.5)
    assert cli.main(["verify", "1"]) == 3
    assert "AC01" in capsys.readouterr().err


def test_export_matrix(tmp_path):
    cfg = dict(COUNT_CFG, model={"family": "Z1", "radius": 5})
    out = tmp_path / "h.txt"
    assert cli.main(["export-matrix", write_config(tmp_path, cfg), "--out", str(out)]) == 0
    text = out.read_text()
    assert "np." not in text and len(text.splitlines()) > 5


def test_export_rtilde(tmp_path, capsys):
    cfg = {"model": {"family": "Z1"}, "params": {"sites": [-2, 0, 3]}}
    assert cli.main(["export-rtilde", write_config(tmp_path, cfg)]) == 0
    assert capsys.readouterr().out.splitlines() == ["-2 2.0", "0 0.0", "3 3.0"]


def test_continuum_task(tmp_path, capsys):
    cfg = {"task": "continuum", "params": {"square_well": {"depth": 10.0}, "sigmas": [0.5, 1.0]}}
    code, report = run_json(capsys, ["run", write_config(tmp_path, cfg)])
    assert code == 0 and report["results"]["count"] == 3


def test_potential_outside_box_is_rejected(tmp_path, capsys):
    cfg = dict(COUNT_CFG, model={"family": "Z1", "radius": 2})
    assert cli.main(["export-matrix", write_config(tmp_path, cfg), "--out", str(tmp_path / "h.txt")]) == 1
    assert "outside the box" in capsys.readouterr().err
