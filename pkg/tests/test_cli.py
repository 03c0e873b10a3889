import json
import math

import pytest

from hfloc.cli import main
from hfloc.config import ExperimentConfig, named
from hfloc.outputs import read_csv, write_csv

CONFIGS = ["canonical", "weak_coupling", "finite_volume", "localization", "weak_disorder"]


def run(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path)])


def test_validate_canonical_all_pass(tmp_path, capsys):
    assert run(tmp_path, "validate", "--config", "configs/canonical.json") == 0
    assert "all_pass=True" in capsys.readouterr().out
    report = json.loads((tmp_path / "validity.json").read_text())
    assert report["all_pass"] and report["config_hash"] == named("canonical").hash()


def test_threshold_tangent_case_gives_e(tmp_path):
    assert run(tmp_path, "threshold", "--override", "grids.two_M=[1]", "--override", "grids.mu=[1]") == 0
    meta, rows = read_csv(tmp_path / "threshold.csv")
    assert float(rows[0]["lambda_star"]) == math.e
    assert set(meta) >= {"config_hash", "code_version", "seed"}


def test_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    argv = ["frac-moment", "--config", "configs/localization.json", "--samples", "20",
            "--override", "L=4", "--override", "grids.distances=[0,1,2,3,4]"]
    assert main([*argv, "--out", str(a)]) == 0
    assert main([*argv, "--out", str(b)]) == 0
    for name in ("frac_moment.csv", "frac_moment_decay.dat", "frac_moment_fit.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_seed_changes_output(tmp_path):
    argv = ["solve-effpot", "--config", "configs/canonical.json"]
    main([*argv, "--seed", "1", "--out", str(tmp_path / "a")])
    main([*argv, "--seed", "2", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "effpot.csv").read_bytes() != (tmp_path / "b" / "effpot.csv").read_bytes()


def test_error_document(tmp_path, capsys):
    assert run(tmp_path, "validate", "--override", "L=-3") != 0
    doc = json.loads(capsys.readouterr().err)
    assert doc["status"] == "error" and doc["error"] == "ValueError"
    assert json.loads((tmp_path / "error.json").read_text()) == doc


def test_error_file_cleared_on_success(tmp_path):
    run(tmp_path, "validate", "--override", "L=-3")
    assert run(tmp_path, "validate") == 0
    assert not (tmp_path / "error.json").exists()


def test_unknown_config_key_rejected(tmp_path):
    assert run(tmp_path, "validate", "--override", "bogus=1") != 0


@pytest.mark.parametrize("name", CONFIGS)
def test_config_round_trip(name):
    cfg = named(name)
    again = ExperimentConfig.from_dict(json.loads(cfg.dumps()))
    assert again == cfg and again.hash() == cfg.hash()
    assert cfg.with_overrides([f"out={json.dumps('elsewhere')}"]).hash() == cfg.hash()
    assert cfg.with_overrides(["seed=123"]).hash() != cfg.hash()


def test_overrides_reach_nested_blocks():
    cfg = ExperimentConfig().with_overrides(["kernel.gamma_a=2.5", "fspec.eta=15", "name=x"])
    assert cfg.kernel["gamma_a"] == 2.5 and cfg.to_spec().fspec.eta == 15.0 and cfg.name == "x"
    with pytest.raises(ValueError):
        ExperimentConfig().with_overrides(["no_equals_sign"])


def test_csv_header_and_atomic_write(tmp_path):
    p = tmp_path / "t.csv"
    write_csv(p, {"config_hash": "abc", "seed": 0}, ["a", "b"], [(1, 2.5), {"a": 3, "b": math.inf}])
    meta, rows = read_csv(p)
    assert meta == {"config_hash": "abc", "seed": "0"}
    assert rows == [{"a": "1", "b": "2.5"}, {"a": "3", "b": "inf"}]
    assert [f.name for f in tmp_path.iterdir()] == ["t.csv"]  # no temp files left behind


def test_saw_and_report(tmp_path, capsys):
    assert run(tmp_path, "saw", "--override", "grids.saw_d=2", "--override", "grids.N_max=6") == 0
    _, rows = read_csv(tmp_path / "saw.csv")
    assert [int(r["C_N"]) for r in rows] == [1, 4, 12, 36, 100, 284, 780]
    assert run(tmp_path, "report") == 0
    assert "saw.csv: 7 rows" in (tmp_path / "report.txt").read_text()
