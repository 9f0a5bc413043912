import json
from pathlib import Path

import pytest
import yaml

from qhjb import cli, scenarios
from qhjb.hjb import random_mdp

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _write(tmp_path, doc, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc))
    return path


def _small_evolve(tmp_path, **extra):
    doc = {"scenario": "evolveOnly", "output": str(tmp_path / "out"),
           "grid": {"points": 128, "extent": 16.0, "boundary": "periodic"},
           "time": {"dt": 0.01, "steps": 20, "snapshotEvery": 10}}
    doc.update(extra)
    return _write(tmp_path, doc)


def test_evolve_run_writes_outputs(tmp_path):
    assert cli.main(["run", str(_small_evolve(tmp_path))]) == cli.EXIT_OK
    out = tmp_path / "out"
    summary = json.loads((out / "summary.json").read_text())
    manifest = json.loads((out / "manifest.json").read_text())
    assert summary["scenario"] == "evolveOnly" and summary["allAssertionsPassed"]
    assert summary["assertions"]["normDrift"]["value"] <= 1e-8
    assert manifest["config"]["grid"]["points"] == 128
    for rel in manifest["files"]:
        assert (out / rel).is_file(), rel
    assert any(f.endswith(".png") for f in manifest["files"])


def test_summary_is_byte_identical_across_reruns(tmp_path):
    cfg = _small_evolve(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", str(cfg), "--output", str(a)]) == 0
    assert cli.main(["run", str(cfg), "--output", str(b)]) == 0
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()


def test_relative_output_uses_env_root(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    cfg = _small_evolve(tmp_path, output="rel")
    assert cli.main(["run", str(cfg)]) == 0
    assert (tmp_path / "root" / "rel" / "summary.json").is_file()


@pytest.mark.parametrize("doc", [
    {"scenario": "evolveOnly", "output": "x", "colour": "blue"},
    {"scenario": "evolveOnly", "output": "x", "grid": {"points": 64, "spacing": 0.1}},
    {"scenario": "equivariance", "output": "x"},
    {"scenario": "noSuchScenario", "output": "x"},
    {"scenario": "evolveOnly"},
])
def test_invalid_configs_exit_two_without_output(tmp_path, doc, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    assert cli.main(["run", str(_write(tmp_path, doc))]) == cli.EXIT_INVALID
    assert not (tmp_path / "root").exists()


def test_unreadable_and_unparsable_configs(tmp_path):
    assert cli.main(["run", str(tmp_path / "missing.yaml")]) == cli.EXIT_INVALID
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["run", str(bad)]) == cli.EXIT_INVALID
    listy = tmp_path / "list.yaml"
    listy.write_text("- 1\n- 2\n")
    assert cli.main(["run", str(listy)]) == cli.EXIT_INVALID


def test_numerical_fault_exits_three(tmp_path, monkeypatch):
    def explode(cfg):
        raise FloatingPointError("overflow in step")

    monkeypatch.setitem(scenarios.RUNNERS, "evolveOnly", explode)
    assert cli.main(["run", str(_small_evolve(tmp_path))]) == cli.EXIT_NUMERICAL
    assert not (tmp_path / "out").exists()


def test_export_csv_and_json(tmp_path):
    cfg = _small_evolve(tmp_path)
    assert cli.main(["run", str(cfg)]) == 0
    out = tmp_path / "out"
    assert cli.main(["export", str(out), "--format", "csv"]) == 0
    text = (out / "summary.csv").read_text()
    assert text.startswith("section,name,value") and "normDrift" in text
    assert cli.main(["export", str(out), "--format", "json"]) == 0
    doc = json.loads((out / "export.json").read_text())
    assert doc["summary"]["scenario"] == "evolveOnly" and doc["fields"]
    assert cli.main(["export", str(tmp_path / "nowhere")]) == cli.EXIT_INVALID


def test_mdp_from_file(tmp_path):
    mdp_path = tmp_path / "mdp.json"
    mdp_path.write_text(random_mdp(6, 2, 0.8, seed=1).to_json())
    cfg = _write(tmp_path, {"scenario": "dpSolvers", "output": str(tmp_path / "dp"), "seed": 3,
                            "mdp": {"path": str(mdp_path), "demoSeeds": 2}, "figures": False})
    assert cli.main(["run", str(cfg)]) == 0
    assert json.loads((tmp_path / "dp" / "summary.json").read_text())["allAssertionsPassed"]


def test_json_config_is_accepted(tmp_path):
    src = CONFIGS / "subensemble.json"
    doc = json.loads(src.read_text())
    doc["output"] = str(tmp_path / "sub")
    path = tmp_path / "sub.json"
    path.write_text(json.dumps(doc))
    assert cli.main(["run", str(path)]) == 0


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.iterdir()))
def test_shipped_configs_validate(name):
    from qhjb.config import load_config
    assert load_config(CONFIGS / name).scenario


@pytest.mark.slow
@pytest.mark.parametrize("name", ["madelung_residuals.yaml", "transform_residuals.yaml",
                                  "classical_transforms.yaml", "half_q.yaml", "nelson.yaml",
                                  "vanishing.yaml", "dp_solvers.yaml"])
def test_shipped_configs_run(tmp_path, name):
    assert cli.main(["run", str(CONFIGS / name), "--output", str(tmp_path / "r")]) == 0
    summary = json.loads((tmp_path / "r" / "summary.json").read_text())
    assert summary["allAssertionsPassed"]


def test_verify_rejects_unknown_suite():
    with pytest.raises(SystemExit) as exc:
        cli.main(["verify", "everything"])
    assert exc.value.code == 2


def test_verify_dp_suite_passes(capsys):
    assert cli.main(["verify", "dp"]) == cli.EXIT_OK
    assert "PASS" in capsys.readouterr().out
