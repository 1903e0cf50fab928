import hashlib
import json
import subprocess
import sys

import pytest

from conftest import signal_config
from pkgsage.cli import main
from pkgsage.gnn import load_model
from pkgsage.graph import read_graphs


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture
def workspace(tmp_path):
    cfg = signal_config(n=120, seed=5, missingness={"race": 0.1})
    cfg.facet_vocab["household"] = ["ALONE", "FAMILY"]
    cfg.missingness["household"] = 1.0
    cfg.note_mentions = {"household": {"ALONE": "lives alone"}}
    cfg.note_rate = 1.0
    (tmp_path / "synth.json").write_text(json.dumps(cfg.to_dict()))
    (tmp_path / "tc.json").write_text(json.dumps({"d_embed": 8, "d_hidden": 8, "epochs": 2,
                                                  "lr": 0.01}))
    (tmp_path / "dict.json").write_text(json.dumps({"lives alone": {"facet": "household",
                                                                    "value": "ALONE"}}))
    (tmp_path / "conditions.json").write_text(json.dumps({"disease": ["428.0"]}))
    assert main(["--quiet", "synth", "--config", str(tmp_path / "synth.json"),
                 "--out", str(tmp_path / "cohort.csv")]) == 0
    return tmp_path


def test_synth_then_summarize(workspace):
    out = workspace / "summary.json"
    assert main(["--quiet", "summarize", "--cohort", str(workspace / "cohort.csv"),
                 "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["summary"]["n_patients"] == 120
    assert doc["summary"]["n_index_admissions"] == 120
    assert doc["missingness"]["per_facet"]["household"] == 1.0
    manifest = json.loads((workspace / "summary.json.manifest.json").read_text())
    assert manifest["command"] == "summarize" and manifest["outputs"] == [str(out)]


def test_enrich(workspace):
    out = workspace / "enriched.csv"
    before = digest(workspace / "cohort.csv")
    assert main(["--quiet", "enrich", "--cohort", str(workspace / "cohort.csv"),
                 "--dict", str(workspace / "dict.json"), "--out", str(out)]) == 0
    assert digest(workspace / "cohort.csv") == before
    assert "ALONE" in out.read_text()


@pytest.mark.parametrize("version,directed", [("V1", True), ("V3", False)])
def test_build_graphs_and_train(workspace, version, directed):
    graphs = workspace / "graphs.jsonl"
    assert main(["--quiet", "build-graphs", "--cohort", str(workspace / "cohort.csv"),
                 "--version", version, "--out", str(graphs)]) == 0
    loaded = read_graphs(graphs)
    assert len(loaded) == 120 and all(g.directed is directed for g in loaded)
    model, metrics = workspace / "model.json", workspace / "metrics.json"
    assert main(["--quiet", "train", "--graphs", str(graphs), "--train-config",
                 str(workspace / "tc.json"), "--out", str(model), "--metrics", str(metrics)]) == 0
    assert load_model(model).config.d_embed == 8
    assert len(json.loads(metrics.read_text())["history"]) == 2


def test_train_missing_graphs(tmp_path, capsys):
    missing = tmp_path / "nope.jsonl"
    code = main(["train", "--graphs", str(missing), "--out", str(tmp_path / "m.json")])
    assert code == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    assert str(missing) in json.loads(err[0])["message"]


def test_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["ablate"])
    assert exc.value.code == 2


def ablate(ws, tag, extra=()):
    out = ws / f"results_{tag}.json"
    args = ["--quiet", "ablate", "--cohort", str(ws / "cohort.csv"), "--train-config",
            str(ws / "tc.json"), "--seeds", "7", "--jobs", "1", "--out", str(out),
            "--report", str(ws / f"report_{tag}.csv"), "--markdown", str(ws / f"report_{tag}.md"),
            *extra]
    assert main(args) == 0
    return out


def test_ablate_is_byte_identical(workspace):
    a = ablate(workspace, "a", ["--conditions", str(workspace / "conditions.json")])
    b = ablate(workspace, "b", ["--conditions", str(workspace / "conditions.json")])
    assert a.read_bytes() == b.read_bytes()
    assert len(json.loads(a.read_text())["configs"]) == 20
    assert (workspace / "report_a.csv").read_bytes() == (workspace / "report_b.csv").read_bytes()
    for name in ("results_a.json", "report_a.csv", "report_a.md"):
        assert (workspace / f"{name}.manifest.json").exists()
    assert not list(workspace.glob(".*"))


def test_module_entry_point(workspace):
    proc = subprocess.run([sys.executable, "-m", "pkgsage.cli", "--quiet", "summarize",
                           "--cohort", str(workspace / "cohort.csv"),
                           "--out", str(workspace / "s.json")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
