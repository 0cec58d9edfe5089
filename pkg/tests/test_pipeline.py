import json
import re

import numpy as np
import pytest

from mbiv.datamodel import Dataset, write_csv
from mbiv.errors import DataError, UsageError
from mbiv.pipeline import PipelineConfig, load_config, parse_config_text, run_pipeline
from mbiv.sem import mb_reduced, sample


@pytest.fixture(scope="module")
def mb_report():
    return run_pipeline(PipelineConfig(scenario="mb_reduced", response="y", n=5000, seed=7))


def _edges(d):
    return {tuple(e) for e in d["graph"]["edges"]}


def test_mb_reduced_end_to_end(mb_report):
    d = mb_report.to_dict()
    assert d["verdict"] == "ok"
    assert d["final_mb"] == ["x1", "x2", "x3", "x4"]
    # the oriented graph restricted to the blanket matches the generating structure
    core = {"x1", "x2", "x3", "x4", "y"}
    got = {e for e in _edges(d) if set(e) <= core}
    assert got == {("x1", "y"), ("x2", "y"), ("y", "x4"), ("x3", "x4")}
    assert not d["graph"]["undirected"]


def test_report_invariants(mb_report):
    d = mb_report.to_dict()
    ok = {}
    for block in d["iv_candidates"]:
        for r in block["reports"]:
            ok.setdefault((block["endogenous"], block["response"]), {})[r["candidate"]] = r["verdict"]
    assert d["iv_tests"], "expected at least one instrumented regression"
    for t in d["iv_tests"]:
        verdicts = ok[(t["endogenous"], t["response"])]
        for z in t["instrument"] if isinstance(t["instrument"], list) else [t["instrument"]]:
            assert verdicts[z] in ("valid", "conditional")
    assert set(d["final_mb"]) <= set(d["graph"]["vertices"])
    assert "timings" not in json.dumps(d)


def test_text_report_is_projection_of_json(mb_report):
    js = mb_report.to_json()
    txt = mb_report.to_text()
    for tok in re.findall(r"-?\d+\.\d+(?:e-?\d+)?", txt):
        assert tok in js, tok


def test_iv_basic_detects_endogeneity():
    rep = run_pipeline(PipelineConfig(scenario="iv_basic", response="y", n=5000, seed=0,
                                      forbid=[("z", "y")])).to_dict()
    assert rep["verdict"] == "endogeneity detected"
    tests = [t for t in rep["iv_tests"] if t["endogenous"] == "x"]
    assert tests and tests[0]["endogeneity"] is True
    z = [r for b in rep["iv_candidates"] for r in b["reports"] if r["candidate"] == "z"]
    assert z[0]["verdict"] == "valid"


def test_iv_invalid_flags_instrument():
    rep = run_pipeline(PipelineConfig(scenario="iv_invalid", response="y", n=5000, seed=0,
                                      graph="scenario")).to_dict()
    z = [r for b in rep["iv_candidates"] if b["endogenous"] == "x" for r in b["reports"]
         if r["candidate"] == "z"]
    assert z[0]["verdict"] == "invalid"
    assert "z -> u" in z[0]["g1_witness"]
    assert not any(t["instrument"] == "z" or "z" in t["instrument"] for t in rep["iv_tests"]
                   if t["endogenous"] == "x")


def test_byte_identical_reports():
    cfg = PipelineConfig(scenario="iv_basic", response="y", n=800, seed=3)
    assert run_pipeline(cfg).to_json() == run_pipeline(cfg).to_json()


def test_pure_noise_gives_no_selection(tmp_path):
    rng = np.random.default_rng(0)
    ds = Dataset(("y", "a", "b", "c"), rng.standard_normal((300, 4)))
    path = tmp_path / "noise.csv"
    write_csv(ds, path)
    rep = run_pipeline(PipelineConfig(data=str(path), response="y", seed=1)).to_dict()
    assert (rep["verdict"] == "no selection") == (not rep["final_mb"])
    assert set(rep["final_mb"]) <= {"a", "b", "c"}


def test_log_columns_and_union_rule(tmp_path):
    ds = sample(mb_reduced(), 1500, seed=2)
    pos = Dataset(ds.names, np.exp(ds.values / 4))
    path = tmp_path / "pos.csv"
    write_csv(pos, path)
    cfg = PipelineConfig(data=str(path), response="y", log=["y", "x1", "x2", "x3", "x4"],
                         mb_rule="union", seed=0)
    d = run_pipeline(cfg).to_dict()
    sel = d["selection"]
    assert sel["logged"] is not None
    union = set(sel["linear"]["solar"]["selected"]) | set(sel["logged"]["solar"]["selected"])
    assert set(d["final_mb"]) == union


def test_missing_response_is_data_error(tmp_path):
    ds = Dataset(("a", "b"), np.ones((5, 2)) * np.arange(5)[:, None])
    path = tmp_path / "d.csv"
    write_csv(ds, path)
    with pytest.raises(DataError, match=r"\[ingest\].*'y'") as e:
        run_pipeline(PipelineConfig(data=str(path), response="y"))
    assert e.value.exit_code == 2


def test_write_files(tmp_path):
    rep = run_pipeline(PipelineConfig(scenario="iv_basic", response="y", n=500, seed=0))
    files = rep.write(tmp_path / "out")
    names = {f.name for f in files}
    assert {"report.json", "report.txt", "timings.json", "graph.txt", "graph.dot"} <= names
    assert json.loads((tmp_path / "out" / "report.json").read_text()) == rep.to_dict()
    timings = json.loads((tmp_path / "out" / "timings.json").read_text())
    assert all(v >= 0 for v in timings.values())


def test_config_parsing(tmp_path):
    text = """
    # comment line
    scenario = iv_basic
    response = y
    n = 400        # trailing comment
    forbid = z->y
    stamps = z:0, x:1, y:2
    en_alphas = 0.5
    param.r = 0.3
    rectify_mb = true
    """
    kv = parse_config_text(text)
    assert kv["n"] == "400"
    path = tmp_path / "run.cfg"
    path.write_text(text)
    cfg = load_config(path, {"seed": "9"})
    assert cfg.n == 400 and cfg.seed == 9 and cfg.rectify_mb is True
    assert cfg.forbid == [("z", "y")]
    assert cfg.stamps == {"z": 0, "x": 1, "y": 2}
    assert cfg.scenario_params == {"r": 0.3}
    assert cfg.en_alphas == [0.5]


@pytest.mark.parametrize("kv,msg", [
    ({"scenario": "iv_basic"}, "response"),
    ({"response": "y"}, "exactly one"),
    ({"response": "y", "scenario": "iv_basic", "colour": "red"}, "unknown config key"),
    ({"response": "y", "scenario": "iv_basic", "n": "many"}, "n"),
    ({"response": "y", "scenario": "iv_basic", "mb_rule": "both"}, "mb_rule"),
    ({"response": "y", "scenario": "iv_basic", "rectify_mb": "perhaps"}, "rectify_mb"),
])
def test_config_errors(kv, msg):
    with pytest.raises(UsageError, match=msg):
        PipelineConfig.from_mapping(kv)


def test_config_file_errors(tmp_path):
    with pytest.raises(UsageError, match="cannot read config"):
        load_config(tmp_path / "missing.cfg")
    with pytest.raises(UsageError, match="line 2"):
        parse_config_text("response = y\nnot a pair\n")
