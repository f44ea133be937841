import json

import pytest

from pantsbench.cli import EXIT_ERROR, EXIT_OK, EXIT_VIOLATION, main


@pytest.fixture
def out(tmp_path, monkeypatch):
    monkeypatch.delenv("PANTSBENCH_OUT", raising=False)
    return tmp_path


def run(out, *argv):
    return main([*argv, "--out", str(out)])


def load(path):
    return json.loads(path.read_text())


def test_verify_lemma_nan_all_pass(out):
    assert run(out, "verify-lemma", "--lemma", "nan", "--cases", "1000") == EXIT_OK
    rep = load(out / "verify-nan.json")
    assert rep["passed"] and rep["checks"] == {"nan": True}
    assert rep["config"]["cases"] == 1000 and "schema_version" in rep


def test_verify_word(out, tmp_path):
    word = tmp_path / "word.json"
    word.write_text(json.dumps([{"op": "flow", "t": 3.0}, {"op": "rot2", "theta": 0.4, "i": 2, "j": 3}]))
    code = run(out, "verify-lemma", "--n", "3", "--word", str(word))
    assert code == EXIT_OK
    inv = load(out / "verify-word.json")["result"]["invariants"]
    assert inv["t"] == pytest.approx(3.0)


def test_match_icecap_reports_violation(out):
    code = run(out, "match", "--mode", "icecap", "--imbalance", "3:1", "--xi", "1.0", "--length", "1.0", "--svg")
    assert code == EXIT_VIOLATION
    rep = load(out / "match.json")
    cert = rep["result"]["certificates"]["g0"]
    assert cert["verified"] and cert["deficiency"] == 2
    assert (out / "feet-g0.svg").read_text().startswith("<svg")
    assert run(out, "match", "--mode", "icecap", "--xi", "1.0", "--length", "1.0", "--expect-violation") == EXIT_OK


def test_match_quasiuniform_passes(out):
    assert run(out, "match", "--mode", "quasiuniform", "--xi", "2.0") == EXIT_OK
    rep = load(out / "match.json")
    assert rep["result"]["matchings"]["g0"]["perfect"]
    assert run(out, "match", "--mode", "quasiuniform", "--xi", "2.0", "--expect-violation") == EXIT_VIOLATION


def test_empty_atlas_is_no_input(out, tmp_path, capsys):
    empty = tmp_path / "atlas.jsonl"
    empty.write_text("")
    assert run(out, "match", "--atlas", str(empty)) == EXIT_ERROR
    assert "NoInput" in capsys.readouterr().err


def test_empty_corpus_is_no_input(out, tmp_path, capsys):
    corpus = tmp_path / "corpus.json"
    corpus.write_text(json.dumps({"corpus": {}, "matchings": {}}))
    assert run(out, "assemble", "--corpus", str(corpus)) == EXIT_ERROR
    assert "NoInput" in capsys.readouterr().err


def test_report_without_reports_is_no_input(out):
    assert run(out, "report") == EXIT_ERROR


@pytest.mark.parametrize("argv", [["--R", "2.0"], ["--eps", "0.5"], ["--n", "9"], ["--eps", "0"]])
def test_config_validation_errors(out, argv, capsys):
    assert run(out, "assemble", *argv) == EXIT_ERROR
    assert "ConfigError" in capsys.readouterr().err


def test_config_file_unknown_field(out, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"R": 10.0, "colour": "red"}))
    assert run(out, "assemble", "--config", str(cfg)) == EXIT_ERROR


def test_assemble_single_and_random(out):
    assert run(out, "assemble") == EXIT_OK
    rep = load(out / "assemble.json")
    assert rep["result"]["chi"] == -2 and rep["result"]["genus"] == [2]
    assert run(out, "assemble", "--random", "10", "--curves", "4") == EXIT_OK
    assert load(out / "assemble.json")["result"]["chi"] == -20


def test_atlas_file_with_assembly(out, tmp_path):
    from pantsbench.geodesics import ModelClosedGeodesic, NormalFiberPoint, tau
    import numpy as np

    gamma = ModelClosedGeodesic(2.0, np.eye(3))
    x = NormalFiberPoint(0.3, np.array([0.0, 0.0, 1.0]))
    y = tau(gamma, x)
    recs = []
    for c in range(3):
        recs.append({"pants_id": "A", "orientation": 1, "cuff": c, "curve": f"g{c}", "s": x.s, "w": list(x.w)})
        recs.append({"pants_id": "B", "orientation": -1, "cuff": c, "curve": f"g{c}", "s": y.s, "w": list(y.w)})
    path = tmp_path / "atlas.jsonl"
    path.write_text("".join(json.dumps(r) + "\n" for r in recs))
    assert run(out, "match", "--atlas", str(path), "--xi", "0.01", "--length", "2.0") == EXIT_OK
    asm = load(out / "match.json")["result"]["assembly"]
    assert asm["chi"] == -4


def test_byte_identical_reports(out, tmp_path):
    other = tmp_path / "second"
    for d in (out, other):
        assert main(["match", "--mode", "bands", "--count", "60", "--xi", "0.3", "--seed", "3", "--out", str(d),
                     "--expect-violation"]) == EXIT_OK
        assert main(["verify-lemma", "--lemma", "absorb", "--cases", "20", "--out", str(d)]) == EXIT_OK
    for name in ("match.json", "verify-absorb.json"):
        assert (out / name).read_bytes() == (other / name).read_bytes()


def test_output_dir_environment_override(tmp_path, monkeypatch):
    target = tmp_path / "env"
    monkeypatch.setenv("PANTSBENCH_OUT", str(target))
    assert main(["assemble", "--out", str(tmp_path / "flag")]) == EXIT_OK
    assert (target / "assemble.json").exists()
    assert not (tmp_path / "flag" / "assemble.json").exists()


def test_report_collects(out):
    run(out, "assemble")
    run(out, "match", "--mode", "icecap", "--xi", "1.0", "--length", "1.0")
    assert run(out, "report") == EXIT_VIOLATION
    rep = load(out / "report.json")
    assert rep["checks"] == {"assemble": True, "match": False}
