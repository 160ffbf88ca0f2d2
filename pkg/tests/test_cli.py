import json

import pytest

from railforge.cli import main
from railforge.solution import TRACE_COLUMNS

from conftest import line_doc, six_yard_doc


def _write(tmp_path, name, doc):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


def _s1_design():
    adj = [("1", "2"), ("2", "3"), ("2", "4"), ("3", "5"), ("4", "5"), ("5", "6")]
    pairs = adj + [(b, a) for a, b in adj]
    return {"schema": "railforge-design/1", "services": [{"pair": list(p)} for p in pairs]}


class TestValidate:
    def test_fixture_ok(self, fixture_path, capsys):
        assert main(["validate", fixture_path]) == 0

    def test_negative_volume(self, tmp_path, capsys):
        doc = six_yard_doc()
        doc["demands"][0]["volume"] = -1
        assert main(["validate", _write(tmp_path, "bad.json", doc)]) == 1
        out = capsys.readouterr().out
        assert out.count("error:") == 1

    def test_missing_file(self, tmp_path):
        assert main(["validate", str(tmp_path / "nope.json")]) == 2

    def test_garbled_file(self, tmp_path):
        p = tmp_path / "g.json"
        p.write_text("{{{")
        assert main(["validate", str(p)]) == 2

    def test_dump_catalog(self, fixture_path, tmp_path):
        out = tmp_path / "cat.json"
        assert main(["validate", fixture_path, "--dump-catalog", str(out)]) == 0
        cat = json.loads(out.read_text())
        assert cat["k"] == 3 and any(r["pair"] == ["3", "6"] for r in cat["paths"])

    def test_json_diagnostics(self, tmp_path, capsys):
        doc = six_yard_doc()
        doc["yards"][0]["accumulation_param"] = 0
        assert main(["validate", _write(tmp_path, "bad.json", doc), "--json"]) == 1
        diags = json.loads(capsys.readouterr().out)
        assert [d["code"] for d in diags] == ["yard.accumulation_param"]


class TestSolve:
    def test_seed_42_finds_three_six(self, fixture_path, tmp_path, capsys):
        out = tmp_path / "sol.json"
        trace = tmp_path / "trace.csv"
        assert main(["solve", fixture_path, "--seed", "42", "--out", str(out), "--trace-csv", str(trace)]) == 0
        doc = json.loads(out.read_text())
        assert ["3", "6"] in [s["pair"] for s in doc["design"]]
        assert doc["energy"]["E"] == 7450
        assert doc["solver"]["seed"] == 42 and doc["solver"]["stop_reason"]
        assert trace.read_text().splitlines()[0] == ",".join(TRACE_COLUMNS)
        report = capsys.readouterr().out
        assert "energy breakdown" in report and "link utilization" in report

    def test_byte_identical_runs(self, fixture_path, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for p in (a, b):
            assert main(["solve", fixture_path, "--seed", "42", "--out", str(p)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_zero_capacity_is_infeasible(self, tmp_path):
        doc = line_doc(capacity=0)
        assert main(["solve", _write(tmp_path, "z.json", doc), "--seed", "1"]) == 3

    def test_config_file(self, fixture_path, tmp_path, capsys):
        cfg = _write(tmp_path, "cfg.json", {"max_moves": 200, "beta_link": 5000, "seed": 3})
        assert main(["solve", fixture_path, "--config", cfg, "--json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["solver"]["iterations"] == 200
        assert doc["solver"]["penalties"]["beta_link"] == 5000
        assert doc["solver"]["seed"] == 3

    @pytest.mark.parametrize("cfg", [{"nonsense": 1}, {"h3": 2.0}, {"beta_yard": -1}])
    def test_bad_config(self, fixture_path, tmp_path, cfg):
        assert main(["solve", fixture_path, "--config", _write(tmp_path, "cfg.json", cfg)]) == 2

    def test_bad_flags(self, fixture_path):
        assert main(["solve", fixture_path, "--multistart", "0"]) == 2
        assert main(["solve", fixture_path, "--seed", "x"]) == 2
        assert main(["frobnicate"]) == 2

    def test_multistart(self, fixture_path, tmp_path, capsys):
        cfg = _write(tmp_path, "cfg.json", {"max_moves": 300})
        assert main(["solve", fixture_path, "--config", cfg, "--multistart", "2", "--workers", "1", "--json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["solver"]["starts"] == 2

    def test_invalid_instance(self, tmp_path):
        doc = six_yard_doc()
        doc["yards"][0]["accumulation_param"] = -1
        assert main(["solve", _write(tmp_path, "bad.json", doc)]) == 1


class TestEvaluate:
    def test_strategy_one_design(self, fixture_path, tmp_path, capsys):
        s1 = _s1_design()
        s2 = {**s1, "services": s1["services"] + [{"pair": ["3", "6"], "yards": ["3", "5", "6"]}]}
        z = []
        for name, d in (("s1.json", s1), ("s2.json", s2)):
            assert main(["evaluate", fixture_path, _write(tmp_path, name, d), "--json"]) == 0
            rep = json.loads(capsys.readouterr().out)
            z.append(rep["energy"]["Z"])
            if name == "s1.json":
                assert rep["energy"]["reclassification"] > 0
        assert z[0] - z[1] == 20

    def test_missing_adjacent_service(self, fixture_path, tmp_path, capsys):
        d = _s1_design()
        d["services"] = [s for s in d["services"] if s["pair"] != ["1", "2"]]
        assert main(["evaluate", fixture_path, _write(tmp_path, "d.json", d)]) == 1
        assert "cannot reach" in capsys.readouterr().err

    def test_forbidden_service_named(self, tmp_path, capsys):
        doc = six_yard_doc()
        doc["forbidden_services"] = [["3", "6"]]
        inst_path = _write(tmp_path, "inst.json", doc)
        d = _s1_design()
        d["services"].append({"pair": ["3", "6"]})
        assert main(["evaluate", inst_path, _write(tmp_path, "d.json", d)]) == 1
        assert "forbidden" in capsys.readouterr().err

    def test_stored_solution_round_trip(self, fixture_path, tmp_path, capsys):
        out = tmp_path / "sol.json"
        assert main(["solve", fixture_path, "--seed", "5", "--out", str(out)]) == 0
        capsys.readouterr()
        assert main(["evaluate", fixture_path, str(out), "--json"]) == 0
        rep = json.loads(capsys.readouterr().out)
        assert rep["energy"]["E"] == rep["stored_E"] == json.loads(out.read_text())["energy"]["E"]

    def test_digest_mismatch(self, fixture_path, tmp_path):
        out = tmp_path / "sol.json"
        assert main(["solve", fixture_path, "--seed", "5", "--out", str(out)]) == 0
        doc = six_yard_doc()
        doc["demands"][0]["volume"] = 11
        assert main(["evaluate", _write(tmp_path, "other.json", doc), str(out)]) == 1

    def test_tampered_energy(self, fixture_path, tmp_path):
        out = tmp_path / "sol.json"
        assert main(["solve", fixture_path, "--seed", "5", "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        doc["energy"]["E"] -= 1
        out.write_text(json.dumps(doc))
        assert main(["evaluate", fixture_path, str(out)]) == 1

    def test_unknown_document(self, fixture_path, tmp_path):
        assert main(["evaluate", fixture_path, _write(tmp_path, "x.json", {"schema": "other"})]) == 2


class TestOracle:
    def test_writes_solution_format(self, fixture_path, tmp_path, capsys):
        out = tmp_path / "opt.json"
        assert main(["oracle", fixture_path, "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["schema"] == "railforge-solution/1"
        assert doc["energy"]["E"] == 7450
        assert "3->6" in capsys.readouterr().out
        assert main(["evaluate", fixture_path, str(out)]) == 0

    def test_limit(self, fixture_path):
        assert main(["oracle", fixture_path, "--max-designs", "1"]) == 2


class TestGen:
    def test_six_yards_validate(self, tmp_path):
        out = tmp_path / "g.json"
        assert main(["gen", "--yards", "6", "--seed", "1", "--out", str(out)]) == 0
        assert main(["validate", str(out)]) == 0

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for p in (a, b):
            assert main(["gen", "--yards", "9", "--seed", "4", "--capacity-factor", "1.5", "--out", str(p)]) == 0
        assert a.read_bytes() == b.read_bytes()

    @pytest.mark.parametrize("args", [["--yards", "1"], ["--yards", "5", "--line-density", "2"],
                                      ["--yards", "5", "--demand-density", "-0.1"]])
    def test_bad_parameters(self, args):
        assert main(["gen", *args]) == 2

    def test_parameter_ranges(self, tmp_path):
        out = tmp_path / "g.json"
        assert main(["gen", "--yards", "30", "--seed", "2", "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert all(8 <= y["accumulation_param"] <= 12 and 2 <= y["relative_delay"] <= 5 for y in doc["yards"])
        assert doc["service_params"]["train_size"] in (40, 50, 60)
