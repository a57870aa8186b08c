import json

import numpy as np
import pytest

from opens.cli import main, parse_grid, parse_spec


class TestGridParsing:
    def test_scalar(self):
        assert parse_grid("3.5") == [3.5]

    def test_comma_list(self):
        assert parse_grid("0.3,0.7") == [0.3, 0.7]

    def test_integer_range(self):
        assert parse_grid("1:4") == [1.0, 2.0, 3.0, 4.0]

    def test_linear_count(self):
        assert parse_grid("0:1:5") == pytest.approx([0.0, 0.25, 0.5, 0.75, 1.0])

    def test_log_count(self):
        assert parse_grid("1:100:3:log") == pytest.approx([1.0, 10.0, 100.0])

    def test_log_default_count(self):
        vals = parse_grid("10:100000:log")
        assert len(vals) == 25
        assert vals[0] == pytest.approx(10.0)
        assert vals[-1] == pytest.approx(100000.0)

    def test_bad_grid(self):
        with pytest.raises(ValueError):
            parse_grid("1:2:3:4:5")

    def test_spec(self):
        s = parse_spec("scalar:0.25")
        assert s.kind == "scalar" and s.weight == 0.25
        with pytest.raises(ValueError):
            parse_spec("scalar")


class TestCommands:
    def test_unknown_command_usage_exit(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["no-such-command"])
        assert exc.value.code == 2

    def test_no_command(self):
        assert main([]) == 2

    def test_boson_holevo_csv(self, tmp_path):
        out = tmp_path / "h.csv"
        code = main(
            ["--output", str(out), "boson-holevo", "--L", "10", "--d", "10",
             "--eps", "0.5", "--l2", "10:1000:3:log", "--nmax", "6"]
        )
        assert code == 0
        lines = out.read_text().splitlines()
        comments = [l for l in lines if l.startswith("#")]
        assert comments[0].startswith("# opens")
        header = next(l for l in lines if not l.startswith("#"))
        assert header.split(",")[:2] == ["route", "L"]
        rows = [l for l in lines if not l.startswith("#")][1:]
        assert len(rows) == 3
        assert all(r.startswith("boson-closed-form") for r in rows)

    def test_byte_identical_reruns(self, tmp_path):
        args = ["boson-mie", "--L", "5", "--d", "7", "--eps", "0.3",
                "--l2", "10:100:4:log", "--n", "3"]
        out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["--output", str(out1)] + args) == 0
        assert main(["--output", str(out2)] + args) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_json_mirror(self, tmp_path):
        out = tmp_path / "m.json"
        code = main(
            ["--output", str(out), "--format", "json", "boson-moments",
             "--l2", "50", "--gamma", "0.4,0.9"]
        )
        assert code == 0
        payload = json.loads(out.read_text())
        assert payload["columns"][0] == "route"
        assert payload["rows"][0][0] == "boson-closed-form"
        assert payload["provenance"]["command"] == "boson-moments"

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("command = boson-holevo\nL = 5\nd = 5\nl2 = 100\nnmax = 6\n")
        out = tmp_path / "o.csv"
        assert main(["--config", str(cfg), "--output", str(out)]) == 0
        body = out.read_text()
        assert "# L = 5" in body
        # explicit flags still win over the config file
        out2 = tmp_path / "o2.csv"
        assert main(["--config", str(cfg), "--output", str(out2), "--jobs", "2"]) == 0
        assert "# jobs = 2" in out2.read_text()

    def test_numerical_failure_records_diagnostics(self, tmp_path):
        out = tmp_path / "bad.csv"
        code = main(
            ["--output", str(out), "boson-holevo", "--L", "10", "--d", "10",
             "--eps", "-1.0", "--l2", "100"]
        )
        assert code == 1
        body = out.read_text()
        assert "# status = error" in body
        assert "GeometryError" in body

    def test_ed_verify_passes(self, tmp_path):
        out = tmp_path / "ed.csv"
        code = main(
            ["--output", str(out), "ed-verify", "--model", "xx", "--l1", "2",
             "--d-sites", "1", "--l2-sites", "2", "--sites", "6", "--n", "2"]
        )
        assert code == 0
        assert "# verdict = pass" in out.read_text()

    def test_lattice_moments_with_cft_columns(self, tmp_path):
        out = tmp_path / "lat.csv"
        code = main(
            ["--output", str(out), "lattice-moments", "--model", "xx", "--l1", "4",
             "--d-sites", "4", "--gamma", "0.3,0.7", "--l2", "4,8", "--compare", "cft"]
        )
        assert code == 0
        lines = [l for l in out.read_text().splitlines() if not l.startswith("#")]
        assert lines[0].split(",")[-2:] == ["cft_prediction", "fitted_constant"]
        assert len(lines) == 3

    def test_jobs_parallel_matches_serial(self, tmp_path):
        args = ["boson-holevo", "--L", "10", "--d", "10", "--l2", "10:1000:4:log"]
        out1, out2 = tmp_path / "s.csv", tmp_path / "p.csv"
        assert main(["--output", str(out1), "--jobs", "1"] + args) == 0
        assert main(["--output", str(out2), "--jobs", "3"] + args) == 0
        body = lambda p: [l for l in p.read_text().splitlines() if not l.startswith("#")]
        assert body(out1) == body(out2)

    def test_cn_table_runs(self, tmp_path):
        out = tmp_path / "cn.csv"
        code = main(
            ["--output", str(out), "cn-table", "--spec", "scalar:0.25", "--n", "1:3",
             "--L", "1", "--d", "1", "--l2", "2", "--tol", "1e-8"]
        )
        assert code == 0
        body = out.read_text()
        assert "# linear_fit_slope" in body
        rows = [l for l in body.splitlines() if l.startswith("operator-quadrature")]
        assert len(rows) == 3
