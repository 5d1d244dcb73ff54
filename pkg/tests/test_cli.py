import csv
import io
import json
import math
import subprocess
import sys

import pytest

from ampmetro import __version__
from ampmetro.cli import EXIT_CONVERGENCE, EXIT_OK, EXIT_USAGE, ENV_OUTPUT_DIR, UsageError, main, parse_config, run


def read_csv(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(io.StringIO("\n".join(lines))))


def comments(path):
    out = {}
    for ln in path.read_text().splitlines():
        if ln.startswith("# ") and "=" in ln:
            key, value = ln[2:].split("=", 1)
            out[key] = value
    return out


class TestParse:
    def test_flags(self):
        cfg = parse_config(["qfi", "--beta-sq", "20", "--g", "3.5", "--eta", "0.1"])
        assert cfg.command == "qfi"
        assert cfg.params.beta_sq == pytest.approx(20)
        assert (cfg.params.g, cfg.params.eta) == (3.5, 0.1)
        assert cfg.params.phi == pytest.approx(math.pi / 2)
        assert cfg.seed == 0 and cfg.format == "csv"

    def test_config_file_rejects_eta(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("beta_sq = 4\neta=1.5\n")
        with pytest.raises(UsageError, match="eta"):
            parse_config(["qfi", "--config", str(f)])
        assert main(["qfi", "--config", str(f)]) == EXIT_USAGE

    def test_flags_override_file(self, tmp_path):
        f = tmp_path / "run.cfg"
        f.write_text("# probe\nbeta-sq=4\ng = 1.0\n")
        cfg = parse_config(["cfi", "--config", str(f), "--g", "0.5"])
        assert cfg.params.g == 0.5 and cfg.params.beta_sq == pytest.approx(4)

    def test_sweep(self):
        cfg = parse_config(["sweep", "--axis", "g:0:3.5:50", "--command", "qfi", "--beta-sq", "20"])
        assert cfg.axis == ("g", 0.0, 3.5, 50)
        assert cfg.sweep_command == "qfi"

    def test_sweep_from_file(self, tmp_path):
        f = tmp_path / "s.cfg"
        f.write_text("axis=eta:0.1:1:3\ncommand=sensitivity\nbeta_sq=9\n")
        cfg = parse_config(["sweep", "--config", str(f)])
        assert cfg.sweep_command == "sensitivity" and cfg.axis[0] == "eta"

    @pytest.mark.parametrize(
        "argv, key",
        [
            (["sweep", "--command", "qfi"], "axis"),
            (["sweep", "--axis", "g:0:1:1", "--command", "qfi"], "steps"),
            (["sweep", "--axis", "lam:0:1:3", "--command", "qfi"], "axis"),
            (["sweep", "--axis", "g:0:1:3", "--command", "pmf"], "sweep_command"),
            (["qfi", "--g", "abc"], "g"),
            (["qfi", "--beta-sq", "2", "--alpha-mag", "1"], "alpha_mag"),
            (["two-step", "--fraction-p", "1.5"], "fraction_p"),
        ],
    )
    def test_usage_errors(self, argv, key):
        with pytest.raises(UsageError, match=key):
            parse_config(argv)

    def test_unknown_file_key(self, tmp_path):
        f = tmp_path / "bad.cfg"
        f.write_text("gain=2\n")
        with pytest.raises(UsageError, match="gain"):
            parse_config(["qfi", "--config", str(f)])

    def test_unknown_flag_exit_code(self, capsys):
        assert main(["qfi", "--gain", "2"]) == EXIT_USAGE
        assert main(["bogus"]) == EXIT_USAGE


class TestRun:
    def test_qfi_row(self):
        cols, rows, diag = run(parse_config(["qfi", "--beta-sq", "9", "--g", "1", "--eta", "0.5"]))
        row = dict(zip(cols, rows[0]))
        assert row["qfi_closed"] == pytest.approx(row["qfi_numeric"], rel=1e-8)
        assert row["sql"] == 18

    def test_cfi_columns(self):
        cols, rows, _ = run(parse_config(["cfi", "--beta-sq", "4", "--g", "0.5", "--eta", "0.3"]))
        assert cols == ["phi", "qfi_closed", "qfi_numeric", "cfi", "inv_var_sensitivity", "sql"]
        row = dict(zip(cols, rows[0]))
        assert row["inv_var_sensitivity"] <= row["cfi"] <= row["qfi_closed"] * (1 + 1e-9)

    def test_enhancement_both_references(self):
        cfg = parse_config(["enhancement", "--beta-sq", "22.8", "--g", "3.3", "--eta", "3.48e-5"])
        cols, rows, _ = run(cfg)
        assert len(rows) == 1
        row = dict(zip(cols, rows[0]))
        assert row["enhancement_homodyne_sql"] == pytest.approx(176.07, abs=0.05)
        assert "enhancement_unamplified_difference" in row

    def test_qfi_sweep_ordering(self):
        for eta in ("0.02", "0.2", "1"):
            cols, rows, _ = run(parse_config(["sweep", "--axis", "g:0:3.5:15", "--command", "qfi", "--beta-sq", "20", "--eta", eta]))
            for row in rows:
                r = dict(zip(cols, row))
                assert r["qfi_closed"] >= float(eta) * r["sql"] * (1 - 1e-12)

    def test_two_step_table(self):
        cols, rows, _ = run(
            parse_config(["two-step", "--beta-sq", "2", "--g", "0.5", "--eta", "0.5", "--pulses", "400",
                          "--repeats", "2", "--phi-values", "0.5,2.0", "--grid-points", "256"])
        )
        assert cols[:2] == ["phi", "phi_hat"] and "cfi_bound" in cols and "coherent_bound" in cols
        assert [r[0] for r in rows] == [0.5, 2.0]


class TestOutput:
    def test_csv_file_and_meta(self, tmp_path):
        out = tmp_path / "q.csv"
        assert main(["sweep", "--axis", "phi:0:1.5:4", "--command", "cfi", "--beta-sq", "4", "--g", "0.5",
                     "--eta", "0.3", "--output", str(out)]) == EXIT_OK
        rows = read_csv(out)
        assert list(rows[0]) == ["phi", "qfi_closed", "qfi_numeric", "cfi", "inv_var_sensitivity", "sql"]
        assert [float(r["phi"]) for r in rows] == pytest.approx([0, 0.5, 1.0, 1.5])
        meta = json.loads((tmp_path / "q.csv.meta.json").read_text())
        assert meta["version"] == __version__ and "created" in meta
        head = comments(out)
        for key in ("command", "beta_sq", "g", "eta", "xi", "theta", "lam", "phi", "seed", "convention"):
            assert key in head
        assert "created" not in out.read_text()

    def test_byte_identical(self, tmp_path):
        argv = ["simulate", "--beta-sq", "4", "--g", "0.5", "--eta", "0.3", "--phi", "1.0", "--pulses", "500",
                "--seed", "17", "--grid-points", "256"]
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(argv + ["--output", str(a)]) == EXIT_OK
        assert main(argv + ["--output", str(b)]) == EXIT_OK
        assert a.read_bytes() == b.read_bytes()
        c = tmp_path / "c.csv"
        main(argv[:-3] + ["18", "--grid-points", "256", "--output", str(c)])
        assert c.read_bytes() != a.read_bytes()

    def test_json(self, tmp_path):
        out = tmp_path / "p.json"
        assert main(["pmf", "--beta-sq", "1", "--g", "0.3", "--eta", "0.5", "--format", "json", "--output", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["version"] == __version__ and doc["seed"] == 0
        assert doc["config"]["eta"] == 0.5
        assert doc["columns"] == ["n", "p_h", "p_v", "dp_h", "dp_v"]
        assert "tail_bound_h" in doc["diagnostics"]
        assert sum(r[1] for r in doc["rows"]) == pytest.approx(1, abs=1e-9)

    def test_env_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.setenv(ENV_OUTPUT_DIR, str(tmp_path / "out"))
        assert main(["qfi", "--beta-sq", "2"]) == EXIT_OK
        assert (tmp_path / "out" / "qfi.csv").exists()

    def test_stdout(self, capsys, monkeypatch):
        monkeypatch.delenv(ENV_OUTPUT_DIR, raising=False)
        assert main(["qfi", "--beta-sq", "2"]) == EXIT_OK
        assert "qfi_closed" in capsys.readouterr().out

    def test_convergence_failure(self, tmp_path, capsys):
        out = tmp_path / "bad.csv"
        code = main(["qfi", "--beta-sq", "4", "--g", "2", "--eta", "0.5", "--cutoff", "2", "--output", str(out)])
        assert code == EXIT_CONVERGENCE
        assert "convergence" in capsys.readouterr().err
        assert list(tmp_path.iterdir()) == []

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "ampmetro", "qfi", "--beta-sq", "2", "--output", str(tmp_path / "x.csv")],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        proc = subprocess.run([sys.executable, "-m", "ampmetro", "qfi", "--eta", "2"], capture_output=True, text=True)
        assert proc.returncode == 2 and "eta" in proc.stderr
