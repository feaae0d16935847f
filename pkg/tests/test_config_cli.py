import csv
from fractions import Fraction
from pathlib import Path

import pytest

from asconvex.cli import EXIT_CONFIG, main, microlocal_rows
from asconvex.config import load_config
from asconvex.errors import ConfigurationError
from asconvex.multiplier import make_multiplier

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


class TestConfig:
    def test_defaults(self):
        cfg = load_config()
        assert cfg.family == "msqg" and cfg.n == 72 and cfg.dealias == Fraction(2, 3)
        assert cfg.schedule["a"] == 7 and cfg.check_centers == (1.40, -1.55)

    def test_default_file_matches_builtin(self):
        a, b = load_config(), load_config(CONFIGS / "default.ini")
        b.source = None
        assert a == b

    def test_override(self, tmp_path):
        p = tmp_path / "c.ini"
        p.write_text("[grid]\nn: 48\n[schedule]\nbeta = 0.4\n")
        cfg = load_config(p)
        assert cfg.n == 48 and cfg.schedule["beta"] == 0.4 and cfg.schedule["b"] == 1.2

    @pytest.mark.parametrize(
        "text",
        ["[nonsense]\nx = 1\n", "[grid]\nn = many\n", "[grid]\ndealias = 1/0\n", "not an ini file\n"],
    )
    def test_bad_files(self, tmp_path, text):
        p = tmp_path / "c.ini"
        p.write_text(text)
        with pytest.raises(ConfigurationError):
            load_config(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_config(tmp_path / "absent.ini")


class TestCli:
    def test_classify(self, tmp_path, capsys):
        assert main(["classify", "--out", str(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "TwoIndependent" in out
        assert (tmp_path / "classify.txt").read_text() == out

    def test_missing_config_exit_code(self, tmp_path):
        assert main(["classify", "--config", str(tmp_path / "x.ini"), "--out", str(tmp_path)]) == EXIT_CONFIG

    def test_infeasible_schedule_exit_code(self, tmp_path):
        args = ["base-case", "--config", str(CONFIGS / "toy_infeasible.ini"), "--out", str(tmp_path)]
        assert main(args) == EXIT_CONFIG

    def test_verify_writes_report(self, tmp_path):
        assert main(["verify", "--out", str(tmp_path)]) == 0
        rows = list(csv.reader((tmp_path / "verify.csv").open()))
        assert rows[0] == ["module", "label", "value", "bound", "constant", "pass"]
        assert all(r[-1] == "True" for r in rows[1:])

    def test_hamiltonian_smoke(self, tmp_path):
        assert main(["hamiltonian", "--config", str(CONFIGS / "smoke.ini"), "--out", str(tmp_path)]) == 0
        assert (tmp_path / "hamiltonian.csv").exists()

    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            main(["bogus"])

    def test_microlocal_rows(self):
        rows = microlocal_rows(make_multiplier("msqg", {"delta": 0.0}), lams=(16,))
        lam, band, ratio, resid = rows[0]
        assert lam == 16 and resid < 1e-12 and 0 < ratio < 1
