import csv

import pytest

from almpc.cli import main
from tests.test_config import MINIMAL


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    code = main(["run", "numerical", "--controller", "eo,po", "--seeds", "0,1", "--steps", "6",
                 "--out", str(out)])
    return code, out


def test_run_writes_csvs_and_summary(runs):
    code, out = runs
    assert code == 0
    names = sorted(p.name for p in out.glob("*.csv"))
    assert names == ["numerical_eo_seed0.csv", "numerical_eo_seed1.csv", "numerical_po_seed0.csv",
                     "numerical_po_seed1.csv", "summary.csv"]
    rows = list(csv.DictReader(open(out / "summary.csv")))
    assert len(rows) == 4 and all(r["status"] == "ok" for r in rows)
    assert (out / "numerical_eo_seed0.csv").read_bytes().count(b"\r\n") == 7


def test_out_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("ALMPC_OUT", str(tmp_path / "envout"))
    assert main(["run", "numerical", "--controller", "po", "--seeds", "0", "--steps", "3"]) == 0
    assert (tmp_path / "envout" / "numerical_po_seed0.csv").is_file()


def test_multi_loop_file_names(tmp_path):
    assert main(["run", "drone", "--controller", "po", "--seeds", "0", "--steps", "3",
                 "--out", str(tmp_path)]) == 0
    assert len(list(tmp_path.glob("drone_po_seed0_*.csv"))) >= 2


def test_run_config_errors(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.toml")]) == 1
    assert "missing.toml" in capsys.readouterr().err
    assert main(["run", "numerical", "--controller", "pid"]) == 1


def test_strict_abort_exit_code(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text(MINIMAL.replace("x0 = [0.0, 0.5]", "x0 = [24.9, 24.9]"))
    assert main(["run", str(cfg), "--controller", "eo", "--strict", "--out", str(tmp_path)]) == 2
    rows = list(csv.DictReader(open(tmp_path / "summary.csv")))
    assert rows[0]["status"].startswith("aborted")


@pytest.mark.parametrize("kind", ["volume", "output", "input", "power", "rmse"])
def test_plot_kinds_are_deterministic(runs, tmp_path, kind):
    _, out = runs
    files = [str(out / "numerical_eo_seed0.csv"), str(out / "numerical_eo_seed1.csv")]
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    assert main(["plot", *files, "--kind", kind, "--out", str(a)]) == 0
    assert main(["plot", *files, "--kind", kind, "--out", str(b)]) == 0
    text = a.read_text()
    assert text.startswith("<svg") and text.rstrip().endswith("</svg>")
    assert a.read_bytes() == b.read_bytes()
    assert text.count("<polyline") == 2


def test_plot_errors(runs, tmp_path):
    _, out = runs
    assert main(["plot", "--out", str(tmp_path / "x.svg")]) == 1
    assert main(["plot", str(tmp_path / "none.csv"), "--out", str(tmp_path / "x.svg")]) == 1
    other = tmp_path / "other.csv"
    other.write_text("k,y\r\n0,1\r\n")
    assert main(["plot", str(out / "numerical_eo_seed0.csv"), str(other),
                 "--out", str(tmp_path / "x.svg")]) == 1


def test_validate(tmp_path, capsys):
    assert main(["validate", "numerical"]) == 0
    assert "alpha_min" in capsys.readouterr().out
    bad = tmp_path / "big_s.toml"
    bad.write_text(MINIMAL.replace("N = 4", "N = 4\ns_max = 500.0"))
    assert main(["validate", str(bad)]) == 1
    assert "terminal synthesis failed" in capsys.readouterr().err
    junk = tmp_path / "junk.toml"
    junk.write_text("steps = 3\nwhat = 1\n")
    assert main(["validate", str(junk)]) == 1
