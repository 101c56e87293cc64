import io
import json
import math
import shutil
import subprocess
import sys

import numpy as np
import pytest

from longrange_mf.cli import metadata_line, parse_grid, read_csv, run
from longrange_mf.errors import ParameterOutOfRange


def call(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run(list(argv), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def column(text, name):
    cols, rows = read_csv(text)
    i = cols.index(name)
    return [r[i] for r in rows]


# -- grids ------------------------------------------------------------------


def test_grid_syntax():
    assert np.allclose(parse_grid("0:1:5"), [0, 0.25, 0.5, 0.75, 1])
    assert np.allclose(parse_grid("-1:-0.5:2"), [-1, -0.5])
    assert np.allclose(parse_grid("0.3"), [0.3])
    assert np.allclose(parse_grid("1,0.5,0.25"), [1, 0.5, 0.25])
    assert np.allclose(parse_grid("2:7:1"), [2])
    for bad in ("0:1", "0:1:0", "a,b"):
        with pytest.raises(ParameterOutOfRange):
            parse_grid(bad)


# -- documented examples ----------------------------------------------------


def test_phase_potts_zero_field():
    code, out, _ = call("phase", "potts", "--q", "3", "--zero-field")
    assert code == 0
    assert column(out, "beta_mf")[0] == pytest.approx(2.772589, abs=1e-6)
    assert column(out, "beta_mf")[0] == 4 * math.log(2)
    # the solved endpoint field and its log q variant are both reported
    summary = json.loads(out.splitlines()[1].split("=", 1)[1])
    assert summary["hc_discrepancy"] == pytest.approx(math.log(1.5), abs=1e-10)


def test_infrared_yukawa_decreasing():
    code, out, _ = call("infrared", "--family", "yukawa", "--d", "3", "--mu", "1,0.5,0.25")
    assert code == 0
    I = column(out, "I_value")
    assert len(I) == 3 and I[0] > I[1] > I[2] > 0


def test_rp_check_powerlaw():
    code, out, _ = call("rp-check", "--family", "powerlaw", "--d", "1", "--s", "1.5", "--trials", "100")
    assert code == 0
    assert min(column(out, "min_form")) >= -1e-10


# -- output contract --------------------------------------------------------


def test_metadata_header():
    _, out, _ = call("phase", "potts", "--q", "4", "--zero-field", "--seed", "7")
    first = out.splitlines()[0]
    assert first.startswith("# version=0.1.0 command=phase potts config={")
    assert first.endswith("seed=7")
    cfg = json.loads(first.split("config=", 1)[1].rsplit(" seed=", 1)[0])
    assert cfg["q"] == 4 and cfg["zero_field"] is True


def test_metadata_line_is_canonical():
    assert metadata_line("x", {"b": 1, "a": 2.5}, 3) == '# version=0.1.0 command=x config={"a":2.5,"b":1} seed=3'


def test_csv_round_trip_exact():
    code, out, _ = call("phase", "potts", "--q", "3", "--h-grid", "0.004:0.02:3")
    assert code == 0
    cols, rows = read_csv(out)
    assert cols == ["q", "h", "beta_t", "theta_low", "theta_high", "x1_low", "x1_high", "e_S", "e_A", "dbeta_dh"]
    from longrange_mf.mf_potts import beta_plus
    for r in rows:
        assert r[2] == beta_plus(3, r[1]).beta_t
    # slope column is the inverse Clausius-Clapeyron value and negative
    assert all(r[-1] < 0 for r in rows)


def test_negative_field_rows_and_zero_field_nan():
    code, out, _ = call("phase", "potts", "--q", "4", "--h-grid=-0.5,0,0.05")
    assert code == 0
    rows = read_csv(out)[1]
    assert rows[0][2] == pytest.approx(3.0227511765510386, abs=1e-8)
    assert rows[1][2] == pytest.approx(3 * math.log(3), abs=1e-12)
    assert math.isnan(rows[1][-1])


def test_json_format():
    code, out, _ = call("phase", "potts", "--q", "5", "--zero-field", "--format", "json")
    assert code == 0
    doc = json.loads(out)
    assert doc["columns"][1] == "beta_mf"
    assert doc["rows"][0][1] == pytest.approx(8 / 3 * math.log(4))
    assert doc["metadata"].startswith("version=")


def test_output_file_byte_identical(tmp_path):
    args = ["mc", "run", "--q", "3", "--s", "1.2", "--L", "64", "--beta", "2.0", "--sweeps", "50",
            "--samples", "40", "--seed", "3"]
    assert call(*args, "-o", str(tmp_path / "a.csv"))[0] == 0
    assert call(*args, "-o", str(tmp_path / "b.csv"))[0] == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert call(*args[:-1], "4", "-o", str(tmp_path / "c.csv"))[0] == 0
    assert (tmp_path / "a.csv").read_bytes() != (tmp_path / "c.csv").read_bytes()


def test_parallel_workers_keep_row_order(monkeypatch):
    args = ["phase", "potts", "--q", "3", "--h-grid", "0.02,0.005,0.01"]
    serial = call(*args)[1]
    monkeypatch.setenv("LONGRANGE_MF_WORKERS", "2")
    parallel = call(*args)[1]
    assert serial == parallel
    assert column(serial, "h") == [0.02, 0.005, 0.01]


def test_bad_worker_count(monkeypatch):
    monkeypatch.setenv("LONGRANGE_MF_WORKERS", "zero")
    assert call("phase", "potts", "--q", "3", "--h-grid", "0.01,0.02")[0] == 1


# -- exit codes -------------------------------------------------------------


@pytest.mark.parametrize("argv", [
    ["phase", "potts", "--q", "2", "--zero-field"],
    ["phase", "potts", "--q", "3"],
    ["phase", "potts", "--q", "3", "--h-grid", "0.05"],
    ["phase", "potts", "--q", "3", "--h-grid", "0:1"],
    ["phase", "bc", "--beta-grid", "5:9:2"],
    ["infrared", "--family", "gaussian", "--d", "3", "--mu", "1"],
    ["infrared", "--family", "nn", "--d", "2"],
    ["mc", "run", "--q", "3", "--s", "1.2", "--L", "7", "--beta", "1"],
    ["mc", "run", "--q", "3", "--s", "1.2", "--L", "8"],
    ["phase", "potts", "--q", "3", "--zero-field", "--bogus"],
    ["phase"],
    [],
], ids=lambda a: " ".join(a) or "empty")
def test_validation_errors_exit_one(argv):
    code, out, err = call(*argv)
    assert code == 1
    assert out == ""
    assert err.startswith("error:")


def test_numerical_failure_exits_two():
    # ten samples cannot cover fifty autocorrelation times
    code, _, err = call("mc", "run", "--q", "3", "--s", "1.2", "--L", "16", "--beta", "1", "--sweeps", "5", "--samples", "10",
                        "--check-bounds")
    assert code == 2
    assert "numerical failure" in err


def test_missing_restore_file_exits_one(tmp_path):
    code, _, err = call("mc", "run", "--q", "3", "--s", "1.2", "--L", "16", "--beta", "1", "--restore", str(tmp_path / "none"))
    assert code == 1


def test_version_and_help():
    assert call("--version")[0] == 0
    assert call("--help")[0] == 0


# -- config files -----------------------------------------------------------


def test_config_file_matches_flags(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[phase potts]\nq = 3\nh-grid = 0.005:0.015:3\n")
    code, from_file, _ = call("--config", str(cfg), "phase", "potts")
    assert code == 0
    flags = call("phase", "potts", "--q", "3", "--h-grid", "0.005:0.015:3")[1]
    assert read_csv(from_file) == read_csv(flags)


def test_command_line_overrides_config(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[phase potts]\nq = 3\nzero-field = yes\n")
    _, out, _ = call("--config", str(cfg), "phase", "potts", "--q", "5")
    assert column(out, "q") == [5.0]


@pytest.mark.parametrize("text", ["[phase potts]\nflavour = 3\n", "[phase potts]\nq = three\n"])
def test_bad_config(tmp_path, text):
    cfg = tmp_path / "bad.ini"
    cfg.write_text(text)
    assert call("--config", str(cfg), "phase", "potts", "--zero-field")[0] == 1


def test_unreadable_config(tmp_path):
    assert call("--config", str(tmp_path / "missing.ini"), "phase", "potts", "--q", "3", "--zero-field")[0] == 1


# -- plots and state files --------------------------------------------------


def test_emit_plot(tmp_path):
    prefix = str(tmp_path / "line")
    code, out, _ = call("phase", "potts", "--q", "3", "--h-grid", "0.005:0.02:4", "--emit-plot", prefix)
    assert code == 0
    dat = np.loadtxt(prefix + ".dat")
    assert dat.shape == (4, 10)
    assert np.allclose(dat[:, 2], column(out, "beta_t"), rtol=0, atol=0)
    assert (tmp_path / "line.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_emit_plot_byte_identical(tmp_path):
    for tag in ("a", "b"):
        call("infrared", "--family", "powerlaw", "--d", "1", "--s", "1.5,1.8", "--emit-plot", str(tmp_path / tag))
    for ext in (".dat", ".png"):
        assert (tmp_path / ("a" + ext)).read_bytes() == (tmp_path / ("b" + ext)).read_bytes()


def test_mc_dump_and_restore(tmp_path):
    base = ["mc", "run", "--q", "3", "--s", "1.2", "--L", "32", "--beta", "2.0", "--samples", "10", "--seed", "5"]
    code, _, _ = call(*base, "--sweeps", "40", "--dump", str(tmp_path / "s.bin"))
    assert code == 0
    code, resumed, _ = call(*base, "--sweeps", "10", "--restore", str(tmp_path / "s.bin"))
    assert code == 0
    straight = call(*base, "--sweeps", "60")[1]
    # 40 + 10 sampled sweeps, then 10 + 10 more: identical to 60 + 10 in one go
    # spins agree exactly; energies to rounding since restore rebuilds the cached local field
    a, b = np.array(read_csv(resumed)[1]), np.array(read_csv(straight)[1])
    assert np.array_equal(a[:, :3], b[:, :3])
    assert np.allclose(a[:, 3:], b[:, 3:], rtol=0, atol=1e-12)
    assert column(resumed, "sweep")[-1] == 70.0


def test_mc_run_columns_and_bounds():
    code, out, _ = call("mc", "run", "--q", "3", "--s", "1.2", "--L", "64", "--beta", "2.0", "--sweeps", "200", "--samples",
                        "600", "--check-bounds")
    assert code == 0
    cols, rows = read_csv(out)
    assert cols == ["sweep", "m1", "m2", "e", "var_m0"]
    assert len(rows) == 600
    summary = json.loads(out.splitlines()[1].split("=", 1)[1])
    assert summary["bounds"]["fluctuation_ok"] and summary["bounds"]["phi_ok"]


def test_mc_hysteresis_command():
    code, out, _ = call("mc", "hysteresis", "--model", "bc", "--s", "1.2", "--L", "32", "--scan", "field", "--beta", "4",
                        "--field-grid=-3:3:3", "--sweeps-per-point", "40")
    assert code == 0
    cols, rows = read_csv(out)
    assert cols[1] == "upper_mean_sq_spin" and len(rows) == 3


def test_phase_bc_rows():
    code, out, _ = call("phase", "bc", "--beta-grid", "9:10:2")
    assert code == 0
    for beta, lam in zip(column(out, "beta"), column(out, "lambda_t")):
        assert abs(lam - math.exp(-beta)) <= 10 * beta * math.exp(-2 * beta)


def test_console_entry_point():
    exe = shutil.which("longrange-mf")
    cmd = [exe] if exe else [sys.executable, "-m", "longrange_mf"]
    res = subprocess.run(cmd + ["phase", "potts", "--q", "3", "--zero-field"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "beta_mf" in res.stdout
    bad = subprocess.run(cmd + ["phase", "potts", "--q", "1", "--zero-field"], capture_output=True, text=True)
    assert bad.returncode == 1
