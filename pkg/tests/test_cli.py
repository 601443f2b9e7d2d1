import json

import numpy as np
import pytest

from magdephase.cli import main
from magdephase.config import bundled_config_text
from magdephase.dataio import read_curve

D = 266e-9


def run(capsys, *args):
    code = main(list(args))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def cs_no_background(tmp_path):
    p = tmp_path / "cs0.cfg"
    p.write_text(bundled_config_text("cs_coils").replace("background_gradient: 0.4 G/m", "background_gradient: 0 G/m"))
    return str(p)


def test_c_factor_single_value(capsys):
    code, out, _ = run(capsys, "c-factor", "--config", "cs_coils", "--current", "1 A")
    assert code == 0
    line = next(l for l in out.splitlines() if l.startswith("C_permanent"))
    assert float(line.split()[2]) == pytest.approx(10.29, abs=0.01)
    assert "T m" in line


def test_c_factor_sweep_csv(capsys, tmp_path):
    out = tmp_path / "c.csv"
    code, _, _ = run(capsys, "c-factor", "--config", "cs_coils", "--current", "1", "--current", "2", "-o", str(out))
    assert code == 0
    rows = np.loadtxt(out, delimiter=",", skiprows=1)
    assert rows[1, 1] == pytest.approx(2 * rows[0, 1], rel=1e-12)
    assert out.read_text().splitlines()[0] == "current_A,C_permanent_Tm,C_induced_T2m"


def test_visibility_zero_current_is_one(capsys, cs_no_background):
    code, out, _ = run(capsys, "visibility", "--config", cs_no_background, "--current", "0")
    assert code == 0
    assert float(out.splitlines()[1].split(",")[1]) == pytest.approx(1.0, abs=1e-12)


def test_visibility_with_v0_and_c(capsys):
    code, out, _ = run(capsys, "visibility", "--config", "cs_coils", "--current", "4.25", "--with-c", "--v0", "0.2")
    assert code == 0
    header, row = out.splitlines()
    assert header == "current_A,V_over_V0,V,C_permanent_Tm,C_induced_T2m"
    vals = [float(x) for x in row.split(",")]
    assert vals[2] == pytest.approx(0.2 * vals[1], rel=1e-15)


def test_field_map_line(capsys):
    code, out, _ = run(capsys, "field-map", "--config", "cs_coils", "--n", "3")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "x,y,z,Bx,By,Bz,|B|" and len(lines) == 4
    assert abs(float(lines[2].split(",")[6])) < 1e-9


def test_field_map_grid_and_profile(capsys, tmp_path):
    code, out, _ = run(capsys, "field-map", "--config", "c60_magnet", "--distance", "2 cm",
                       "--start", "0,-1 cm,-1 cm", "--stop", "1 cm,1 cm,1 cm", "--n", "2,3,2")
    assert code == 0 and len(out.splitlines()) == 13
    code, out, _ = run(capsys, "field-map", "--config", "cs_coils", "--profile", "--n", "11")
    assert code == 0 and out.splitlines()[0].startswith("s_m,")


def test_fringe_fit_report(capsys, tmp_path):
    x = np.linspace(0, 3 * D, 60)
    y = 1000 + 250 * np.sin(2 * np.pi * x / D + 0.5)
    p = tmp_path / "scan.csv"
    np.savetxt(p, np.column_stack([x * 1e9, y]), delimiter=",", header="position_nm,counts", comments="")
    code, out, _ = run(capsys, "fringe-fit", str(p))
    assert code == 0
    rep = json.loads(out)
    assert rep["visibility"] == pytest.approx(0.25, rel=1e-8)
    code, out, _ = run(capsys, "fringe-fit", str(p), "--plain", "--dark-rate", "500")
    assert json.loads(out)["visibility"] == pytest.approx(0.5, rel=1e-8)


def test_fit_round_trip(capsys, tmp_path):
    out = tmp_path / "curve.csv"
    assert run(capsys, "visibility", "--config", "tempo_magnet", "-o", str(out))[0] == 0
    c = read_curve(out)
    data = tmp_path / "data.csv"
    np.savetxt(data, np.column_stack([c.abscissa, c.v_over_v0, np.full(c.abscissa.size, 0.01)]), delimiter=",",
               header="distance_m,visibility,sigma", comments="")
    res = tmp_path / "res.csv"
    code, text, _ = run(capsys, "fit", "--config", "tempo_magnet", "--data", str(data), "--residuals", str(res))
    assert code == 0
    rep = json.loads(text)
    assert rep["values_SI"]["mu_eff"] == pytest.approx(0.1, rel=1e-4)
    assert res.read_text().splitlines()[0] == "distance_m,data,model,residual"


def test_reproduce_fig2(capsys, tmp_path):
    code, out, _ = run(capsys, "--threads", "2", "reproduce", "fig2-cs", "--outdir", str(tmp_path))
    assert code == 0
    c = read_curve(tmp_path / "fig2-cs_cs_coils.csv")
    i = int(np.argmin(np.abs(c.abscissa - 4.25)))
    assert c.v_over_v0[i] == pytest.approx(0.125, abs=0.005)
    assert (tmp_path / "fig2-cs_cs270_coils.csv").exists()


def test_exit_code_config_error(capsys, tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("species:\n  name: cs133\nwhatever: 1\n")
    code, _, err = run(capsys, "visibility", "--config", str(bad), "--current", "1")
    assert code == 3 and "line 3" in err
    assert run(capsys, "c-factor", "--config", "no_such_config")[0] == 3


def test_exit_code_numerical_error(capsys, tmp_path):
    # the trajectory runs through the magnet body
    p = tmp_path / "inside.cfg"
    p.write_text(bundled_config_text("c60_magnet") + "trajectory:\n  offset: [-15 mm, 0, 0]\n")
    code, _, err = run(capsys, "c-factor", "--config", str(p), "--distance", "1 cm")
    assert code == 4 and "numerical" in err


def test_exit_code_data_error(capsys, tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("distance_m,visibility\n0.01,zz\n")
    code, _, err = run(capsys, "fit", "--config", "tempo_magnet", "--data", str(p))
    assert code == 5 and "line 2" in err


def test_exit_code_usage(capsys):
    assert run(capsys, "reproduce", "fig99")[0] == 2
    assert run(capsys, "c-factor", "--config", "cs_coils", "--distance", "1 cm")[0] == 2
    assert run(capsys, "c-factor", "--config", "cs_coils", "--current", "1 furlong")[0] == 2


def test_no_partial_output_on_failure(capsys, tmp_path):
    out = tmp_path / "v.csv"
    p = tmp_path / "inside.cfg"
    p.write_text(bundled_config_text("c60_magnet") + "trajectory:\n  offset: [-15 mm, 0, 0]\n")
    code, _, _ = run(capsys, "visibility", "--config", str(p), "--distance", "5 cm", "--distance", "1 cm",
                     "-o", str(out))
    assert code == 4
    assert not out.exists()
    assert list(tmp_path.iterdir()) == [p]


def test_help(capsys):
    assert run(capsys, "--help")[0] == 0
