import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from perfhom.cli import capacity_table, main
from perfhom.config import build_config, parse_text

SMALL = """
[process]
intensity = 4.0
mark_law = { kind = "pareto", rho_min = 1.0, beta = 4.0 }

[scaling]
q = 2.0
eps_grid = [0.2, 0.1]

[study]
replicas = 3
seed = 11
"""

GAMMA = """
[process]
intensity = 0.5
mark_law = { kind = "constant", rho0 = 1.0 }

[scaling]
eps_grid = [0.1, 0.05]

[classify]
M = 10
theta = 0.03333333333333333
r_eps = 0.02

[study]
replicas = 1
seed = 2
bump = { centre = [0.0, 0.0, 0.0], width = 0.4, amplitude = 1.0 }
quad_resolution = [4, 6]
"""


def _write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _rows(path):
    with open(path) as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


# ------------------------------------------------------------ generate


def test_generate_writes_realization_holes_and_manifest(tmp_path):
    cfg = _write(tmp_path, SMALL)
    out = tmp_path / "gen"
    assert main(["generate", "--config", cfg, "--out", str(out), "--eps", "0.1"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["outputs"] == ["realization.csv", "holes.csv"]
    assert man["seed"] == 11 and man["command"] == "generate"
    holes = _rows(out / "holes.csv")
    assert len(holes) == man["parameters"]["holes"]
    assert all(abs(float(h[c])) <= 0.5 for h in holes for c in ("c1", "c2", "c3"))
    # Poisson count: mean 4 / eps^3 = 4000, sd about 63
    assert abs(len(holes) - 4000) < 5 * np.sqrt(4000)


def test_zero_intensity_gives_header_only_csv(tmp_path):
    cfg = _write(tmp_path, SMALL.replace("intensity = 4.0", "intensity = 0.0"))
    out = tmp_path / "zero"
    assert main(["generate", "--config", cfg, "--out", str(out)]) == 0
    lines = (out / "holes.csv").read_text().splitlines()
    assert lines[0].startswith("# schema=") and lines[1] == "c1,c2,c3,radius,source" and len(lines) == 2


@pytest.mark.parametrize(
    "argv",
    [
        ["generate", "--config", "CFG", "--out", "OUT", "--seed", "4"],
        ["study", "counting", "--config", "CFG", "--out", "OUT"],
        ["study", "negligible", "--config", "CFG", "--out", "OUT", "--threads", "2"],
        ["capacity-table", "--n", "3", "--q", "1.5", "--rho", "1,2", "--R", "10,inf", "--z", "1", "--out", "OUT"],
    ],
    ids=["generate", "counting", "negligible", "capacity-table"],
)
def test_rerun_is_byte_identical(tmp_path, argv):
    cfg = _write(tmp_path, SMALL)
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        assert main([cfg if a == "CFG" else str(out) if a == "OUT" else a for a in argv]) == 0
        outs.append(out)
    names = sorted(p.name for p in outs[0].glob("*.csv"))
    assert names
    for name in names:
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_seed_flag_changes_output(tmp_path):
    cfg = _write(tmp_path, SMALL)
    main(["generate", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["generate", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "2"])
    assert (tmp_path / "a" / "holes.csv").read_bytes() != (tmp_path / "b" / "holes.csv").read_bytes()


# ------------------------------------------------------------ study


def test_study_counting_outputs(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL)
    out = tmp_path / "c"
    assert main(["study", "counting", "--config", cfg, "--out", str(out), "--replicas", "2"]) == 0
    stem = "counting_seed11_eps0.2-0.1"
    rows = _rows(out / f"{stem}.csv")
    assert [float(r["eps"]) for r in rows] == [0.2, 0.1]
    assert all(int(r["replicas"]) == 2 for r in rows)
    doc = json.loads((out / f"{stem}.json").read_text())
    assert doc["kind"] == "counting"
    man = json.loads((out / "manifest.json").read_text())
    assert man["outputs"] == [f"{stem}.csv", f"{stem}.json"]
    assert "worst relative error" in capsys.readouterr().out


def test_eps_grid_flag_overrides(tmp_path):
    cfg = _write(tmp_path, SMALL)
    out = tmp_path / "g"
    assert main(["study", "marksum", "--config", cfg, "--out", str(out), "--eps-grid", "0.25,0.2"]) == 0
    assert (out / "marksum_seed11_eps0.25-0.2.csv").exists()


def test_gamma_study_columns(tmp_path):
    cfg = _write(tmp_path, GAMMA)
    out = tmp_path / "gamma"
    assert main(["study", "gamma", "--config", cfg, "--out", str(out), "--eps-grid", "0.05"]) == 0
    rows = _rows(out / "gamma_seed2_eps0.05.csv")
    for key in ("bulk", "capacitary", "blending", "bad_region", "corrections", "total", "target", "gap"):
        assert key in rows[0]
    parts = sum(float(rows[0][k]) for k in ("bulk", "capacitary", "corrections"))
    assert float(rows[0]["total"]) == pytest.approx(parts, rel=1e-14)
    bd = _rows(out / "gamma_seed2_eps0.05_breakdown.csv")
    assert len(bd) == 1 and bd[0]["replica"] == "0"


# ------------------------------------------------------------ capacity table


def test_capacity_table_golden_rows():
    rows = list(csv.DictReader([line for line in capacity_table(3, 2.0, [1.0], [100.0, np.inf], [1.0]).splitlines()
                                if not line.startswith("#")]))
    assert float(rows[0]["solver"]) == pytest.approx(12.6933, rel=1e-4)
    assert float(rows[0]["closed_form"]) == pytest.approx(4 * np.pi / 0.99, rel=1e-14)
    assert float(rows[1]["closed_form"]) == pytest.approx(4 * np.pi, rel=1e-15)
    assert float(rows[1]["rel_err"]) < 1e-2


def test_capacity_table_command(tmp_path):
    out = tmp_path / "t"
    argv = ["capacity-table", "--n", "2", "--q", "1.5", "--rho", "0.5,1", "--R", "5", "--z", "0,2", "--out", str(out)]
    assert main(argv) == 0
    rows = _rows(out / "capacity_table.csv")
    assert len(rows) == 4
    assert (out / "capacity_table.csv").read_text().startswith("# schema=perfhom.capacity_table/1")
    zero = [r for r in rows if float(r["z"]) == 0]
    assert all(float(r["solver"]) == 0 and float(r["rel_err"]) == 0 for r in zero)


def test_capacity_table_rejects_inner_radius_beyond_outer(tmp_path):
    assert main(["capacity-table", "--n", "3", "--q", "2", "--rho", "2", "--R", "1", "--z", "1",
                 "--out", str(tmp_path)]) == 1


# ------------------------------------------------------------ homogenized


def test_homogenized_command(tmp_path):
    cfg = _write(tmp_path, GAMMA)
    out = tmp_path / "h"
    assert main(["homogenized", "--config", cfg, "--out", str(out), "--N", "8"]) == 0
    rows = _rows(out / "homogenized_grid.csv")
    assert len(rows) == 7**3
    man = json.loads((out / "manifest.json").read_text())
    assert man["parameters"]["energy"] < 0


# ------------------------------------------------------------ errors


def test_unknown_study_kind_exits_1(tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["study", "bogus", "--config", _write(tmp_path, SMALL), "--out", str(tmp_path)])
    assert e.value.code == 1


def test_unknown_config_key_exits_1(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL.replace("intensity = 4.0", "intesity = 4.0"))
    assert main(["study", "counting", "--config", cfg, "--out", str(tmp_path / "x")]) == 1
    assert "process.intesity" in capsys.readouterr().err


def test_malformed_json_reports_line(tmp_path, capsys):
    cfg = _write(tmp_path, '{"process": {\n  "intensity": 4.0,,\n}}', "bad.json")
    assert main(["generate", "--config", cfg, "--out", str(tmp_path / "x")]) == 1
    assert "line 2" in capsys.readouterr().err


def test_divergent_moment_exits_1(tmp_path):
    cfg = _write(tmp_path, SMALL.replace("beta = 4.0", "beta = 2.5"))
    # the tail condition needs beta > 1 + n - q = 2 for counting but <rho> needs beta > 2
    code = main(["study", "marksum", "--config", cfg, "--out", str(tmp_path / "x")])
    assert code == 0
    cfg = _write(tmp_path, SMALL.replace("beta = 4.0", "beta = 1.5"), "div.toml")
    assert main(["study", "marksum", "--config", cfg, "--out", str(tmp_path / "y")]) == 1


def test_missing_required_flag_exits_1(tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["generate", "--out", str(tmp_path)])
    assert e.value.code == 1


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "perfhom", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "exit codes" in res.stdout


# ------------------------------------------------------------ config parsing


def test_json_and_toml_agree():
    toml_doc = parse_text(SMALL, "toml")
    json_doc = parse_text(json.dumps(toml_doc), "json")
    a = build_config(toml_doc)
    b = build_config(json_doc)
    assert a.study == b.study


def test_config_defaults():
    rc = build_config({})
    assert rc.study.eps_grid == (0.1, 0.05, 0.025)
    assert rc.eps == 0.025 and rc.grid_N == 32
    assert rc.study.replicas == 10
