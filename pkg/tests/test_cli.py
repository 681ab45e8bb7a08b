import json

from uxcascade.cli import main


def test_setpoint_command(tmp_path, capsys):
    rc = main(["setpoint", "--oe", "100", "--out", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "A_F*" in out
    written = json.loads((tmp_path / "setpoint_oe100.json").read_text())
    assert written["u_set"] > 0


def test_sweep_command(tmp_path, capsys):
    rc = main(["sweep", "--grid", "20", "30", "5", "--out", str(tmp_path)])
    assert rc == 0
    files = list(tmp_path.glob("sweep_*.csv"))
    assert len(files) == 1
    lines = files[0].read_text().splitlines()
    assert len(lines) == 4   # header + 3 grid points


def test_simulate_command_openloop(tmp_path, capsys):
    rc = main(["simulate", "--case", "A", "--controller", "openloop",
               "--out", str(tmp_path), "--ts", "0.5"])
    assert rc == 0
    assert (tmp_path / "case_a_openloop.csv").exists()
    manifest = tmp_path / "case_a_openloop_manifest.json"
    assert manifest.exists()
    rc = main(["simulate", "--manifest", str(manifest),
               "--out", str(tmp_path / "rerun")])
    assert rc == 0
    assert (tmp_path / "rerun" / "case_a_openloop.csv").read_bytes() == \
        (tmp_path / "case_a_openloop.csv").read_bytes()


def test_bad_config_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"n_stages": 16}')
    rc = main(["setpoint", "--config", str(bad)])
    assert rc == 1
    assert "configuration error" in capsys.readouterr().err


def test_numerical_failure_exits_two(tmp_path, capsys):
    # knee lies far below this search interval: bracket failure
    from uxcascade.flowsheet import flowsheet_to_dict, reference_flowsheet
    cfg = flowsheet_to_dict(reference_flowsheet())
    cfg["u_min"] = 70.0
    cfg["u_max"] = 80.0
    path = tmp_path / "tight.json"
    path.write_text(json.dumps(cfg))
    rc = main(["setpoint", "--config", str(path)])
    assert rc == 2
    assert "numerical failure" in capsys.readouterr().err
