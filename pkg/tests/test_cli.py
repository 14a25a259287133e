import csv
import json
from pathlib import Path

import pytest

from ecsense.cli import EXIT_CONFIG, EXIT_MISMATCH, EXIT_OK, EXIT_RUNTIME, main, resolve_workers
from ecsense.config import ConfigError, evaluate_number, load_config, set_path, sweep_point_config

PRESETS = Path(__file__).resolve().parents[1] / "src" / "ecsense" / "presets"

SMALL = {
    "protocol": "flipflop",
    "params": {"g": 1.0, "gamma": 1.0},
    "schedule": {"dt": 0.01, "total_time": 0.5, "sample_grid": {"step": 0.1}, "ec_interval": 0.05},
    "n_traj": 8,
    "master_seed": 1,
}


def _write(tmp_path, cfg, name="cfg.json", text=None):
    p = tmp_path / name
    p.write_text(text if text is not None else json.dumps(cfg, indent=2))
    return p


def test_evaluate_number():
    assert evaluate_number("20*pi") == pytest.approx(62.83185307179586)
    assert evaluate_number("sqrt(4) + exp(0)") == 3.0
    assert evaluate_number(2) == 2.0
    for bad in ("__import__('os')", "x + 1", "1/0", True):
        with pytest.raises(ValueError):
            evaluate_number(bad)


def test_set_path_and_sweep_seed():
    d = set_path({"a": {"b": 1}}, "a.c", 2)
    assert d == {"a": {"b": 1, "c": 2}}
    cfg = load_config(PRESETS / "msfig.json")
    pt = sweep_point_config(cfg, 2)
    assert pt.master_seed == cfg.master_seed + 2
    assert pt.curves[0].schedule.total_time == pytest.approx(1666.7)


@pytest.mark.parametrize("preset", sorted(p.name for p in PRESETS.glob("*.json")))
def test_presets_parse(preset):
    cfg = load_config(PRESETS / preset)
    assert cfg.n_traj >= 1 or cfg.kind == "sensitivity"


def test_run_writes_outputs(tmp_path):
    out = tmp_path / "o"
    assert main(["run", str(_write(tmp_path, SMALL)), "--out", str(out)]) == EXIT_OK
    rows = list(csv.reader((out / "timeseries.csv").open()))
    assert rows[0][0] == "time" and "fidelity_mean" in rows[0]
    assert len(rows) == 7
    summary = json.loads((out / "summary.json").read_text())
    assert summary["master_seed"] == 1 and summary["n_traj"] == 8
    # 17 significant digits round-trip exactly
    for cell in rows[3][1:]:
        assert float(cell) == float(format(float(cell), ".17g"))
    assert rows[3][0] == format(0.2, ".17g")


def test_header_written_without_samples(tmp_path):
    cfg = dict(SMALL, schedule=dict(SMALL["schedule"], sample_grid=None, sample_times=[0.5]))
    cfg["schedule"].pop("sample_grid")
    out = tmp_path / "o"
    assert main(["run", str(_write(tmp_path, cfg)), "--out", str(out)]) == EXIT_OK
    assert (out / "timeseries.csv").read_text().splitlines()[0].startswith("time,")


def test_seed_override_changes_results(tmp_path):
    cfg = _write(tmp_path, SMALL)
    main(["run", str(cfg), "--out", str(tmp_path / "a"), "--seed", "5"])
    main(["run", str(cfg), "--out", str(tmp_path / "b"), "--seed", "6"])
    main(["run", str(cfg), "--out", str(tmp_path / "c"), "--seed", "5"])
    a, b, c = ((tmp_path / x / "timeseries.csv").read_text() for x in "abc")
    assert a == c and a != b
    assert json.loads((tmp_path / "a" / "summary.json").read_text())["master_seed"] == 5


def test_dry_run_writes_nothing(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["run", str(_write(tmp_path, SMALL)), "--out", str(out), "--dry-run"]) == EXIT_OK
    assert not out.exists()
    assert json.loads(capsys.readouterr().out)


def test_validation_errors_are_line_anchored(tmp_path, capsys):
    cfg = dict(SMALL, schedule=dict(SMALL["schedule"], dtt=0.1))
    path = _write(tmp_path, cfg)
    assert main(["run", str(path), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    err = capsys.readouterr().err
    line = next(i for i, s in enumerate(path.read_text().splitlines(), 1) if '"dtt"' in s)
    assert f"cfg.json:{line}:" in err and "schedule.dtt" in err and "did you mean 'dt'" in err


def test_invalid_json_reports_line(tmp_path):
    path = _write(tmp_path, None, text='{\n  "protocol": "flipflop",\n  "n_traj": ,\n}')
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    assert exc.value.line == 3


def test_unknown_protocol_suggestion(tmp_path, capsys):
    path = _write(tmp_path, dict(SMALL, protocol="flipflopp"))
    assert main(["run", str(path)]) == EXIT_CONFIG
    assert "did you mean 'flipflop'" in capsys.readouterr().err


def test_step_too_coarse_for_rate_is_validation_error(tmp_path, capsys):
    cfg = dict(SMALL, params={"g": 1.0, "gamma": 100.0})
    assert main(["run", str(_write(tmp_path, cfg)), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "schedule.dt" in capsys.readouterr().err


def test_runtime_failure_exit_code(tmp_path, monkeypatch):
    import ecsense.cli as cli

    def boom(*args, **kwargs):
        raise FloatingPointError("non-finite state")

    monkeypatch.setattr(cli, "run_ensemble", boom)
    assert main(["run", str(_write(tmp_path, SMALL)), "--out", str(tmp_path / "o")]) == EXIT_RUNTIME


def test_workers_env_overrides_flag(monkeypatch):
    monkeypatch.setenv("ECSENSE_WORKERS", "3")
    assert resolve_workers(1) == 3
    monkeypatch.setenv("ECSENSE_WORKERS", "0")
    with pytest.raises(ConfigError):
        resolve_workers(1)
    monkeypatch.delenv("ECSENSE_WORKERS")
    assert resolve_workers(2) == 2
    assert resolve_workers(None) == 1


def test_sweep_writes_csv(tmp_path):
    cfg = dict(SMALL, fit={"observable": "code_population"},
               sweep={"parameter": "params.gamma", "values": [0.5, 1.0]})
    out = tmp_path / "s"
    assert main(["sweep", str(_write(tmp_path, cfg)), "--out", str(out)]) == EXIT_OK
    rows = list(csv.DictReader((out / "sweep.csv").open()))
    assert [float(r["params.gamma"]) for r in rows] == [0.5, 1.0]
    assert "T2_star" in rows[0]
    assert (out / "point_000" / "timeseries.csv").exists()
    assert [r["seed"] for r in rows] == ["1", "2"]


def test_sensitivity_sweep(tmp_path):
    out = tmp_path / "s"
    assert main(["sweep", str(PRESETS / "strong-noise.json"), "--out", str(out)]) == EXIT_OK
    rows = list(csv.DictReader((out / "sweep.csv").open()))
    assert len(rows) == 4


def test_check_all_and_mismatch(tmp_path, monkeypatch):
    assert main(["check", "all", "--out", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "check.json").read_text())
    assert report["ghz_decay_case"]
    assert main(["check", "nope", "--out", str(tmp_path)]) == EXIT_CONFIG
    import ecsense.cli as cli
    from ecsense.codes import ErrorSet
    real = cli.build_protocol

    def lying(name, params=None):
        spec = real(name, params)
        spec.error_sets = {k: ErrorSet(v.errors, not v.expect_correctable) for k, v in spec.error_sets.items()}
        return spec

    monkeypatch.setattr(cli, "build_protocol", lying)
    assert main(["check", "flipflop", "--out", str(tmp_path)]) == EXIT_MISMATCH


def test_module_entry_point():
    import subprocess
    import sys
    r = subprocess.run([sys.executable, "-m", "ecsense", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "ecsense" in r.stdout
