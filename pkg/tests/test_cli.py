import json

import pytest

from src import atomtf
from src.core.errors import (
    AtomtfError,
    ConvergenceError,
    DivergentTailError,
    FitError,
    InvariantViolation,
    ParameterError,
    ScanError,
)
from src.io.config import ConfigError, RunConfig


def _read_csv_summary(text):
    return dict(line.split(",", 1) for line in text.splitlines() if line.startswith("summary:"))


def test_tf_profile(tmp_path, capsys):
    out = tmp_path / "tf.csv"
    assert atomtf.main(["tf", "--Z", "1", "--out", str(out)]) == 0
    text = out.read_text()
    assert text.splitlines()[0] == "r,rho_tf,phi_tf"
    summary = _read_csv_summary(text)
    assert float(summary["summary:mass"]) == pytest.approx(1.0, rel=1e-6)
    assert "wrote" in capsys.readouterr().out


def test_tf_is_deterministic(tmp_path):
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    atomtf.main(["tf", "--Z", "2", "--out", str(first)])
    atomtf.main(["tf", "--Z", "2", "--out", str(second)])
    assert first.read_bytes() == second.read_bytes()


def test_tf_uses_configured_grid(tmp_path):
    cfg = tmp_path / "grid.json"
    cfg.write_text(json.dumps({"grid": {"n": 1200}}))
    out = tmp_path / "tf.csv"
    atomtf.main(["tf", "--config", str(cfg), "--Z", "1", "--out", str(out)])
    profile = [line for line in out.read_text().splitlines()[1:] if not line.startswith("summary:")]
    assert len(profile) == 1200


def test_tf_table_to_stdout(capsys):
    atomtf.main(["tf", "--Z", "1", "8"])
    captured = capsys.readouterr()
    lines = captured.out.splitlines()
    assert lines[0] == "Z,mass,mu,energy,energy_scaled"
    assert len(lines) == 3
    assert "[tf] solving Z=8" in captured.err


def test_drop_json(tmp_path):
    out = tmp_path / "drop.json"
    atomtf.main(["drop", "--Z", "0", "10", "100", "--format", "json", "--out", str(out)])
    doc = json.loads(out.read_text())
    assert doc["columns"] == ["Z", "threshold", "best_split"]
    assert [row[0] for row in doc["rows"]] == [0.0, 10.0, 100.0]
    assert doc["summary"]["family"] == "scanned"
    assert doc["summary"]["radial_only"] is True
    assert doc["summary"]["within_volume_bound"] is True
    assert "excess_slope" in doc["summary"]


def test_drop_default_exponent(tmp_path):
    out = tmp_path / "drop.json"
    atomtf.main(["drop", "--Z", "10", "100", "1000", "10000", "--format", "json", "--out", str(out)])
    summary = json.loads(out.read_text())["summary"]
    assert 0.23 <= summary["excess_slope"] <= 0.43
    assert summary["within_volume_bound"] is True


def test_drop_equal_split_flagged(tmp_path, capsys):
    out = tmp_path / "drop.json"
    atomtf.main(["drop", "--Z", "1000", "--split-family", "equal", "--format", "json", "--out", str(out)])
    summary = json.loads(out.read_text())["summary"]
    assert summary["family"] == "equal"
    assert summary["within_volume_bound"] is False
    assert "overestimate" in capsys.readouterr().out


def test_verify_passes(tmp_path):
    out = tmp_path / "verify.csv"
    assert atomtf.main(["verify", "--out", str(out)]) == 0
    summary = _read_csv_summary(out.read_text())
    assert summary["summary:failures"] == "0"
    assert ",false" not in out.read_text()
    checks = out.read_text()
    rows = [line for line in checks.splitlines()[1:] if not line.startswith("summary:")]
    modules = {line.split(",", 1)[0] for line in rows}
    assert modules == {"radial_core", "coulomb", "tf", "tfdw", "analysis", "liquid_drop"}
    for name in ("quadrature_r^2", "tail_closure_r^-4", "tfdw_mass_drift", "tfdw_energy_increases",
                 "radius_monotone_in_kappa", "tf_screened_slope", "tf_sommerfeld_exponent"):
        assert f",{name}," in checks


def test_config_error_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"params": {"Zz": [1.0]}}))
    with pytest.raises(SystemExit) as info:
        atomtf.main(["tf", "--config", str(bad)])
    assert info.value.code == 2
    assert "Zz" in capsys.readouterr().err


def test_negative_charge_exits_2():
    with pytest.raises(SystemExit) as info:
        atomtf.main(["drop", "--Z", "-1"])
    assert info.value.code == 2


def test_unknown_command():
    with pytest.raises(SystemExit) as info:
        atomtf.main(["plot"])
    assert info.value.code == 2


@pytest.mark.parametrize("exc,code", [
    (ConfigError("x"), 2),
    (ParameterError("x"), 2),
    (DivergentTailError("x"), 2),
    (ConvergenceError("x", 1.0, 3), 3),
    (ScanError("x"), 3),
    (InvariantViolation("x"), 4),
    (FitError("x"), 4),
    (AtomtfError("x"), 1),
])
def test_exit_codes(exc, code):
    assert atomtf.exit_code(exc) == code


def test_unpaired_charges_and_electrons():
    config = RunConfig().with_overrides({"params.Z": [1.0, 2.0], "params.N": [1.0, 2.0, 3.0]})
    with pytest.raises(ConfigError, match="pair"):
        atomtf.run("tfdw", config, progress=lambda msg: None)


def test_pairs_broadcast_single_charge():
    config = RunConfig().with_overrides({"params.Z": [5.0], "params.N": [4.0, 5.0]})
    assert atomtf._pairs(config) == [(5.0, 4.0), (5.0, 5.0)]


@pytest.mark.slow
def test_screen_slope(tmp_path):
    out = tmp_path / "screen.json"
    atomtf.main(["screen", "--Z", "50", "--N", "50", "--format", "json", "--out", str(out)])
    doc = json.loads(out.read_text())
    assert doc["summary"]["slope"] > -4.0
    assert 0.0 < doc["summary"]["small_r_constant"] <= 10.0
