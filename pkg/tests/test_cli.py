import csv
import json

import numpy as np
import pytest

from latentbook import cli

SMALL_SIM = {"dimensionless": {"k_ll": 0.35, "k_lr": 0.112, "L_latent": 200.0}, "sim": {"n_bins": 80, "half_width": 8.0, "n_steps": 400, "burn_in": 50}}


def _config(tmp_path, cfg, name="c.json"):
    f = tmp_path / name
    f.write_text(json.dumps(cfg))
    return str(f)


@pytest.mark.parametrize("command", sorted(cli.COMMANDS))
def test_dry_run_prints_resolved_config(command, tmp_path, capsys):
    out = tmp_path / "o"
    code = cli.main([command, "--dry-run", "--out", str(out)])
    assert code == cli.EXIT_OK
    d = json.loads(capsys.readouterr().out)
    assert d["command"] == command
    assert not out.exists()


def test_bad_config_exit_codes(tmp_path):
    bad_json = tmp_path / "bad.json"
    bad_json.write_text("{not json")
    assert cli.main(["stationary", "--config", str(bad_json)]) == cli.EXIT_CONFIG
    assert cli.main(["stationary", "--config", str(tmp_path / "missing.json")]) == cli.EXIT_CONFIG
    cfg = _config(tmp_path, {"dimensionless": {"k_ll": -1.0}})
    assert cli.main(["stationary", "--config", cfg, "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    cfg = _config(tmp_path, {"mode": "nonsense"}, "m.json")
    assert cli.main(["stationary", "--config", cfg, "--dry-run"]) == cli.EXIT_CONFIG
    assert cli.main(["frobnicate"]) == cli.EXIT_CONFIG


def test_stationary_outputs_and_manifest(tmp_path):
    cfg = _config(tmp_path, {"dimensionless": {"k_ll": 0.35, "k_lr": 0.35}})
    out = tmp_path / "o"
    assert cli.main(["stationary", "--config", cfg, "--out", str(out)]) == cli.EXIT_OK
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "stationary" and man["status"] == "ok"
    assert set(man["outputs"]) == {"profile.csv", "diagnostics.json"}
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["max_rel_error_vs_closed_form"] < 1e-4
    with open(out / "profile.csv") as fh:
        header = next(csv.reader(fh))
    assert header[0] == "xi"


def test_manifest_digest_is_canonical(tmp_path):
    a = {"b": 1, "a": [1, 2]}
    b = {"a": [1, 2], "b": 1}
    assert cli.config_digest(a) == cli.config_digest(b)
    assert cli.config_digest(a) != cli.config_digest({"a": [2, 1], "b": 1})


def test_simulate_is_byte_reproducible(tmp_path):
    cfg = _config(tmp_path, SMALL_SIM)
    outs = []
    for name in ("o1", "o2"):
        out = tmp_path / name
        assert cli.main(["simulate", "--config", cfg, "--out", str(out), "--seed", "7"]) == cli.EXIT_OK
        outs.append(out)
    for f in ("profile.csv", "series.csv", "metadata.json"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    m1 = json.loads((outs[0] / "manifest.json").read_text())
    m2 = json.loads((outs[1] / "manifest.json").read_text())
    assert m1["config_digest"] == m2["config_digest"] and m1["seed"] == 7
    out3 = tmp_path / "o3"
    cli.main(["simulate", "--config", cfg, "--out", str(out3), "--seed", "8"])
    assert (out3 / "series.csv").read_bytes() != (outs[0] / "series.csv").read_bytes()


def test_seed_from_config_file(tmp_path):
    cfg = _config(tmp_path, dict(SMALL_SIM, seed=11))
    out = tmp_path / "o"
    cli.main(["simulate", "--config", cfg, "--out", str(out)])
    assert json.loads((out / "manifest.json").read_text())["seed"] == 11


def test_crisis_exit_code(tmp_path):
    # far past the critical line the revealed book empties out
    cfg = _config(
        tmp_path,
        {"dimensionless": {"k_ll": 2.6, "k_lr": 0.0, "L_latent": 50.0}, "sim": {"n_bins": 60, "half_width": 10.0, "n_steps": 3000, "burn_in": 0}},
    )
    out = tmp_path / "o"
    assert cli.main(["simulate", "--config", cfg, "--out", str(out)]) == cli.EXIT_CRISIS
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "crisis"
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["members"][0]["crisis_steps"] > 0


def test_impact_small_run(tmp_path):
    cfg = _config(
        tmp_path,
        {
            "dimensionless": {"k_ll": 0.35, "k_lr": 0.35, "L_latent": 2000.0},
            "sim": {"n_bins": 200, "half_width": 5.0, "burn_in": 20},
            "metaorder": {"m0": 5000.0, "duration": 0.02},
            "ensemble": 2,
        },
    )
    out = tmp_path / "o"
    assert cli.main(["impact", "--config", cfg, "--out", str(out), "--workers", "1"]) == cli.EXIT_OK
    man = json.loads((out / "manifest.json").read_text())
    assert {"trajectory.csv", "metadata.json", "geometric.csv"} <= set(man["outputs"])
    meta = json.loads((out / "metadata.json").read_text())
    assert "regime" in meta


def test_map_small_sweep(tmp_path):
    cfg = _config(tmp_path, {"k_ll": {"n": 6, "lo": 0.5, "hi": 3.0}, "k_lr": {"n": 2, "lo": 0.1, "hi": 1.0}, "solver": {"n_points": 401}})
    out = tmp_path / "o"
    assert cli.main(["map", "--config", cfg, "--out", str(out), "--workers", "1"]) == cli.EXIT_OK
    rows = list(csv.DictReader(open(out / "critical_line.csv")))
    assert len(rows) == 2
    zc = np.array([float(r["zeta_c"]) for r in rows])
    assert np.all((zc > 1.7) & (zc < 2.1))


def test_calibrate_bundled_fixture(tmp_path):
    cfg = _config(tmp_path, {"asset": "SYNTH", "fit": {"n_starts": 2}})
    out = tmp_path / "o"
    assert cli.main(["calibrate", "--config", cfg, "--out", str(out), "--workers", "1"]) == cli.EXIT_OK
    fit = json.loads((out / "fit.json").read_text())
    assert fit["k"] == pytest.approx(2.0, rel=0.1)
    rows = list(csv.reader(open(out / "table.csv")))
    assert rows[1][0] == "SYNTH"
    rep = json.loads((out / "stability.json").read_text())
    assert rep["stable"]


def test_calibrate_missing_snapshot_file(tmp_path):
    cfg = _config(tmp_path, {"snapshots": ["nope.csv"]})
    assert cli.main(["calibrate", "--config", cfg, "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
