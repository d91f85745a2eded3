import csv
import json

import pytest

from cyclic_thermo import cli
from cyclic_thermo.config import BUNDLED, ConfigError, RunConfig, bundled_config_path

pytestmark = pytest.mark.filterwarnings("ignore::cyclic_thermo.discretization.RecurrenceWarning")

TINY = """
name = "tiny"
[model]
omega0 = 2.0
g = 0.5
period = 1.0
initial_population = "golden_rule"
[[reservoirs]]
beta = 0.5
envelope = { kind = "cosine", offset = 1.0, amplitude = 0.5 }
profile = { kind = "power_gaussian", power = 2, scale = 4.0 }
[[reservoirs]]
beta = 2.0
envelope = { kind = "cosine", offset = 1.0, amplitude = 0.5 }
profile = { kind = "power_gaussian", power = 2, scale = 4.0 }
[discretization]
modes = 12
u_max = 16.0
[integrator]
steps_per_cycle = 64
samples_per_cycle = 8
[run]
cycles = 6
detail = "all"
"""


@pytest.fixture
def tiny_cfg(tmp_path):
    p = tmp_path / "tiny.toml"
    p.write_text(TINY)
    return p


def test_bundled_configs_validate():
    for name in BUNDLED:
        cfg = RunConfig.load(bundled_config_path(name))
        assert cfg.name == name
        assert cli.main(["validate", "--config", str(bundled_config_path(name))]) == 0


def test_bundled_name_resolves(capsys):
    assert cli.main(["validate", "--config", "equilibrium_null"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["horizon"] < out["recurrence_time"]


@pytest.mark.parametrize("edit,key", [
    (("beta = 0.5", "beta = -0.5"), "reservoirs/0/beta"),
    (("omega0 = 2.0", "omega0 = 2.0\nomega = 1.0"), "model/omega"),
    (("modes = 12", "modes = 1.5"), "discretization/modes"),
    (("period = 1.0\n", ""), "model/period"),
])
def test_malformed_config_names_key(tmp_path, capsys, edit, key):
    p = tmp_path / "bad.toml"
    p.write_text(TINY.replace(*edit, 1))
    with pytest.raises(ConfigError) as exc:
        RunConfig.load(p)
    assert exc.value.key == key
    assert cli.main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["key"] == key


def test_unparsable_file(tmp_path):
    p = tmp_path / "x.toml"
    p.write_text("[model\n")
    assert cli.main(["validate", "--config", str(p)]) == 2


def test_assumption_failure_exit_code(tmp_path, capsys):
    # mismatched envelope periods violate A1
    p = tmp_path / "a1.toml"
    p.write_text(TINY.replace('amplitude = 0.5 }\nprofile = { kind = "power_gaussian", power = 2, scale = 4.0 }\n[discretization]',
                              'amplitude = 0.5, period = 1.5 }\nprofile = { kind = "power_gaussian", power = 2, scale = 4.0 }\n[discretization]'))
    assert cli.main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "A1" in json.loads(capsys.readouterr().err)["failed"]


def test_run_bundle_is_deterministic(tmp_path, tiny_cfg):
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        code = cli.main(["run", "--config", str(tiny_cfg), "--out", str(out), "--seedless"])
        assert code in (0, 1)
        outs.append(out)
    for name in ("trajectory.csv", "ledger.json", "report.json", "snapshot.bin"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    rep = json.loads((outs[0] / "report.json").read_text())
    assert rep["config_hash"] == RunConfig.load(tiny_cfg).content_hash()
    assert len(rep["discretization_hash"]) == 64
    assert rep["invariants"]["balance_identity"]["ok"]
    assert rep["seed"] is None


def test_cycles_override(tmp_path, tiny_cfg):
    cli.main(["run", "--config", str(tiny_cfg), "--out", str(tmp_path / "o"), "--cycles", "2"])
    led = json.loads((tmp_path / "o" / "ledger.json").read_text())
    assert len(led["entropy_change"]) == 2


def test_sweep_manifest(tmp_path, tiny_cfg):
    text = TINY + "[sweep]\ng = [1e-3, 2e-3, 4e-3]\n"
    p = tmp_path / "sw.toml"
    p.write_text(text)
    cli.main(["sweep", "--config", str(p), "--out", str(tmp_path / "a"), "--cycles", "2"])
    cli.main(["sweep", "--config", str(p), "--out", str(tmp_path / "b"), "--cycles", "2",
              "--workers", "2"])
    a = (tmp_path / "a" / "manifest.csv").read_bytes()
    assert a == (tmp_path / "b" / "manifest.csv").read_bytes()
    rows = list(csv.DictReader(a.decode().splitlines()))
    assert [float(r["g"]) for r in rows] == [1e-3, 2e-3, 4e-3]
    assert len({r["config_hash"] for r in rows}) == 3
    assert all(r["seed"] == "none" and r["regime"] for r in rows)


def test_empty_axes_fall_back_to_single_run(tmp_path):
    p = tmp_path / "e.toml"
    p.write_text(TINY + "[sweep]\ng = []\n")
    cfg = RunConfig.load(p)
    assert cfg.sweep_points() == [{}]
    cfg.data["run"]["cycles"] = 2
    rows = cli.sweep(cfg, tmp_path / "e")
    assert len(rows) == 1 and rows[0]["g"] == 0.5


def test_sweep_limit(tmp_path):
    p = tmp_path / "big.toml"
    p.write_text(TINY + "[sweep]\ng = [0.1, 0.2, 0.3]\nbeta1 = [0.5, 1.0]\nmax_points = 4\n")
    with pytest.raises(ConfigError) as exc:
        RunConfig.load(p).sweep_points()
    assert exc.value.key == "sweep/max_points"


def test_sweep_records_point_failures(tmp_path, monkeypatch):
    real = cli.execute

    def flaky(cfg, out_dir=None):
        if cfg.data["model"]["g"] == 0.2:
            raise RuntimeError("simulated failure")
        return real(cfg, out_dir)

    monkeypatch.setattr(cli, "execute", flaky)
    p = tmp_path / "f.toml"
    p.write_text(TINY + "[sweep]\ng = [0.1, 0.2, 0.3]\n")
    cfg = RunConfig.load(p)
    cfg.data["run"]["cycles"] = 2
    rows = cli.sweep(cfg, tmp_path / "f")
    assert [r["status"] for r in rows][1] == "failed"
    assert "simulated failure" in rows[1]["error"]
    assert rows[0]["status"] != "failed" and rows[2]["status"] != "failed"
    text = (tmp_path / "f" / "manifest.csv").read_text()
    assert "RuntimeError: simulated failure" in text


def test_plots_from_run_and_idempotent(tmp_path, tiny_cfg):
    out = tmp_path / "r"
    cli.main(["run", "--config", str(tiny_cfg), "--out", str(out)])
    assert cli.main(["plots", str(out)]) == 0
    first = {f.name: f.read_bytes() for f in (out / "plots").iterdir()}
    assert set(first) == {"flux_vs_t.csv", "dent_vs_n.csv"}
    assert all(len(v.splitlines()) > 1 for v in first.values())
    cli.main(["plots", str(out)])
    assert first == {f.name: f.read_bytes() for f in (out / "plots").iterdir()}


def test_plots_empty_manifest_and_missing_columns(tmp_path):
    m = tmp_path / "manifest.csv"
    cli.write_manifest([], m)
    files = cli.emit_plots(m, tmp_path / "p")
    for f in files:
        lines = (tmp_path / "p" / f).read_text().splitlines()
        assert len(lines) == 1
    bad = tmp_path / "bad.csv"
    bad.write_text("index,g\r\n0,0.1\r\n")
    assert cli.main(["plots", str(bad)]) == 2
    assert cli.main(["plots", str(tmp_path / "missing")]) == 2


def test_resonances_subcommand(tmp_path, tiny_cfg):
    assert cli.main(["resonances", "--config", str(tiny_cfg), "--out", str(tmp_path), "--kmax", "1"]) == 0
    rows = list(csv.DictReader((tmp_path / "resonances_C.csv").read_text().splitlines()))
    assert len(rows) == 12
    assert (tmp_path / "resonances_standard.json").exists()
