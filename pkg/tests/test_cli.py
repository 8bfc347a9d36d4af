import csv
import json
import math

import pytest

from swnt_kubo import load_config, run_jobs
from swnt_kubo.cli import main
from swnt_kubo.config import OUTPUT_ENV, ConfigError, parse_override

MINIMAL = """\
[model]
r = 0.2
a = 1.0
L = 4
N = 2
lambda = 1.0
M_modes = 4

[conductivity]
eta = 0.05
"""

SMALL = """\
[model]
r = 0.2
a = 1.0
L = 4
N = 2
lambda = 1.0
M_modes = 2

[model.v_per]
1 = 0.5

[conductivity]
eta = 0.2

[omega_grid]
min = 0.5
max = 10.0
count = 20

[oracle]
omegas = [1.0, 3.0]
"""


def write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.fixture(autouse=True)
def _no_env_output(monkeypatch):
    monkeypatch.delenv(OUTPUT_ENV, raising=False)


def test_minimal_config_fills_defaults(tmp_path):
    cfg = load_config(write(tmp_path, MINIMAL))
    assert cfg.model.M_modes == 4 and cfg.model.lam == 1.0 and cfg.eta == 0.05
    assert cfg.model.v_per.is_free and cfg.beta is None
    echo = cfg.echo()
    assert echo["omega_grid"] == {"min": 0.1, "max": 20.0, "count": 200, "spacing": "linear"}
    assert echo["run"]["jobs"]
    assert cfg.model_hash() == load_config(write(tmp_path, MINIMAL, "b.toml")).model_hash()


def test_model_hash_tracks_model_only(tmp_path):
    base = load_config(write(tmp_path, MINIMAL))
    grid = load_config(write(tmp_path, MINIMAL), ["omega_grid.count=5"])
    lam = load_config(write(tmp_path, MINIMAL), ["model.lambda=0.5"])
    assert base.model_hash() == grid.model_hash() != lam.model_hash()


def test_geometry_violation(tmp_path):
    with pytest.raises(ConfigError, match="2\\*sqrt\\(2\\)\\*r < a"):
        load_config(write(tmp_path, MINIMAL.replace("r = 0.2", "r = 0.5")))


def test_omega_min_zero_rejected(tmp_path):
    with pytest.raises(ConfigError, match="min must be > 0"):
        load_config(write(tmp_path, MINIMAL + "\n[omega_grid]\nmin = 0.0\n"))


def test_parse_error_reports_position(tmp_path):
    with pytest.raises(ConfigError, match="line 3, column"):
        load_config(write(tmp_path, "[model]\nr = 0.2\na = = 1\n"))


def test_unknown_model_key_and_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="unknown keys: radius"):
        load_config(write(tmp_path, MINIMAL.replace("r = 0.2", "r = 0.2\nradius = 3")))
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.toml")


def test_overrides():
    assert parse_override("model.lambda=0.5") == (["model", "lambda"], 0.5)
    assert parse_override('run.jobs=["spectrum"]') == (["run", "jobs"], ["spectrum"])
    with pytest.raises(ConfigError):
        parse_override("nonsense")


def test_env_var_sets_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "from_env"))
    cfg = load_config(write(tmp_path, MINIMAL))
    assert str(cfg.output_dir) == str(tmp_path / "from_env")


def test_spectrum_job_columns(tmp_path):
    cfg = load_config(write(tmp_path, SMALL), [f'run.output_dir="{tmp_path / "out"}"',
                                               'run.jobs=["spectrum"]'])
    manifest = run_jobs(cfg)
    assert manifest.exit_code() == 0
    table = rows(tmp_path / "out" / "spectrum.csv")
    assert table[0] == ["k", "mu_k", "w_k", "residual"]
    assert len(table) - 1 == math.comb(5, 2)
    mu = [float(r[1]) for r in table[1:]]
    assert mu == sorted(mu)


def test_sweep_uses_cache(tmp_path):
    out = tmp_path / "out"
    path = write(tmp_path, SMALL)
    first = run_jobs(load_config(path, [f'run.output_dir="{out}"', 'run.jobs=["spectrum"]']))
    assert first.diagnostics["spectrum_cache"] == "miss"
    second = run_jobs(load_config(path, [f'run.output_dir="{out}"', 'run.jobs=["sweep"]',
                                         "conductivity.beta=3.0"]))
    assert second.diagnostics["spectrum_cache"] == "hit"
    sweep = rows(out / "sweep.csv")
    assert sweep[0] == ["omega", "sigma"] and len(sweep) == 21
    assert rows(out / "sweep_beta.csv")[0] == ["omega", "sigma"]
    meta = json.loads((out / "sweep_beta.json").read_text())
    assert meta["beta"] == 3.0


def test_oracle_compare(tmp_path):
    out = tmp_path / "out"
    cfg = load_config(write(tmp_path, SMALL), [f'run.output_dir="{out}"',
                                               'run.jobs=["oracle_compare"]'])
    manifest = run_jobs(cfg)
    assert manifest.exit_code() == 0
    table = rows(out / "compare.csv")
    assert table[0] == ["omega", "sigma_freq", "sigma_time", "rel_diff"]
    for r in table[1:]:
        freq, time_, rel = float(r[1]), float(r[2]), float(r[3])
        assert rel == pytest.approx(abs(time_ - freq) / abs(freq), rel=1e-12)
        assert rel < 1e-2


def test_determinism_and_manifest(tmp_path):
    path = write(tmp_path, SMALL)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        run_jobs(load_config(path, [f'run.output_dir="{out}"',
                                    'run.jobs=["spectrum", "sweep", "lines"]']))
        outs.append(out)
    for name in ("spectrum.csv", "sweep.csv", "lines.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    manifest = json.loads((outs[0] / "manifest.json").read_text())
    listed = {a["path"] for a in manifest["artifacts"]}
    on_disk = {p.relative_to(outs[0]).as_posix() for p in outs[0].rglob("*") if p.is_file()}
    assert listed == on_disk
    roles = {a["path"]: a["role"] for a in manifest["artifacts"]}
    assert roles["lines.csv"] != "stale (earlier run)"
    assert manifest["diagnostics"]["spectrum"]["dim"] == 10


def test_stale_files_are_listed(tmp_path):
    out = tmp_path / "out"
    out.mkdir()
    (out / "old.csv").write_text("x\n")
    run_jobs(load_config(write(tmp_path, SMALL), [f'run.output_dir="{out}"',
                                                  'run.jobs=["spectrum"]']))
    manifest = json.loads((out / "manifest.json").read_text())
    roles = {a["path"]: a["role"] for a in manifest["artifacts"]}
    assert roles["old.csv"] == "stale (earlier run)"


def test_exit_codes_through_main(tmp_path, capsys):
    path = write(tmp_path, SMALL)
    out = tmp_path / "out"
    assert main(["spectrum", "--config", str(path), "--output-dir", str(out)]) == 0
    assert (out / "spectrum.csv").exists()
    assert main(["sweep", "--config", str(path), "--override", "model.r=0.5"]) == 1
    assert "2*sqrt(2)*r < a" in capsys.readouterr().err
    # a dimension budget below the basis size is a numerical (capacity) failure
    code = main(["lines", "--config", str(path), "--output-dir", str(tmp_path / "cap"),
                 "--override", "numerics.max_dim=3"])
    assert code == 2


def test_convergence_free_model_zero_drift(tmp_path):
    out = tmp_path / "out"
    text = SMALL.replace("lambda = 1.0", "lambda = 0.0").replace("[model.v_per]\n1 = 0.5\n", "")
    cfg = load_config(write(tmp_path, text), [f'run.output_dir="{out}"',
                                              'run.jobs=["convergence"]',
                                              "convergence.omegas=[1.0, 3.0, 6.0]"])
    assert run_jobs(cfg).exit_code() == 0
    table = rows(out / "convergence.csv")
    assert table[0] == ["quantity", "M_modes", "M_fourier", "dim", "value", "drift"]
    drifts = {}
    for q, M, _, _, v, d in table[1:]:
        if d:
            drifts.setdefault(q, []).append(float(d))
    assert set(drifts) >= {"mu_0", "gap", "sigma@1", "sigma@3", "sigma@6"}
    for q in ("mu_0", "gap"):
        assert max(drifts[q]) < 1e-12
    dt = rows(out / "convergence_dt.csv")
    assert dt[0] == ["omega", "dt", "sigma_time_dt", "sigma_time_half_dt", "drift"]
    assert all(float(r[4]) < 1e-6 for r in dt[1:])


def test_sweep_reports_drude_bracket(tmp_path):
    out = tmp_path / "out"
    run_jobs(load_config(write(tmp_path, SMALL), [f'run.output_dir="{out}"',
                                                  'run.jobs=["sweep"]']))
    meta = json.loads((out / "sweep.json").read_text())
    bracket = meta["diagnostics"]["drude_bracket"]
    assert set(bracket) == {"at_omega_min", "at_omega_max", "max_abs"}
    assert bracket["max_abs"] >= abs(bracket["at_omega_min"])
