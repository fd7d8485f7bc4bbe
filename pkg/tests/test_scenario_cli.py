import os

import pytest

from memdarcy.cli import main
from memdarcy.errors import ParseError, ValidationError
from memdarcy.io import read_table
from memdarcy.scenario import DEFAULTS, parse_scenario, parse_text

SMALL = """mode = "{mode}"
[geometry]
h_cell = 0.2
[evolution]
family = "linear"
a = 0.05
[grids]
N_time = 2
macro_n = 2
"""


def write(tmp_path, text, name="s.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_minimal_file_takes_defaults():
    sc = parse_text('mode = "kernel"\n')
    assert sc.mode == "kernel"
    assert sc.geometry == DEFAULTS["geometry"]
    assert sc.grids["eps_list"] == DEFAULTS["grids"]["eps_list"]


def test_range_violations_are_aggregated():
    with pytest.raises(ValidationError) as info:
        parse_text("[geometry]\nr0 = 0.6\nh_cell = -1.0\n[grids]\nN_time = 0\n")
    text = " ".join(info.value.violations)
    assert len(info.value.violations) >= 3
    assert "geometry.r0" in text and "geometry.h_cell" in text and "grids.N_time" in text


def test_inadmissible_evolution_reported():
    with pytest.raises(ValidationError) as info:
        parse_text('[evolution]\nfamily = "linear"\na = 0.5\n')
    assert any(v.startswith("evolution") for v in info.value.violations)


def test_unknown_key_located():
    with pytest.raises(ParseError) as info:
        parse_text("[geometry]\nr0 = 0.2\nradius = 0.3\n")
    assert info.value.line == 3 and info.value.column == 1
    assert "radius" in str(info.value)


def test_malformed_toml_located():
    with pytest.raises(ParseError) as info:
        parse_text("[geometry\nr0 = 0.2\n")
    assert info.value.line == 1


def test_hash_stable_and_sensitive(tmp_path):
    a = parse_scenario(write(tmp_path, SMALL.format(mode="macro")))
    b = parse_text(SMALL.format(mode="macro"))
    c = parse_text(SMALL.format(mode="macro").replace("a = 0.05", "a = 0.04"))
    assert a.hash == b.hash and a.hash != c.hash
    assert a.kernel_key() == b.with_mode("kernel").kernel_key()
    assert a.kernel_key() != c.kernel_key()


def test_cli_macro_builds_missing_kernel_and_logs(tmp_path, capsys):
    out = tmp_path / "out"
    rc = main(["--scenario", write(tmp_path, SMALL.format(mode="macro")), "--output-dir", str(out),
               "--emit-vtk", "true"])
    assert rc == 0
    assert "mass-balance" in capsys.readouterr().out
    log = (out / "run.log").read_text()
    assert "cache miss" in log and "finished" in log
    for name in ("macro_pressure.csv", "macro_velocity.csv", "mass_balance.csv", "macro_0002.vtk"):
        assert (out / name).exists()
    # second run reuses the cache
    assert main(["--scenario", str(tmp_path / "s.toml"), "--output-dir", str(out)]) == 0
    assert "loaded from cache" in (out / "run.log").read_text()


def test_cli_kernel_mode_and_env_cache(tmp_path, monkeypatch):
    cache = tmp_path / "envcache"
    monkeypatch.setenv("MEMDARCY_CACHE_DIR", str(cache))
    out = tmp_path / "out"
    rc = main(["--scenario", write(tmp_path, SMALL.format(mode="macro")), "--mode", "kernel",
               "--output-dir", str(out)])
    assert rc == 0
    assert len(os.listdir(cache)) == 1
    sc = parse_scenario(tmp_path / "s.toml")
    meta, _, _ = read_table(out / "kernel.csv", {"scenario": sc.hash})
    assert (out / "cell_mesh").is_dir()


def test_cli_refuses_foreign_cache_and_rebuilds(tmp_path):
    cache = tmp_path / "cache"
    path = write(tmp_path, SMALL.format(mode="kernel"))
    assert main(["--scenario", path, "--output-dir", str(tmp_path / "a"), "--cache-dir", str(cache)]) == 0
    key = parse_scenario(path).kernel_key()
    # overwrite the cached kernel with one written for another scenario
    other = write(tmp_path, SMALL.format(mode="kernel").replace("a = 0.05", "a = 0.04"), "o.toml")
    assert main(["--scenario", other, "--output-dir", str(tmp_path / "b")]) == 0
    for name in os.listdir(tmp_path / "b"):
        if name.endswith(".csv") and name.startswith("kernel"):
            (cache / key / name).write_bytes((tmp_path / "b" / name).read_bytes())
    assert main(["--scenario", path, "--output-dir", str(tmp_path / "c"), "--cache-dir", str(cache)]) == 0
    log = (tmp_path / "c" / "run.log").read_text()
    assert "discarding corrupt kernel cache" in log
    assert (tmp_path / "a" / "kernel.csv").read_bytes() == (tmp_path / "c" / "kernel.csv").read_bytes()


def test_cli_exit_codes(tmp_path):
    bad = write(tmp_path, "[geometry]\nr0 = 0.6\n", "bad.toml")
    assert main(["--scenario", bad, "--output-dir", str(tmp_path / "o1")]) == 3
    assert "geometry.r0" in (tmp_path / "o1" / "run.log").read_text()
    tight = write(tmp_path, SMALL.format(mode="macro") + "[tolerances]\nlinear = 1e-30\n", "t.toml")
    assert main(["--scenario", tight, "--output-dir", str(tmp_path / "o2")]) == 2
    assert "SolverBreakdown" in (tmp_path / "o2" / "run.log").read_text()
    assert main(["--scenario", str(tmp_path / "missing.toml"), "--output-dir", str(tmp_path / "o3")]) == 1


def test_cli_resource_guard(tmp_path):
    path = write(tmp_path, SMALL.format(mode="diagnostics"))
    assert main(["--scenario", path, "--output-dir", str(tmp_path / "o"), "--max-dofs", "10"]) == 2
