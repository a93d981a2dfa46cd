import json
import subprocess
import sys

import numpy as np
import pytest

from viewfusion import cli
from viewfusion.config import DEFAULTS, ConfigError, load_config, parse_config
from viewfusion.numerics import read_pnm, write_pnm
from viewfusion.toyworld import ToyWorld
from viewfusion.conditioning import PoseOffset


def write_cfg(path, obj):
    path.write_text(json.dumps(obj, indent=2))
    return str(path)


def base(tmp_path, **kw):
    d = {"schema_version": 1, "output_dir": str(tmp_path / "out"),
         "sampler": {"n_steps": 10}}
    d.update(kw)
    return d


def test_defaults_fill_and_roundtrip(tmp_path):
    cfg = load_config(write_cfg(tmp_path / "c.json", {"schema_version": 1}))
    eff = cfg.effective()
    assert eff["weights"] == {"tau_c": 0.5, "tau_g": 1.0}
    assert eff["sampler"]["guidance_scale"] == 3.0
    again = load_config(write_cfg(tmp_path / "d.json", eff))
    assert again.dumps() == cfg.dumps()


def test_seed_sweep_expansion():
    cfg = parse_config({"schema_version": 1, "seeds": {"start": 5, "count": 3}})
    assert cfg["seeds"] == [5, 6, 7]
    assert parse_config({"schema_version": 1, "seeds": 4})["seeds"] == [4]
    assert cfg.with_overrides(seed=9)["seeds"] == [9]


@pytest.mark.parametrize("obj,field", [
    ({"schema_version": 2}, "schema_version"),
    ({"schema_version": 1, "weights": {"tau_c": 0}}, "weights.tau_c"),
    ({"schema_version": 1, "weights": {"tau_g": -1}}, "weights.tau_g"),
    ({"schema_version": 1, "sampler": {"variant": "x"}}, "sampler.variant"),
    ({"schema_version": 1, "sampler": {"eta": 2}}, "sampler.eta"),
    ({"schema_version": 1, "trajectory": {"n_views": 7}}, "trajectory.n_views"),
    ({"schema_version": 1, "trajectory": {"mode": "single-target"}}, "trajectory.target"),
    ({"schema_version": 1, "conditions": []}, "conditions"),
    ({"schema_version": 1, "conditions": [{"mode": 3}]}, "conditions.0.mode"),
    ({"schema_version": 1, "seeds": []}, "seeds"),
    ({"schema_version": 1, "world": {"prior": [0.5, 0.6]}}, "world.prior"),
    ({"schema_version": 1, "bogus": 1}, "bogus"),
    ({"schema_version": 1, "world": {"colour": 1}}, "world.colour"),
])
def test_validation_names_field(obj, field):
    with pytest.raises(ConfigError) as e:
        parse_config(obj)
    assert e.value.field == field
    assert field in str(e.value)


def test_errors_are_line_anchored(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "schema_version": 1,\n  "weights": {\n    "tau_c": -0.5\n  }\n}\n')
    with pytest.raises(ConfigError) as e:
        load_config(p)
    assert e.value.line == 4 and f"{p}:4" in str(e.value)
    p.write_text('{\n  "schema_version": 1,\n  "seeds": [1,\n}\n')
    with pytest.raises(ConfigError) as e:
        load_config(p)
    assert e.value.line == 4
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_generate_spin_writes_artifacts(tmp_path, capsys):
    path = write_cfg(tmp_path / "c.json", base(tmp_path, seeds=[2]))
    assert cli.main(["generate", "--config", path]) == 0
    out = tmp_path / "out"
    frames = sorted(out.glob("frame_*.pgm"))
    assert len(frames) == 15
    assert frames[0].name == "frame_000.pgm" and frames[-1].name == "frame_014.pgm"
    for name in ("trace.json", "consistency.json", "consistency.csv", "config.json",
                 "timings.json", "frames.png"):
        assert (out / name).exists(), name
    trace = json.loads((out / "trace.json").read_text())
    assert trace["n_frames"] == 15 and len(trace["frame_files"]) == 15
    assert all(abs(s["weight_sum"] - 1) < 1e-12 for s in trace["stages"])
    rep = json.loads((out / "consistency.json").read_text())
    assert len(rep["pairs"]) == 15 and rep["cyclic"]
    eff = json.loads((out / "config.json").read_text())
    assert eff["seeds"] == [2] and eff == load_config(out / "config.json").effective()
    assert json.loads(capsys.readouterr().out.strip())["n_frames"] == 15


def test_generate_twice_byte_identical(tmp_path):
    for tag in ("a", "b"):
        cfg = base(tmp_path, seeds=[4], output_dir=str(tmp_path / tag))
        assert cli.cmd_generate(write_cfg(tmp_path / f"{tag}.json", cfg)) == 0
    for f in sorted((tmp_path / "a").glob("frame_*.pgm")) + [tmp_path / "a" / "trace.json",
                                                             tmp_path / "a" / "consistency.json"]:
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name


def test_generate_seed_sweep_parallel_matches_serial(tmp_path):
    cfg = base(tmp_path, seeds={"start": 0, "count": 2},
               trajectory={"mode": "spin", "delta_deg": 90, "n_views": 4})
    p = write_cfg(tmp_path / "c.json", cfg)
    assert cli.cmd_generate(p, out=str(tmp_path / "s"), jobs=1) == 0
    assert cli.cmd_generate(p, out=str(tmp_path / "p"), jobs=2) == 0
    for seed in (0, 1):
        a = (tmp_path / "s" / f"seed_{seed}" / "trace.json").read_bytes()
        assert a == (tmp_path / "p" / f"seed_{seed}" / "trace.json").read_bytes()


def test_generate_bad_config_exit_2(tmp_path, capsys):
    p = write_cfg(tmp_path / "c.json", {"schema_version": 1, "weights": {"tau_c": 0}})
    assert cli.main(["generate", "--config", p]) == 2
    assert "weights.tau_c" in capsys.readouterr().err


def test_generate_runtime_failure_exit_1(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    p = write_cfg(tmp_path / "c.json", base(tmp_path, output_dir=str(blocker / "sub"),
                                            trajectory={"mode": "spin", "delta_deg": 90, "n_views": 4}))
    assert cli.cmd_generate(p) == 1


def test_single_target_with_file_condition(tmp_path):
    w = ToyWorld()
    write_pnm(tmp_path / "cond.pgm", w.render(2, PoseOffset.from_degrees(90)))
    cfg = base(tmp_path, conditions=[{"path": "cond.pgm", "pose": {"azimuth_deg": 90}}],
               trajectory={"mode": "single-target", "delta_deg": 10,
                           "target": {"azimuth_deg": 130}})
    assert cli.cmd_generate(write_cfg(tmp_path / "c.json", cfg)) == 0
    trace = json.loads((tmp_path / "out" / "trace.json").read_text())
    assert trace["n_frames"] == 4 and trace["trajectory"]["mode"] == "single-target"
    rep = json.loads((tmp_path / "out" / "consistency.json").read_text())
    assert len(rep["pairs"]) == 3 and not rep["cyclic"]


def test_file_condition_errors(tmp_path):
    cfg = base(tmp_path, conditions=[{"path": "nope.pgm"}])
    assert cli.cmd_generate(write_cfg(tmp_path / "c.json", cfg)) == 2
    write_pnm(tmp_path / "small.pgm", np.zeros((4, 4, 1)))
    cfg = base(tmp_path, conditions=[{"path": "small.pgm"}])
    assert cli.cmd_generate(write_cfg(tmp_path / "c.json", cfg)) == 2


def test_compare_table_and_warning(tmp_path, capsys):
    cfg = base(tmp_path, seeds=[0], variants=["direct", "interpolated-denoising"],
               trajectory={"mode": "spin", "delta_deg": 90, "n_views": 4})
    assert cli.cmd_compare(write_cfg(tmp_path / "c.json", cfg)) == 0
    table = json.loads((tmp_path / "out" / "compare.json").read_text())
    assert [r["variant"] for r in table["rows"]] == ["direct", "interpolated-denoising"]
    assert "warning" in table
    text = (tmp_path / "out" / "compare.txt").read_text()
    assert "warning" in text and "interpolated-denoising" in capsys.readouterr().out
    assert (tmp_path / "out" / "compare.png").exists() and (tmp_path / "out" / "runs.csv").exists()


def test_compare_needs_two_variants(tmp_path):
    cfg = base(tmp_path, variants=["direct"])
    assert cli.cmd_compare(write_cfg(tmp_path / "c.json", cfg)) == 2
    assert cli.cmd_compare(write_cfg(tmp_path / "d.json", base(tmp_path))) == 2


def test_slices(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    assert cli.cmd_slices(str(empty)) == 2
    assert cli.cmd_slices(str(tmp_path / "missing")) == 2
    cfg = base(tmp_path, trajectory={"mode": "spin", "delta_deg": 90, "n_views": 4})
    cli.cmd_generate(write_cfg(tmp_path / "c.json", cfg))
    out = tmp_path / "out"
    assert cli.cmd_slices(str(out), 5) == 0
    sl = read_pnm(out / "slice_005.pgm")
    assert sl.shape == (3, 16, 1)
    # Spin frames are stacked in azimuth order: -90, 90, 180 are stages 1, 0, 2.
    assert np.allclose(sl[0], read_pnm(out / "frame_001.pgm")[5])
    assert cli.cmd_slices(str(out), 99) == 2


def test_validate_config(tmp_path, capsys):
    p = write_cfg(tmp_path / "c.json", {"schema_version": 1})
    assert cli.main(["validate-config", "--config", p]) == 0
    assert json.loads(capsys.readouterr().out)["trajectory"] == DEFAULTS["trajectory"]


def test_log_env_and_usage(tmp_path, monkeypatch):
    p = write_cfg(tmp_path / "c.json", {"schema_version": 1})
    monkeypatch.setenv("VIEWFUSION_LOG", "loud")
    assert cli.main(["validate-config", "--config", p]) == 2
    monkeypatch.setenv("VIEWFUSION_LOG", "debug")
    assert cli.main(["validate-config", "--config", p]) == 0
    with pytest.raises(SystemExit) as e:
        cli.main(["frobnicate"])
    assert e.value.code == 2
    assert cli.main(["generate", "--config", p, "--jobs", "0"]) == 2


def test_module_entry_point(tmp_path):
    p = write_cfg(tmp_path / "c.json", {"schema_version": 1})
    r = subprocess.run([sys.executable, "-m", "viewfusion", "validate-config", "--config", p],
                       capture_output=True, text=True)
    assert r.returncode == 0 and '"schema_version": 1' in r.stdout
