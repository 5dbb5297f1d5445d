import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from fos.pipeline import (ConfigError, PipelineConfig, emit_covariation,
                          emit_mode_visualization, run_pipeline, STAGES)


def tiny_config(out_dir):
    return PipelineConfig.from_dict({
        "output_dir": str(out_dir),
        "seed": 0,
        "simulate": {"n": 4, "subdivisions": 1, "observation_subdivisions": 1},
        "register_geo": {"max_iterations": 4},
        "register_fun": {"max_iterations": 2},
        "fpca_geo": {"n_components": 3},
        "fpca_fun": {"n_components": 3, "lam": 0.0},
        "cca": {},
    })


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipe") / "out"
    cfg = tiny_config(out)
    manifest = run_pipeline(cfg)
    return cfg, out, manifest


def test_config_rejects_negative_lambda():
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"fpca_fun": {"lam": -1.0}}).validate()


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"no_such_block": {}})


def test_config_rejects_bad_stage_order():
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"stages": ["cca", "simulate"]}).validate()
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"stages": ["not-a-stage"]}).validate()


def test_parameter_hash_tracks_content():
    a = PipelineConfig.from_dict({"seed": 0})
    b = PipelineConfig.from_dict({"seed": 0})
    c = PipelineConfig.from_dict({"seed": 1})
    assert a.parameter_hash() == b.parameter_hash()
    assert a.parameter_hash() != c.parameter_hash()


def test_manifest_structure(finished_run):
    _, out, manifest = finished_run
    assert set(manifest["stages"]) == set(STAGES)
    assert "parameter_hash" in manifest
    for st in STAGES:
        entry = manifest["stages"][st]
        assert entry["wall_time_s"] >= 0.0
        assert Path(entry["artifact_dir"]).is_dir()
    on_disk = json.loads((out / "manifest.json").read_text())
    assert set(on_disk["stages"]) == set(STAGES)


def test_artifacts_exist(finished_run):
    _, out, _ = finished_run
    assert (out / "sim" / "template.off").exists()
    for i in range(4):
        assert (out / "sim" / f"subject_{i:03d}.off").exists()
        assert (out / "reg_geo" / f"momenta_{i:03d}.csv").exists()
        assert (out / "reg_fun" / f"aligned_{i:03d}.csv").exists()
    assert (out / "fpca_geo" / "scores.csv").exists()
    assert (out / "fpca_fun" / "scores.csv").exists()
    cca_summary = json.loads((out / "cca" / "bartlett.json").read_text())
    assert "p_values" in cca_summary


def _digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def test_suffix_resume_is_bit_identical(finished_run):
    cfg, out, _ = finished_run
    watched = [out / "fpca_geo" / "scores.csv",
               out / "fpca_fun" / "scores.csv",
               out / "cca" / "correlations.csv"]
    before = [_digest(p) for p in watched]
    run_pipeline(cfg, ("fpca-geo", "fpca-fun", "cca"))
    after = [_digest(p) for p in watched]
    assert before == after


def test_full_rerun_is_deterministic(finished_run, tmp_path):
    _, out, _ = finished_run
    other = tmp_path / "out2"
    run_pipeline(tiny_config(other))
    for rel in ("sim/true_scores.csv", "reg_geo/momenta_000.csv",
                "fpca_fun/scores.csv", "cca/correlations.csv"):
        assert _digest(out / rel) == _digest(other / rel)


def test_emit_covariation_and_viz(finished_run):
    _, out, _ = finished_run
    path = emit_covariation(out, pair=0, t_values=[-1.0, 0.0, 1.0])
    table = np.loadtxt(path, delimiter=",", skiprows=1)
    assert table.shape[0] == 3
    files = emit_mode_visualization(out, mode=0, c_grid=[-1.0, 0.0, 1.0])
    assert len(files) == 6
    for f in files:
        assert Path(f).exists()
    with pytest.raises(ConfigError):
        emit_mode_visualization(out, mode=99)


def test_stage_failure_raises_runtime_error(tmp_path):
    cfg = tiny_config(tmp_path / "x")
    # register-geo without its simulate inputs must fail as a stage error
    with pytest.raises(RuntimeError):
        run_pipeline(cfg, ("register-geo",))
