import json

import numpy as np
import pytest

from qixai import fixture, pipeline
from qixai.tensor import read_archive, write_archive


@pytest.fixture(scope="module")
def fixture_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("fixture")
    return fixture.write_fixture(root), root


def run(fixture_files, out_name, **overrides):
    paths, root = fixture_files
    config = pipeline.load_config(paths["config"])
    config.output_dir = str(root / out_name)
    for key, value in overrides.items():
        setattr(config, key, value)
    report = pipeline.run_analysis(config)
    pipeline.write_report(report, config.output_dir)
    return config, report


def test_structural_counts(fixture_files):
    _, report = run(fixture_files, "structural")
    doc = report.document
    assert len(doc["similarity"]["pairs"]) == 3
    assert isinstance(doc["mutual_information"]["mi_nats"], float)
    assert len(doc["mutual_information"]["top_pairs"]) == 10
    assert len(doc["explained_variance"]["tables"]) == 2
    assert len(doc["attributions"]["samples"]) == 3
    for sample in doc["attributions"]["samples"]:
        assert sample["steps"] == 100
        assert sample["sub_batch"] == 10


def test_determinism_byte_identical(fixture_files):
    from pathlib import Path

    config, _ = run(fixture_files, "det")
    out = Path(config.output_dir)
    files = ["report.json", "artifacts.qixt", "spectrum.csv"] + sorted(
        str(p.relative_to(out)) for p in (out / "heatmaps").iterdir()
    )
    first = {name: (out / name).read_bytes() for name in files}
    run(fixture_files, "det")  # identical config, same output dir
    for name in files:
        assert (out / name).read_bytes() == first[name], name


def test_ig_disabled_leaves_rest_unchanged(fixture_files):
    _, full = run(fixture_files, "with_ig")
    config, without = run(fixture_files, "without_ig")
    config.ig.enabled = False
    without = pipeline.run_analysis(config)
    assert "attributions" not in without.document
    for key in ("similarity", "mutual_information", "explained_variance", "spectrum", "layers"):
        assert without.document[key] == full.document[key]


def test_single_sample_batch_errors_in_reduce(fixture_files, tmp_path):
    paths, _ = fixture_files
    config = pipeline.load_config(paths["config"])
    batch_path = tmp_path / "single.qixt"
    write_archive({"images": fixture.fixture_batch(1)}, batch_path)
    config.batch_archive = str(batch_path)
    config.output_dir = str(tmp_path / "out")
    with pytest.raises(pipeline.StageError, match="n >= 2") as exc:
        pipeline.run_analysis(config)
    assert exc.value.stage == "reduce.pca"


def test_report_roundtrip_reproduces_scalars(fixture_files):
    config, report = run(fixture_files, "roundtrip")
    doc, _ = pipeline.read_report(config.output_dir)
    assert doc == json.loads(json.dumps(report.document))


def test_audit_zero_mismatches(fixture_files):
    config, _ = run(fixture_files, "audit")
    assert pipeline.audit_report(config.output_dir) == []


def test_audit_detects_tampering(fixture_files):
    from pathlib import Path

    config, _ = run(fixture_files, "tamper")
    path = Path(config.output_dir) / "report.json"
    doc = json.loads(path.read_text())
    doc["mutual_information"]["mi_nats"] += 0.5
    path.write_text(json.dumps(doc))
    assert any("layer MI" in p for p in pipeline.audit_report(config.output_dir))


def test_artifacts_referenced_by_report_exist(fixture_files):
    config, report = run(fixture_files, "refs")
    artifacts = read_archive(config.output_dir + "/artifacts.qixt")
    doc = report.document
    for pair in doc["similarity"]["pairs"]:
        assert pair["matrix_entry"] in artifacts
    assert doc["mutual_information"]["matrix_entry"] in artifacts
    assert doc["spectrum"]["singular_values_entry"] in artifacts
    for table in doc["explained_variance"]["tables"]:
        assert table["singular_values_entry"] in artifacts
    for sample in doc["attributions"]["samples"]:
        assert sample["attribution_entry"] in artifacts
        assert sample["input_entry"] in artifacts
        assert sample["baseline_entry"] in artifacts


def test_unwritable_dir_leaves_no_partial_files(fixture_files, tmp_path):
    import os

    if os.geteuid() == 0:
        pytest.skip("permission bits do not bind as root")
    paths, _ = fixture_files
    config = pipeline.load_config(paths["config"])
    report = pipeline.run_analysis(config)
    target = tmp_path / "ro"
    target.mkdir()
    target.chmod(0o500)
    with pytest.raises(OSError):
        pipeline.write_report(report, target)
    assert list(target.iterdir()) == []


def test_missing_weights_error_names_stage(fixture_files, tmp_path):
    paths, _ = fixture_files
    config = pipeline.load_config(paths["config"])
    config.weights = str(tmp_path / "nope.qixt")
    with pytest.raises(pipeline.StageError) as exc:
        pipeline.run_analysis(config)
    assert exc.value.stage == "load"


def test_config_validation():
    with pytest.raises(ValueError, match="similarity_space"):
        pipeline._validate_config(
            pipeline.RunConfig(
                model_spec="m", weights="w", batch_archive="b",
                similarity_space="bogus",
            )
        )


def test_unknown_config_key(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"model_spec": "m", "weights": "w",
                                "batch": {"archive": "b"}, "zap": 1}))
    with pytest.raises(ValueError, match="zap"):
        pipeline.load_config(path)


def test_default_config_values():
    config = pipeline.RunConfig(model_spec="m", weights="w", batch_archive="b")
    assert config.pca_components == 32
    assert config.mi_bins == 20
    assert config.ig.steps == 100
    assert config.ig.sub_batch == 10
