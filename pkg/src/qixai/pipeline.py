"""End-to-end analysis: forward capture -> pooling -> PCA -> similarity,
mutual information, spectrum, and Integrated Gradients -> report.

A run produces, inside its output directory:

    report.json      all scalar results, stable key order (diffable)
    artifacts.qixt   tensor archive with matrices backing every scalar
    spectrum.csv     singular-value spectrum as a delimited table
    heatmaps/*.png   rendered similarity / MI / attribution heatmaps

``audit_report`` recomputes every scalar in report.json from the artifact
archive and returns the mismatches (empty list = self-consistent).
"""

from __future__ import annotations

import json
import math
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, attribution, decomp, infotheory, reduce, similarity
from .model import Model, forward, load_model, logit_of
from .render import render_heatmap
from .tensor import read_archive, write_archive

SIMILARITY_SPACES = ("pca", "pooled")


class StageError(Exception):
    """An analysis stage failed; carries the stage name and the cause."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class IgConfig:
    enabled: bool = True
    steps: int = 100
    sub_batch: int = 10
    baseline: object = "zeros"  # "zeros" or {"archive": path, "entry": name}
    samples: tuple[int, ...] = (0, 1, 2)
    output_index: int = 0


@dataclass
class RunConfig:
    """Analysis run configuration; defaults follow the standard pipeline
    (32 PCA components, 20 MI bins, 100 IG steps in sub-batches of 10)."""

    model_spec: str
    weights: str
    batch_archive: str
    batch_entry: str = "images"
    layers: dict = field(
        default_factory=lambda: {"conv1": None, "conv2": None, "dense": None}
    )
    pca_components: int = 32
    center_pca: bool = True
    truncate_channels: int | None = None
    similarity_space: str = "pca"
    mi_bins: int = 20
    mi_top_k: int = 10
    ig: IgConfig = field(default_factory=IgConfig)
    output_dir: str = "analysis"
    variance_mode: str = "both"


def load_config(path) -> RunConfig:
    """Parse a JSON run-config file (schema in docs/run-config.md)."""
    with open(path) as fh:
        raw = json.load(fh)
    known = {
        "model_spec", "weights", "batch", "layers", "pca_components",
        "center_pca", "truncate_channels", "similarity_space", "mi_bins",
        "mi_top_k", "ig", "output_dir", "variance_mode",
    }
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    for key in ("model_spec", "weights", "batch"):
        if key not in raw:
            raise ValueError(f"config missing required key {key!r}")
    batch = raw["batch"]
    ig_raw = raw.get("ig", {})
    ig = IgConfig(
        enabled=bool(ig_raw.get("enabled", True)),
        steps=int(ig_raw.get("steps", 100)),
        sub_batch=int(ig_raw.get("sub_batch", 10)),
        baseline=ig_raw.get("baseline", "zeros"),
        samples=tuple(int(i) for i in ig_raw.get("samples", [0, 1, 2])),
        output_index=int(ig_raw.get("output_index", 0)),
    )
    config = RunConfig(
        model_spec=str(raw["model_spec"]),
        weights=str(raw["weights"]),
        batch_archive=str(batch["archive"]),
        batch_entry=str(batch.get("entry", "images")),
        layers=dict(raw.get("layers") or {"conv1": None, "conv2": None, "dense": None}),
        pca_components=int(raw.get("pca_components", 32)),
        center_pca=bool(raw.get("center_pca", True)),
        truncate_channels=(
            None if raw.get("truncate_channels") is None
            else int(raw["truncate_channels"])
        ),
        similarity_space=str(raw.get("similarity_space", "pca")),
        mi_bins=int(raw.get("mi_bins", 20)),
        mi_top_k=int(raw.get("mi_top_k", 10)),
        ig=ig,
        output_dir=str(raw.get("output_dir", "analysis")),
        variance_mode=str(raw.get("variance_mode", "both")),
    )
    _validate_config(config)
    return config


def _validate_config(config: RunConfig) -> None:
    for name, value in (
        ("model_spec", config.model_spec),
        ("weights", config.weights),
        ("batch archive", config.batch_archive),
    ):
        if not value:
            raise ValueError(f"config {name} path must be nonempty")
    if config.similarity_space not in SIMILARITY_SPACES:
        raise ValueError(
            f"similarity_space must be one of {SIMILARITY_SPACES}, "
            f"got {config.similarity_space!r}"
        )
    if config.variance_mode not in ("both",) + reduce.VARIANCE_MODES:
        raise ValueError(f"bad variance_mode {config.variance_mode!r}")
    if config.pca_components < 1:
        raise ValueError("pca_components must be >= 1")
    if config.mi_bins < 2:
        raise ValueError("mi_bins must be >= 2")
    if config.mi_top_k < 1:
        raise ValueError("mi_top_k must be >= 1")


def config_echo(config: RunConfig) -> dict:
    """Config as a JSON-ready dict for embedding into the report."""
    return {
        "model_spec": config.model_spec,
        "weights": config.weights,
        "batch": {"archive": config.batch_archive, "entry": config.batch_entry},
        "layers": dict(config.layers),
        "pca_components": config.pca_components,
        "center_pca": config.center_pca,
        "truncate_channels": config.truncate_channels,
        "similarity_space": config.similarity_space,
        "mi_bins": config.mi_bins,
        "mi_top_k": config.mi_top_k,
        "ig": {
            "enabled": config.ig.enabled,
            "steps": config.ig.steps,
            "sub_batch": config.ig.sub_batch,
            "baseline": config.ig.baseline,
            "samples": list(config.ig.samples),
            "output_index": config.ig.output_index,
        },
        "output_dir": config.output_dir,
        "variance_mode": config.variance_mode,
    }


@dataclass
class AnalysisReport:
    """Report document (JSON-ready dict), artifact tensors, and the
    heatmaps to render: file name -> (matrix, colormap)."""

    document: dict
    artifacts: dict[str, np.ndarray]
    heatmaps: dict[str, tuple[np.ndarray, str]]


def _stage(name: str):
    class _Guard:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, StageError):
                raise StageError(name, exc) from exc
            return False

    return _Guard()


def _resolve_layers(model: Model, requested: dict) -> dict[str, str]:
    """Fill unset roles with the first conv, second conv, and first dense
    layer of the model."""
    convs = [l.name for l in model.layers if l.kind == "conv2d"]
    denses = [l.name for l in model.layers if l.kind == "dense"]
    defaults = {
        "conv1": convs[0] if convs else None,
        "conv2": convs[1] if len(convs) > 1 else None,
        "dense": denses[0] if denses else None,
    }
    resolved: dict[str, str] = {}
    layer_names = {l.name for l in model.layers}
    for role in ("conv1", "conv2", "dense"):
        name = requested.get(role) or defaults[role]
        if name is None:
            raise ValueError(f"no layer available for role {role!r}")
        if name not in layer_names:
            raise ValueError(f"layer {name!r} (role {role}) not in model")
        resolved[role] = name
    return resolved


def run_analysis(config: RunConfig) -> AnalysisReport:
    """Execute every analysis stage; deterministic for identical inputs."""
    _validate_config(config)
    artifacts: dict[str, np.ndarray] = {}
    heatmaps: dict[str, tuple[np.ndarray, str]] = {}
    doc: dict = {"toolkit_version": __version__, "config": config_echo(config)}

    with _stage("load"):
        with open(config.model_spec) as fh:
            model = load_model(fh.read(), config.weights)
        batch_entries = read_archive(config.batch_archive)
        if config.batch_entry not in batch_entries:
            raise ValueError(
                f"entry {config.batch_entry!r} not in {config.batch_archive} "
                f"(available: {sorted(batch_entries)})"
            )
        batch = batch_entries[config.batch_entry]
        roles = _resolve_layers(model, config.layers)
    doc["layers"] = roles

    with _stage("forward"):
        _, activations = forward(model, batch)

    with _stage("pool"):
        features: dict[str, np.ndarray] = {}
        gap_features: dict[str, np.ndarray] = {}
        for role in ("conv1", "conv2", "dense"):
            act = activations[roles[role]]
            pooled = reduce.global_average_pool(act) if act.ndim == 4 else act
            gap_features[role] = pooled
            # Mirror numpy [:, :k] slicing: layers already at or below the
            # requested width pass through unchanged.
            if (
                config.truncate_channels is not None
                and pooled.shape[1] > config.truncate_channels
            ):
                pooled = reduce.truncate_channels(pooled, config.truncate_channels)
            features[role] = pooled
            artifacts[f"pooled.{role}"] = pooled
        artifacts["gap.conv1"] = gap_features["conv1"]
        artifacts["gap.conv2"] = gap_features["conv2"]

    with _stage("reduce.pca"):
        reduced: dict[str, np.ndarray] = {}
        pca_models: dict[str, reduce.PcaModel] = {}
        for role, matrix in features.items():
            n, d = matrix.shape
            if config.pca_components > min(n, d):
                raise ValueError(
                    f"PCA requires n >= 2 and n_components <= min(n, d); layer "
                    f"{roles[role]!r} has {d} features and {n} samples but "
                    f"pca_components={config.pca_components}; lower pca_components"
                    if n >= 2
                    else f"PCA requires n >= 2 samples, got {n}"
                )
            pca_models[role] = reduce.fit_pca(
                matrix, config.pca_components, center=config.center_pca
            )
            reduced[role] = reduce.transform_pca(pca_models[role], matrix)
            artifacts[f"pca.{role}.reduced"] = reduced[role]
            artifacts[f"pca.{role}.singular_values"] = pca_models[role].singular_values

    with _stage("similarity"):
        space = reduced if config.similarity_space == "pca" else features
        pairs_doc = []
        for role_a, role_b in (("conv1", "conv2"), ("conv1", "dense"), ("conv2", "dense")):
            A, B = space[role_a], space[role_b]
            if A.shape[1] != B.shape[1]:
                raise ValueError(
                    f"{role_a}/{role_b} feature widths differ "
                    f"({A.shape[1]} vs {B.shape[1]}); use similarity_space='pca' "
                    "or the truncate_channels flag"
                )
            entry = f"similarity.{role_a}_{role_b}"
            matrix = similarity.cosine_similarity_matrix(A, B)
            artifacts[entry] = matrix
            summary = similarity.layer_similarity_summary(
                A, B, layer_pair=(roles[role_a], roles[role_b]), matrix_entry=entry
            )
            heatmaps[f"similarity_{role_a}_{role_b}.png"] = (matrix, "diverging")
            pairs_doc.append(
                {
                    "layer_a": roles[role_a],
                    "layer_b": roles[role_b],
                    "matrix_mean": summary.matrix_mean,
                    "diagonal_mean": summary.diagonal_mean,
                    "min": summary.min,
                    "max": summary.max,
                    "matrix_entry": entry,
                    "zero_norm_rows": summary.zero_norm_rows,
                    "mean_inner_product": similarity.mean_inner_product(A, B),
                }
            )
        doc["similarity"] = {"space": config.similarity_space, "pairs": pairs_doc}

    with _stage("mutual_information"):
        pooled_a = features["conv1"]
        pooled_b = features["conv2"]
        common = min(pooled_a.shape[1], pooled_b.shape[1])
        mi_scalar = infotheory.layer_mi(
            reduce.truncate_channels(pooled_a, common),
            reduce.truncate_channels(pooled_b, common),
            n_bins=config.mi_bins,
        )
        gap_a = gap_features["conv1"]
        gap_b = gap_features["conv2"]
        mi_matrix = np.empty((gap_a.shape[1], gap_b.shape[1]))
        dig_a = [infotheory.digitize(col, config.mi_bins) for col in gap_a.T]
        dig_b = [infotheory.digitize(col, config.mi_bins) for col in gap_b.T]
        for i, da in enumerate(dig_a):
            for j, db in enumerate(dig_b):
                mi_matrix[i, j] = infotheory.mutual_information(da, db)
        artifacts["mi.pairwise"] = mi_matrix
        heatmaps["mi_pairwise.png"] = (mi_matrix, "gray")
        top_pairs = infotheory.pairwise_feature_map_mi(
            activations[roles["conv1"]],
            activations[roles["conv2"]],
            n_bins=config.mi_bins,
            top_k=config.mi_top_k,
            layer_names=(roles["conv1"], roles["conv2"]),
        )
        doc["mutual_information"] = {
            "bins": config.mi_bins,
            "layers": [roles["conv1"], roles["conv2"]],
            "channels_used": common,
            "mi_nats": mi_scalar,
            "matrix_entry": "mi.pairwise",
            "top_pairs": [
                {
                    "map_a": [p.map_a[0], p.map_a[1]],
                    "map_b": [p.map_b[0], p.map_b[1]],
                    "mi_nats": p.mi_nats,
                }
                for p in top_pairs
            ],
        }

    with _stage("spectrum"):
        dense_acts = activations[roles["dense"]]
        spec_result, cumulative = decomp.dense_layer_spectrum(dense_acts)
        artifacts["spectrum.singular_values"] = spec_result.S
        artifacts["dense.activations"] = dense_acts
        doc["spectrum"] = {
            "layer": roles["dense"],
            "singular_values_entry": "spectrum.singular_values",
            "singular_values": [float(s) for s in spec_result.S],
            "cumulative_singular_mass": [float(c) for c in cumulative],
        }

    with _stage("explained_variance"):
        n, d = dense_acts.shape
        dense_pca = reduce.fit_pca(dense_acts, min(n, d), center=config.center_pca)
        artifacts["explained_variance.pca_singular_values"] = dense_pca.singular_values
        tables = []
        modes = (
            reduce.VARIANCE_MODES
            if config.variance_mode == "both"
            else (config.variance_mode,)
        )
        for mode in modes:
            values = (
                dense_pca.singular_values
                if mode == "variance_ratio"
                else spec_result.S
            )
            entry = (
                "explained_variance.pca_singular_values"
                if mode == "variance_ratio"
                else "spectrum.singular_values"
            )
            ratios, cum = reduce.explained_variance(values, mode=mode)
            tables.append(
                {
                    "mode": mode,
                    "singular_values_entry": entry,
                    "ratios": [float(r) for r in ratios],
                    "cumulative": [float(c) for c in cum],
                }
            )
        doc["explained_variance"] = {"layer": roles["dense"], "tables": tables}

    if config.ig.enabled:
        with _stage("integrated_gradients"):
            target = logit_of(model) if model.layers[-1].kind == "sigmoid" else model
            if config.ig.baseline == "zeros":
                baseline = np.zeros(model.input_shape)
                baseline_ref = "zeros"
            else:
                base_entries = read_archive(config.ig.baseline["archive"])
                baseline = base_entries[config.ig.baseline["entry"]]
                baseline_ref = config.ig.baseline["entry"]
            samples_doc = []
            for idx in config.ig.samples:
                if idx < 0 or idx >= batch.shape[0]:
                    raise ValueError(
                        f"IG sample index {idx} out of range for batch of "
                        f"{batch.shape[0]}"
                    )
                input_entry = f"ig.sample{idx}.input"
                attr_entry = f"ig.sample{idx}.attributions"
                amap = attribution.integrated_gradients(
                    target,
                    batch[idx],
                    baseline,
                    steps=config.ig.steps,
                    sub_batch=config.ig.sub_batch,
                    output_index=config.ig.output_index,
                    input_ref=input_entry,
                    baseline_ref="ig.baseline",
                )
                summary = attribution.attribution_summary(amap, top_k=5)
                artifacts[input_entry] = batch[idx].copy()
                artifacts[attr_entry] = amap.attributions
                heatmap_file = f"ig_sample{idx}.png"
                if amap.attributions.ndim == 3:
                    view = attribution.AttributionMap(
                        attributions=amap.attributions[None, ...],
                        input_ref=amap.input_ref,
                        baseline_ref=amap.baseline_ref,
                        steps=amap.steps,
                        output_index=amap.output_index,
                        completeness_gap=amap.completeness_gap,
                        f_input=amap.f_input,
                        f_baseline=amap.f_baseline,
                    )
                    heatmaps[heatmap_file] = (
                        attribution.attribution_to_heatmap(view),
                        "gray",
                    )
                else:
                    heatmap_file = None
                samples_doc.append(
                    {
                        "sample_index": idx,
                        "steps": config.ig.steps,
                        "sub_batch": config.ig.sub_batch,
                        "output_index": config.ig.output_index,
                        "f_input": amap.f_input,
                        "f_baseline": amap.f_baseline,
                        "completeness_gap": amap.completeness_gap,
                        "mean": summary.mean,
                        "max_positive": summary.max_positive,
                        "min_negative": summary.min_negative,
                        "top_locations": [
                            [list(loc), value] for loc, value in summary.top_locations
                        ],
                        "attribution_entry": attr_entry,
                        "input_entry": input_entry,
                        "baseline_entry": "ig.baseline",
                        "heatmap_file": heatmap_file,
                    }
                )
            artifacts["ig.baseline"] = baseline
            doc["attributions"] = {
                "target": "logit" if model.layers[-1].kind == "sigmoid" else "output",
                "baseline": baseline_ref,
                "samples": samples_doc,
            }

    return AnalysisReport(document=doc, artifacts=artifacts, heatmaps=heatmaps)


def write_report(report: AnalysisReport, out_dir) -> None:
    """Write report.json, artifacts.qixt, spectrum.csv, and heatmaps/.

    On failure every file created by this call is removed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    created: list[Path] = []
    heatmap_dir = out_dir / "heatmaps"
    made_heatmap_dir = not heatmap_dir.exists()
    try:
        report_path = out_dir / "report.json"
        report_path.write_text(
            json.dumps(report.document, indent=2, sort_keys=True) + "\n"
        )
        created.append(report_path)

        artifact_path = out_dir / "artifacts.qixt"
        write_archive(report.artifacts, artifact_path)
        created.append(artifact_path)

        spectrum = report.document.get("spectrum")
        if spectrum is not None:
            csv_path = out_dir / "spectrum.csv"
            lines = ["component,singular_value,cumulative_singular_mass"]
            for i, (s, c) in enumerate(
                zip(spectrum["singular_values"], spectrum["cumulative_singular_mass"]),
                start=1,
            ):
                lines.append(f"{i},{s!r},{c!r}")
            csv_path.write_text("\n".join(lines) + "\n")
            created.append(csv_path)

        if report.heatmaps:
            heatmap_dir.mkdir(exist_ok=True)
            for name, (matrix, colormap) in report.heatmaps.items():
                path = heatmap_dir / name
                render_heatmap(matrix, path, colormap=colormap)
                created.append(path)
    except BaseException:
        for path in created:
            path.unlink(missing_ok=True)
        if made_heatmap_dir and heatmap_dir.exists():
            shutil.rmtree(heatmap_dir, ignore_errors=True)
        raise


def read_report(out_dir) -> tuple[dict, dict[str, np.ndarray]]:
    out_dir = Path(out_dir)
    with open(out_dir / "report.json") as fh:
        doc = json.load(fh)
    artifacts = read_archive(out_dir / "artifacts.qixt")
    return doc, artifacts


def audit_report(out_dir, atol: float = 1e-9) -> list[str]:
    """Recompute every scalar in report.json from artifacts.qixt; returns
    human-readable mismatch descriptions (empty list = consistent)."""
    doc, artifacts = read_report(out_dir)
    problems: list[str] = []

    def check(label: str, reported: float, recomputed: float):
        if reported is None and recomputed is None:
            return
        if reported is None or not math.isclose(
            reported, recomputed, rel_tol=0.0, abs_tol=atol
        ):
            problems.append(f"{label}: reported {reported!r} != recomputed {recomputed!r}")

    roles = doc["layers"]
    space_key = "pca.{}.reduced" if doc["similarity"]["space"] == "pca" else "pooled.{}"
    role_of = {v: k for k, v in roles.items()}
    for pair in doc["similarity"]["pairs"]:
        role_a = role_of[pair["layer_a"]]
        role_b = role_of[pair["layer_b"]]
        A = artifacts[space_key.format(role_a)]
        B = artifacts[space_key.format(role_b)]
        matrix = artifacts[pair["matrix_entry"]]
        fresh = similarity.cosine_similarity_matrix(A, B)
        if not np.allclose(matrix, fresh, atol=atol):
            problems.append(f"similarity matrix {pair['matrix_entry']} mismatch")
        summary = similarity.layer_similarity_summary(A, B)
        label = f"similarity {pair['layer_a']}/{pair['layer_b']}"
        check(f"{label} matrix_mean", pair["matrix_mean"], summary.matrix_mean)
        check(f"{label} diagonal_mean", pair["diagonal_mean"], summary.diagonal_mean)
        check(f"{label} min", pair["min"], summary.min)
        check(f"{label} max", pair["max"], summary.max)
        check(
            f"{label} mean_inner_product",
            pair["mean_inner_product"],
            similarity.mean_inner_product(A, B),
        )

    mi_doc = doc["mutual_information"]
    pooled_a = artifacts["pooled.conv1"]
    pooled_b = artifacts["pooled.conv2"]
    gap_a = artifacts["gap.conv1"]
    gap_b = artifacts["gap.conv2"]
    common = mi_doc["channels_used"]
    check(
        "layer MI",
        mi_doc["mi_nats"],
        infotheory.layer_mi(
            reduce.truncate_channels(pooled_a, common),
            reduce.truncate_channels(pooled_b, common),
            n_bins=mi_doc["bins"],
        ),
    )
    mi_matrix = artifacts["mi.pairwise"]
    for entry in mi_doc["top_pairs"]:
        i = entry["map_a"][1]
        j = entry["map_b"][1]
        check(f"top MI pair ({i},{j})", entry["mi_nats"], float(mi_matrix[i, j]))
        fresh_mi = infotheory.mutual_information(
            infotheory.digitize(gap_a[:, i], mi_doc["bins"]),
            infotheory.digitize(gap_b[:, j], mi_doc["bins"]),
        )
        check(f"top MI pair ({i},{j}) from pooled", entry["mi_nats"], fresh_mi)

    spectrum = doc["spectrum"]
    S = artifacts["spectrum.singular_values"]
    dense_acts = artifacts["dense.activations"]
    _, fresh_cum = decomp.dense_layer_spectrum(dense_acts)
    fresh_S = decomp.svd(dense_acts).S
    if not np.allclose(S, fresh_S, atol=atol):
        problems.append("spectrum singular values mismatch vs dense activations")
    for i, (rep, rec) in enumerate(
        zip(spectrum["cumulative_singular_mass"], fresh_cum)
    ):
        check(f"spectrum cumulative[{i}]", rep, float(rec))

    for table in doc["explained_variance"]["tables"]:
        values = artifacts[table["singular_values_entry"]]
        ratios, cum = reduce.explained_variance(values, mode=table["mode"])
        for i, (rep, rec) in enumerate(zip(table["ratios"], ratios)):
            check(f"{table['mode']} ratio[{i}]", rep, float(rec))
        for i, (rep, rec) in enumerate(zip(table["cumulative"], cum)):
            check(f"{table['mode']} cumulative[{i}]", rep, float(rec))

    if "attributions" in doc:
        for sample in doc["attributions"]["samples"]:
            attr = artifacts[sample["attribution_entry"]]
            label = f"ig sample {sample['sample_index']}"
            check(f"{label} mean", sample["mean"], float(attr.mean()))
            check(f"{label} max_positive", sample["max_positive"], float(attr.max()))
            check(f"{label} min_negative", sample["min_negative"], float(attr.min()))
            gap = abs(float(attr.sum()) - (sample["f_input"] - sample["f_baseline"]))
            check(f"{label} completeness_gap", sample["completeness_gap"], gap)

    return problems
