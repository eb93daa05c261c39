"""Command-line driver.

Exit codes: 0 success, 1 usage error, 2 data/validation error,
3 numerical non-convergence. Diagnostics go to stderr; results go to
files or stdout.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import __version__, attribution, decomp, infotheory, reduce, similarity
from .decomp import ConvergenceError
from .model import ModelError, load_model, logit_of
from .pipeline import StageError, audit_report, load_config, run_analysis, write_report
from .render import COLORMAPS, render_heatmap
from .tensor import ArchiveError, read_archive, write_archive

USAGE_EXIT = 1
DATA_EXIT = 2
CONVERGENCE_EXIT = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; the CLI contract says 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)


def _split_entry_ref(ref: str) -> tuple[str, str]:
    if ":" not in ref:
        raise ValueError(
            f"expected ARCHIVE:ENTRY, got {ref!r}"
        )
    path, entry = ref.rsplit(":", 1)
    return path, entry


def _load_entry(ref: str) -> np.ndarray:
    path, entry = _split_entry_ref(ref)
    entries = read_archive(path)
    if entry not in entries:
        raise ValueError(
            f"entry {entry!r} not found in {path} (available: {sorted(entries)})"
        )
    return entries[entry]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qixai", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="run the full analysis pipeline")
    p.add_argument("--config", required=True, help="run-config JSON file")
    p.add_argument(
        "--audit",
        action="store_true",
        help="after writing the report, recompute every scalar from artifacts",
    )

    p = sub.add_parser("similarity", help="cosine-similarity summary of two matrices")
    p.add_argument("--a", required=True, metavar="ARCHIVE:ENTRY")
    p.add_argument("--b", required=True, metavar="ARCHIVE:ENTRY")
    p.add_argument("--matrix-out", metavar="ARCHIVE:ENTRY",
                   help="write the full similarity matrix to this archive entry")

    p = sub.add_parser("mi", help="mutual information between two matrices")
    p.add_argument("--a", required=True, metavar="ARCHIVE:ENTRY")
    p.add_argument("--b", required=True, metavar="ARCHIVE:ENTRY")
    p.add_argument("--bins", type=int, default=20)

    p = sub.add_parser("ig", help="integrated-gradients attribution for one sample")
    p.add_argument("--model", required=True, help="model-spec document")
    p.add_argument("--weights", required=True, help="weights archive")
    p.add_argument("--input", required=True, metavar="ARCHIVE:ENTRY")
    p.add_argument("--baseline", default="zeros",
                   help='"zeros" or ARCHIVE:ENTRY (default: zeros)')
    p.add_argument("--sample", type=int, default=0,
                   help="sample index when the input entry is a batch")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--sub-batch", type=int, default=10)
    p.add_argument("--output-index", type=int, default=0)
    p.add_argument("--raw-output", action="store_true",
                   help="attribute the final output even if it is a sigmoid")
    p.add_argument("--out", metavar="PATH",
                   help="write attributions to this archive")

    p = sub.add_parser("pca", help="PCA explained variance of a matrix")
    p.add_argument("--data", required=True, metavar="ARCHIVE:ENTRY")
    p.add_argument("--components", type=int, default=32)
    p.add_argument("--no-center", action="store_true")
    p.add_argument("--mode", choices=("variance_ratio", "singular_mass"),
                   default="variance_ratio")

    p = sub.add_parser("spectrum", help="singular-value spectrum of a matrix")
    p.add_argument("--data", required=True, metavar="ARCHIVE:ENTRY")
    p.add_argument("--csv-out", metavar="PATH", help="write the curve as CSV")

    p = sub.add_parser("render", help="render a rank-2 tensor as a PNG heatmap")
    p.add_argument("--matrix", required=True, metavar="ARCHIVE:ENTRY")
    p.add_argument("--out", required=True, metavar="PATH")
    p.add_argument("--colormap", choices=COLORMAPS, default="diverging")
    p.add_argument("--scale", type=int, default=1,
                   help="integer upscale factor (pixels per cell)")

    p = sub.add_parser("inspect", help="list entries of a tensor archive")
    p.add_argument("--archive", required=True)

    return parser


def _cmd_analyze(args) -> int:
    config = load_config(args.config)
    report = run_analysis(config)
    write_report(report, config.output_dir)
    for section in sorted(k for k in report.document if k not in ("config",)):
        print(f"analyze: wrote section '{section}'")
    print(f"analyze: report in {config.output_dir}")
    if args.audit:
        problems = audit_report(config.output_dir)
        if problems:
            for problem in problems:
                print(f"audit mismatch: {problem}", file=sys.stderr)
            return DATA_EXIT
        print("analyze: audit clean (all scalars recomputed from artifacts)")
    return 0


def _cmd_similarity(args) -> int:
    A = np.atleast_2d(_load_entry(args.a))
    B = np.atleast_2d(_load_entry(args.b))
    summary = similarity.layer_similarity_summary(A, B)
    print(f"matrix_mean: {summary.matrix_mean!r}")
    print(f"diagonal_mean: {summary.diagonal_mean!r}")
    print(f"min: {summary.min!r}")
    print(f"max: {summary.max!r}")
    if A.shape == B.shape:
        print(f"mean_inner_product: {similarity.mean_inner_product(A, B)!r}")
    if args.matrix_out:
        path, entry = _split_entry_ref(args.matrix_out)
        write_archive({entry: similarity.cosine_similarity_matrix(A, B)}, path)
        print(f"matrix written to {path}:{entry}")
    return 0


def _cmd_mi(args) -> int:
    A = np.atleast_2d(_load_entry(args.a))
    B = np.atleast_2d(_load_entry(args.b))
    value = infotheory.layer_mi(A, B, n_bins=args.bins)
    print(f"mi_nats: {value!r}")
    return 0


def _cmd_ig(args) -> int:
    with open(args.model) as fh:
        model = load_model(fh.read(), args.weights)
    data = _load_entry(args.input)
    if tuple(data.shape) == model.input_shape:
        sample = data
    elif tuple(data.shape[1:]) == model.input_shape:
        if args.sample < 0 or args.sample >= data.shape[0]:
            raise ValueError(
                f"--sample {args.sample} out of range for batch of {data.shape[0]}"
            )
        sample = data[args.sample]
    else:
        raise ValueError(
            f"input entry shape {tuple(data.shape)} does not match model "
            f"input shape {model.input_shape}"
        )
    if args.baseline == "zeros":
        baseline = np.zeros(model.input_shape)
    else:
        baseline = _load_entry(args.baseline)
    target = model
    if model.layers[-1].kind == "sigmoid" and not args.raw_output:
        target = logit_of(model)
    amap = attribution.integrated_gradients(
        target,
        sample,
        baseline,
        steps=args.steps,
        sub_batch=args.sub_batch,
        output_index=args.output_index,
    )
    summary = attribution.attribution_summary(amap, top_k=5)
    print(f"f_input: {amap.f_input!r}")
    print(f"f_baseline: {amap.f_baseline!r}")
    print(f"completeness_gap: {amap.completeness_gap!r}")
    print(f"mean: {summary.mean!r}")
    print(f"max_positive: {summary.max_positive!r}")
    print(f"min_negative: {summary.min_negative!r}")
    if args.out:
        write_archive(
            {
                "attributions": amap.attributions,
                "input": sample,
                "baseline": baseline,
            },
            args.out,
        )
        print(f"attributions written to {args.out}")
    return 0


def _cmd_pca(args) -> int:
    data = np.atleast_2d(_load_entry(args.data))
    model = reduce.fit_pca(data, args.components, center=not args.no_center)
    ratios, cumulative = reduce.explained_variance(
        model.singular_values, mode=args.mode
    )
    print(f"mode: {args.mode}")
    for i, (r, c) in enumerate(zip(ratios, cumulative), start=1):
        print(f"component {i}: ratio {r!r} cumulative {c!r}")
    return 0


def _cmd_spectrum(args) -> int:
    data = np.atleast_2d(_load_entry(args.data))
    result, cumulative = decomp.dense_layer_spectrum(data)
    lines = ["component,singular_value,cumulative_singular_mass"]
    for i, (s, c) in enumerate(zip(result.S, cumulative), start=1):
        lines.append(f"{i},{float(s)!r},{float(c)!r}")
    if args.csv_out:
        with open(args.csv_out, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        print(f"spectrum written to {args.csv_out}")
    else:
        print("\n".join(lines))
    return 0


def _cmd_render(args) -> int:
    matrix = _load_entry(args.matrix)
    if matrix.ndim != 2:
        raise ValueError(
            f"render needs a rank-2 tensor, got rank {matrix.ndim}"
        )
    render_heatmap(matrix, args.out, colormap=args.colormap, scale=args.scale)
    print(f"heatmap written to {args.out}")
    return 0


def _cmd_inspect(args) -> int:
    entries = read_archive(args.archive)
    print(f"{len(entries)} entries")
    for name, arr in entries.items():
        shape = "x".join(str(e) for e in arr.shape)
        print(
            f"{name}: shape {shape} min {float(arr.min())!r} "
            f"max {float(arr.max())!r} mean {float(arr.mean())!r}"
        )
    return 0


_COMMANDS = {
    "analyze": _cmd_analyze,
    "similarity": _cmd_similarity,
    "mi": _cmd_mi,
    "ig": _cmd_ig,
    "pca": _cmd_pca,
    "spectrum": _cmd_spectrum,
    "render": _cmd_render,
    "inspect": _cmd_inspect,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc.cause, ConvergenceError):
            return CONVERGENCE_EXIT
        return DATA_EXIT
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return CONVERGENCE_EXIT
    except (ArchiveError, ModelError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT


if __name__ == "__main__":
    raise SystemExit(main())
