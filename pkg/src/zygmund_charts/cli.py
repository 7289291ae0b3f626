import argparse
import contextlib
from dataclasses import asdict
from pathlib import Path

import scipy.fft as sp_fft

from zygmund_charts import metadata
from zygmund_charts import pipeline
from zygmund_charts import reports as reports_mod
from zygmund_charts import selftest as selftest_mod
from zygmund_charts.exterior import GeometryError, dual_coframe
from zygmund_charts.fields import (
    FieldError,
    Frame,
    GridSpec,
    field_io_read,
    field_io_write,
)
from zygmund_charts.spectral import (
    ResolutionError,
    fit_exponent,
    norm_dyadic,
    norm_negative,
)


def _print_summary(paths):
    print("\nRun complete.")
    print("Artifacts:")
    for label, path in paths:
        print(f"- {label}: {path}")


def _require_path(path: Path, label: str):
    if not path.exists():
        print(f"Missing {label}: {path}")
        raise SystemExit(2)


def _workers(args):
    if args.threads:
        return sp_fft.set_workers(args.threads)
    return contextlib.nullcontext()


def _stage_failed(outdir: Path, exc: pipeline.StageError) -> int:
    path = pipeline.record_failure(outdir, exc)
    print(f"Stage failed: {exc}")
    print(f"Failure recorded in {path}")
    return 1


def _load_config(args, overrides: dict) -> pipeline.ImproveConfig:
    config_path = Path(args.config) if args.config else None
    if config_path is not None:
        _require_path(config_path, "config file")
    try:
        return pipeline.load_config(config_path, overrides)
    except (ValueError, TypeError) as exc:
        print(f"Invalid configuration: {exc}")
        raise SystemExit(2) from exc


def estimate_cmd(args):
    input_path = Path(args.input)
    _require_path(input_path, "input field")
    try:
        obj = field_io_read(input_path)
    except FieldError as exc:
        print(f"Unreadable field file {input_path}: {exc}")
        raise SystemExit(2) from exc
    if isinstance(obj, Frame):
        obj = obj.matrix()
    window = tuple(args.window) if args.window else None
    try:
        report = fit_exponent(obj, window)
        if args.s <= 0:
            value = norm_negative(obj, args.s)
        else:
            value = norm_dyadic(obj, args.s)
    except ResolutionError as exc:
        print(f"Cannot estimate: {exc}")
        raise SystemExit(2) from exc
    out = Path(args.out)
    csv_path = Path(args.csv) if args.csv else out.with_suffix(".csv")
    reports_mod.write_regularity_report(
        report,
        out,
        {
            "s": args.s,
            "norm": value,
            "input": str(input_path),
            "input_sha256": metadata.hash_file(input_path),
        },
    )
    reports_mod.write_block_csv(report, csv_path)
    exponent = report.fitted_exponent
    if report.smooth_beyond_resolution:
        print("Fitted exponent: smooth beyond resolution")
    else:
        print(f"Fitted exponent: {exponent:.4f}")
    print(f"Norm of order {args.s:g}: {value:.6e}")
    _print_summary([("Regularity JSON", out), ("Block norms CSV", csv_path)])
    return 0


def improve_cmd(args):
    outdir = Path(args.outdir)
    cfg = _load_config(
        args, {"alpha": args.alpha, "beta": args.beta, "scheme": args.scheme}
    )
    inputs = {}
    try:
        if args.frame:
            frame_path = Path(args.frame)
            _require_path(frame_path, "frame")
            frame = field_io_read(frame_path)
            if not isinstance(frame, Frame):
                print(f"{frame_path} does not hold a frame")
                raise SystemExit(2)
            inputs["frame"] = frame_path
            coframe = dual_coframe(frame)
        else:
            spec = GridSpec.cube(2, args.size)
            coframe, epsilon = pipeline.manufactured_at_target(spec, cfg, args.control)
            print(f"Manufactured {args.control} coframe at amplitude {epsilon:.3e}")
        coframe, kappa = pipeline.prepare_coframe(coframe, cfg)
        result = pipeline.improve_chart(coframe, cfg, progress=True)
    except FieldError as exc:
        print(f"Unreadable frame file: {exc}")
        raise SystemExit(2) from exc
    except GeometryError as exc:
        return _stage_failed(
            outdir, pipeline.StageError("coframe", str(exc), exc.category)
        )
    except pipeline.StageError as exc:
        return _stage_failed(outdir, exc)

    b_path = outdir / "B.zygf"
    outdir.mkdir(parents=True, exist_ok=True)
    field_io_write(b_path, result.B)
    manifest = metadata.build_manifest(
        "improve", asdict(cfg), None, args.threads, inputs
    )
    manifest.outputs = {"B": f"{b_path}#sha256:{metadata.hash_file(b_path)}"}
    manifest.telemetry = {k: v.to_dict() for k, v in result.telemetry.items()}
    manifest.reports = result.to_dict()
    manifest.reports["kappa"] = kappa
    manifest.reports["gain"] = result.gain
    manifest_path = outdir / "manifest.json"
    metadata.write_manifest(manifest, manifest_path)
    print(f"Exponent gain: {result.gain:.3f}")
    _print_summary([("Coefficients", b_path), ("Manifest", manifest_path)])
    return 0


def canonical_cmd(args):
    outdir = Path(args.outdir)
    try:
        report = pipeline.canonical_vs_harmonic(args.alpha, args.size, progress=True)
    except pipeline.StageError as exc:
        return _stage_failed(outdir, exc)
    out = reports_mod.write_json(report.to_dict(), outdir / "comparison.json")
    print(
        f"Canonical exponent {report.canonical_exponent:.3f},"
        f" harmonic exponent {report.harmonic_exponent:.3f}"
    )
    _print_summary([("Comparison JSON", out)])
    if not report.passed:
        print("Comparison outside tolerance.")
        return 1
    return 0


def example_cmd(args):
    out = Path(args.out)
    try:
        reports_mod.write_profile_csv(args.alpha, args.points, out)
    except ValueError as exc:
        print(str(exc))
        raise SystemExit(2) from exc
    paths = [("Profile CSV", out)]
    if args.alpha > 1 and not args.no_compare:
        try:
            report = pipeline.canonical_vs_harmonic(args.alpha, args.size)
        except pipeline.StageError as exc:
            return _stage_failed(out.parent, exc)
        comparison = out.with_name(out.stem + "_comparison.json")
        reports_mod.write_json(report.to_dict(), comparison)
        paths.append(("Comparison JSON", comparison))
    _print_summary(paths)
    return 0


def selftest_cmd(args):
    table = selftest_mod.run_selftest(args.check, args.quick, args.seed, progress=True)
    print(table.to_string(index=False))
    paths = []
    if args.out:
        csv_path = reports_mod.write_table_csv(table, Path(args.out))
        paths.append(("Selftest CSV", csv_path))
    passed = int(table["passed"].sum())
    print(f"{passed}/{len(table)} checks passed.")
    if paths:
        _print_summary(paths)
    return 0 if passed == len(table) else 1


def main(argv=None):
    parser = argparse.ArgumentParser(description="Zygmund-Hoelder charts CLI.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, help="FFT worker threads.")
    subparsers = parser.add_subparsers(dest="command", required=True)

    estimate_parser = subparsers.add_parser(
        "estimate", parents=[common], help="Fit a regularity exponent."
    )
    estimate_parser.add_argument("--input", required=True)
    estimate_parser.add_argument("--s", type=float, default=0.5)
    estimate_parser.add_argument("--out", default="outputs/regularity.json")
    estimate_parser.add_argument(
        "--csv", help="Block-norm CSV (default: next to --out)."
    )
    estimate_parser.add_argument("--window", type=int, nargs=2, metavar=("LO", "HI"))
    estimate_parser.set_defaults(func=estimate_cmd)

    improve_parser = subparsers.add_parser(
        "improve", parents=[common], help="Improve a chart by the coordinate PDE."
    )
    improve_parser.add_argument("--frame", help="ZYGF frame (default: manufactured).")
    improve_parser.add_argument("--alpha", type=float)
    improve_parser.add_argument("--beta", type=float)
    improve_parser.add_argument("--scheme", choices=["spectral", "stencil"])
    improve_parser.add_argument("--config", help="JSON configuration file.")
    improve_parser.add_argument("--size", type=int, default=256)
    improve_parser.add_argument(
        "--control", choices=["positive", "negative"], default="positive"
    )
    improve_parser.add_argument("--outdir", default="outputs/improve")
    improve_parser.set_defaults(func=improve_cmd)

    canonical_parser = subparsers.add_parser(
        "canonical", parents=[common], help="Canonical vs harmonic coordinates."
    )
    canonical_parser.add_argument("--alpha", type=float, default=1.3)
    canonical_parser.add_argument("--size", type=int, default=256)
    canonical_parser.add_argument("--outdir", default="outputs/canonical")
    canonical_parser.set_defaults(func=canonical_cmd)

    example_parser = subparsers.add_parser(
        "example", parents=[common], help="Closed-form profile of the loss example."
    )
    example_parser.add_argument("--alpha", type=float, default=1.0)
    example_parser.add_argument("--points", type=int, default=100)
    example_parser.add_argument("--size", type=int, default=256)
    example_parser.add_argument("--out", default="outputs/profile.csv")
    example_parser.add_argument("--no-compare", action="store_true")
    example_parser.set_defaults(func=example_cmd)

    selftest_parser = subparsers.add_parser(
        "selftest", parents=[common], help="Run the acceptance checks."
    )
    selftest_parser.add_argument(
        "--check", action="append", choices=sorted(selftest_mod.CHECKS)
    )
    selftest_parser.add_argument("--quick", action="store_true")
    selftest_parser.add_argument("--seed", type=int, default=0)
    selftest_parser.add_argument("--out", help="Write the result table as CSV.")
    selftest_parser.set_defaults(func=selftest_cmd)

    args = parser.parse_args(argv)
    with _workers(args):
        code = args.func(args)
    if code:
        raise SystemExit(code)


if __name__ == "__main__":
    main()
