"""Command-line entry points: generate, evaluate, run, render, stats.

Per-case failures never abort a run; they become error entries in the
report and a nonzero exit code. The ``SELO_LOG`` environment variable sets
the log level (DEBUG/INFO/WARNING/ERROR).
"""

from __future__ import annotations

import argparse
import csv
import datetime
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from . import __version__, annotations, mapio, metrics, render, scorers
from .annotations import Manifest, load_manifest, manifest_stats
from .errors import DimMismatchError, MissingMapError, SeloError
from .pipeline import PipelineConfig, RasterRef, generate_selo_map
from .scorers import ScorerSpec, parse_scorer_spec

log = logging.getLogger(__name__)

# Scale sets replayed by `selo run --ablation`, smallest study to largest.
ABLATION_SCALE_SETS = (
    ("s1", (128, 256)),
    ("s2", (256, 512)),
    ("s3", (512, 768)),
    ("s4", (128, 256, 512)),
    ("s5", (256, 512, 768)),
    ("s6", (128, 256, 512, 768)),
)

CSV_COLUMNS = ("Case", "R_su", "R_da", "R_as", "R_mi")


@dataclass
class RunConfig:
    manifest: Path
    scorer: ScorerSpec
    pipeline: PipelineConfig
    params: metrics.MetricParams
    out_dir: Path
    render: bool = False
    seed: int = 0
    workers: int = 1
    scorer_timeout: float = 30.0

    def echo(self) -> dict:
        return {
            "manifest": str(self.manifest),
            "scorer": self.scorer.kind,
            "scales": list(self.pipeline.scales),
            "offsets": list(self.pipeline.offsets),
            "median_kernel": self.pipeline.median_kernel,
            "params": self.params.to_dict(),
            "seed": self.seed,
            "workers": self.workers,
        }


def _resolve_image(manifest_path: Path, file: str) -> Path:
    p = Path(file)
    return p if p.is_absolute() else manifest_path.parent / p


def _case_scorer(cfg: RunConfig, shared, entry, case):
    """Shared scorer for case-independent kinds, else one per case."""
    if shared is not None:
        return shared
    if cfg.scorer.kind == "gt-oracle":
        union = None
        for poly in case.regions:
            m = annotations.rasterize_region(poly, entry.height, entry.width)
            union = m if union is None else (union | m)
        return scorers.build_scorer(cfg.scorer, gt_mask=union)
    if cfg.scorer.kind == "gaussian-target":
        targets = []
        for poly in case.regions:
            cx, cy = annotations.region_center(poly)
            radius = annotations.candidate_radius(poly, cfg.params.expansion)
            targets.append((cx, cy, radius / 2.0))
        return scorers.build_scorer(cfg.scorer, targets=targets)
    raise AssertionError(f"unexpected per-case scorer kind {cfg.scorer.kind}")


def _build_shared_scorer(cfg: RunConfig):
    if cfg.scorer.kind in ("constant", "seeded-random"):
        return scorers.build_scorer(cfg.scorer, run_seed=cfg.seed)
    if cfg.scorer.kind == "external":
        return scorers.build_scorer(cfg.scorer, timeout=cfg.scorer_timeout)
    return None


def cmd_generate(cfg: RunConfig, manifest: Manifest | None = None) -> dict:
    """Produce one map file pair and one timing file per manifest case."""
    if manifest is None:
        manifest = load_manifest(cfg.manifest)
    maps_dir = cfg.out_dir / "maps"
    maps_dir.mkdir(parents=True, exist_ok=True)
    shared = _build_shared_scorer(cfg)
    jobs = list(manifest.iter_cases())
    case_entries: list[dict] = []
    errors: list[dict] = []

    def run_one(entry, case):
        image_path = _resolve_image(cfg.manifest, entry.file)
        raster = RasterRef.from_file(image_path)
        if (raster.height, raster.width) != (entry.height, entry.width):
            raise DimMismatchError(
                f"{image_path}: file is {raster.height}x{raster.width}, "
                f"manifest says {entry.height}x{entry.width}"
            )
        scorer = _case_scorer(cfg, shared, entry, case)
        pmap, timings = generate_selo_map(raster, case.query, scorer,
                                          cfg.pipeline)
        mapio.save_map(pmap, maps_dir / case.case_id)
        mapio.save_timings(timings, maps_dir / f"{case.case_id}.timing.json")
        if cfg.render:
            render.render_overlay(
                image_path, pmap, case.regions,
                cfg.out_dir / "render" / f"{case.case_id}.png",
            )
        return {
            "case_id": case.case_id,
            "image": entry.file,
            "degenerate": pmap.degenerate,
            "timings": timings.to_dict(),
        }

    try:
        with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
            futures = {
                pool.submit(run_one, entry, case): case.case_id
                for entry, case in jobs
            }
            for fut, case_id in futures.items():
                try:
                    case_entries.append(fut.result())
                except Exception as exc:  # noqa: BLE001 - per-case isolation
                    log.error("case %s failed: %s", case_id, exc)
                    errors.append({"case_id": case_id, "error": str(exc)})
    finally:
        if hasattr(shared, "close"):
            shared.close()

    case_entries.sort(key=lambda c: c["case_id"])
    errors.sort(key=lambda c: c["case_id"])
    return {
        "tool": "selokit",
        "version": __version__,
        "generated_at": _now(),
        "config": cfg.echo(),
        "maps_dir": str(maps_dir),
        "cases": case_entries,
        "errors": errors,
    }


def cmd_evaluate(
    maps_dir: str | Path,
    manifest: str | Path | Manifest,
    params: metrics.MetricParams | None = None,
    out_dir: str | Path | None = None,
    config_echo: dict | None = None,
    extra_errors: list[dict] | None = None,
) -> dict:
    """Score every stored map against its manifest case; emit the report."""
    params = params or metrics.MetricParams()
    maps_dir = Path(maps_dir)
    if not isinstance(manifest, Manifest):
        manifest = load_manifest(manifest)
    scored: list[metrics.SeLoScores] = []
    errors: list[dict] = list(extra_errors or [])
    known_failures = {e["case_id"] for e in errors}
    for entry, case in manifest.iter_cases():
        if case.case_id in known_failures:
            continue
        try:
            npy = maps_dir / f"{case.case_id}.npy"
            if not npy.exists():
                raise MissingMapError(f"no map stored for case {case.case_id!r}")
            pmap = mapio.load_map_array(npy)
            if (pmap.height, pmap.width) != (entry.height, entry.width):
                raise DimMismatchError(
                    f"map is {pmap.height}x{pmap.width}, manifest says "
                    f"{entry.height}x{entry.width}"
                )
            result = metrics.evaluate_case(pmap, case, params)
            timing_file = maps_dir / f"{case.case_id}.timing.json"
            if timing_file.exists():
                result.timings = mapio.load_timings(timing_file)
            scored.append(result)
        except Exception as exc:  # noqa: BLE001 - per-case isolation
            log.error("case %s failed: %s", case.case_id, exc)
            errors.append({"case_id": case.case_id, "error": str(exc)})

    scored.sort(key=lambda s: s.case_id)
    errors.sort(key=lambda e: e["case_id"])
    report = {
        "tool": "selokit",
        "version": __version__,
        "generated_at": _now(),
        "config": config_echo
        or {"maps_dir": str(maps_dir), "params": params.to_dict()},
        "cases": [s.to_dict() for s in scored],
        "errors": errors,
        "aggregate": metrics.aggregate(scored).to_dict() if scored else None,
    }
    if out_dir is not None:
        write_report(report, Path(out_dir))
    return report


def report_csv(report: dict) -> str:
    """Per-case indicator table; column order mirrors the published tables."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for case in report["cases"]:
        writer.writerow(
            [
                case["case_id"],
                f"{case['r_su']:.6f}",
                f"{case['r_da']:.6f}",
                f"{case['r_as']:.6f}",
                f"{case['r_mi']:.6f}",
            ]
        )
    return buf.getvalue()


def write_report(report: dict, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True), encoding="utf-8"
    )
    (out_dir / "report.csv").write_text(report_csv(report), encoding="utf-8")


def cmd_run(cfg: RunConfig, ablation: bool = False) -> dict:
    """Generate maps and evaluate them in one pass."""
    manifest = load_manifest(cfg.manifest)
    if not ablation:
        gen = cmd_generate(cfg, manifest)
        return cmd_evaluate(
            Path(gen["maps_dir"]),
            manifest,
            cfg.params,
            out_dir=cfg.out_dir,
            config_echo=cfg.echo(),
            extra_errors=gen["errors"],
        )
    rows = []
    reports = {}
    for name, scales in ABLATION_SCALE_SETS:
        sub_cfg = replace(
            cfg,
            out_dir=cfg.out_dir / name,
            pipeline=replace(cfg.pipeline, scales=scales),
        )
        t0 = time.perf_counter()
        report = cmd_run(sub_cfg, ablation=False)
        elapsed = time.perf_counter() - t0
        reports[name] = report
        agg = report["aggregate"] or {}
        rows.append(
            {
                "run": name,
                "scales": list(scales),
                "r_su": agg.get("r_su"),
                "r_da": agg.get("r_da"),
                "r_as": agg.get("r_as"),
                "r_mi": agg.get("r_mi"),
                "errors": len(report["errors"]),
                "total_time_s": elapsed,
            }
        )
    summary = {
        "tool": "selokit",
        "version": __version__,
        "generated_at": _now(),
        "config": cfg.echo(),
        "ablation": rows,
    }
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    (cfg.out_dir / "ablation.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8"
    )
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["Run", "Scales", "R_su", "R_da", "R_as", "R_mi", "Time_s"])
    for row in rows:
        writer.writerow(
            [
                row["run"],
                "+".join(str(s) for s in row["scales"]),
                _fmt(row["r_su"]),
                _fmt(row["r_da"]),
                _fmt(row["r_as"]),
                _fmt(row["r_mi"]),
                f"{row['total_time_s']:.2f}",
            ]
        )
    (cfg.out_dir / "ablation.csv").write_text(buf.getvalue(), encoding="utf-8")
    summary["reports"] = reports
    return summary


def cmd_render(
    map_file: str | Path,
    image_file: str | Path,
    manifest_path: str | Path,
    case_id: str,
    out_path: str | Path,
    blend: float = 0.5,
):
    """Overlay a stored map on its source image with GT outlines."""
    map_file = Path(map_file)
    if map_file.suffix == ".png":
        pmap = mapio.load_map_png(map_file)
    else:
        pmap = mapio.load_map_array(map_file)
    manifest = load_manifest(manifest_path)
    case = None
    for _, c in manifest.iter_cases():
        if c.case_id == case_id:
            case = c
            break
    if case is None:
        raise SeloError(f"case {case_id!r} not found in manifest")
    render.render_overlay(image_file, pmap, case.regions, out_path, blend)


def cmd_stats(manifest_path: str | Path) -> dict:
    """Manifest statistics in the shape of the testset summary table."""
    manifest = load_manifest(manifest_path)
    return manifest_stats(manifest).to_dict()


def _fmt(v) -> str:
    return "" if v is None else f"{v:.4f}"


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _add_common_generate_args(p: argparse.ArgumentParser):
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--scorer", default="seeded-random",
                   help="constant:V | seeded-random[:SEED] | gt-oracle | "
                        "gaussian-target[:SIGMA|:X,Y,SIGMA] | external:CMD")
    p.add_argument("--scales", default=None,
                   help="comma-separated tile sides, default 256,512,768")
    p.add_argument("--offsets", default=None,
                   help="comma-separated fractional offsets, default 0,0.5")
    p.add_argument("--median-kernel", default=None,
                   help="odd int or 'auto' (default)")
    p.add_argument("--params", type=Path, default=None,
                   help="JSON file of metric parameters")
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="override one metric parameter; repeatable, wins "
                        "over --params")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--render", action="store_true")
    p.add_argument("--scorer-timeout", type=float, default=30.0)


def _param_overrides(args) -> metrics.MetricParams:
    data = {}
    if args.params is not None:
        data = json.loads(Path(args.params).read_text(encoding="utf-8"))
    for item in getattr(args, "param", []):
        key, sep, raw = item.partition("=")
        if not sep:
            raise ValueError(f"--param needs KEY=VALUE, got {item!r}")
        data[key] = int(raw) if key == "nms_window" else float(raw)
    return metrics.MetricParams.from_dict(data)


def _pipeline_from_args(args) -> PipelineConfig:
    kwargs = {}
    if args.scales:
        kwargs["scales"] = tuple(int(s) for s in args.scales.split(","))
    if args.offsets:
        kwargs["offsets"] = tuple(float(f) for f in args.offsets.split(","))
    if args.median_kernel:
        mk = args.median_kernel
        kwargs["median_kernel"] = mk if mk == "auto" else int(mk)
    return PipelineConfig(**kwargs)


def _run_config(args) -> RunConfig:
    return RunConfig(
        manifest=args.manifest,
        scorer=parse_scorer_spec(args.scorer),
        pipeline=_pipeline_from_args(args),
        params=_param_overrides(args),
        out_dir=args.out,
        render=args.render,
        seed=args.seed,
        workers=args.workers,
        scorer_timeout=args.scorer_timeout,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selo",
        description="Generate and evaluate semantic-localization maps.",
    )
    parser.add_argument("--version", action="version",
                        version=f"selokit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="produce SeLo maps for a manifest")
    _add_common_generate_args(p_gen)

    p_eval = sub.add_parser("evaluate", help="score stored maps")
    p_eval.add_argument("--manifest", required=True, type=Path)
    p_eval.add_argument("--maps", required=True, type=Path,
                        help="directory holding <case_id>.npy maps")
    p_eval.add_argument("--params", type=Path, default=None)
    p_eval.add_argument("--param", action="append", default=[],
                        metavar="KEY=VALUE")
    p_eval.add_argument("--out", required=True, type=Path)

    p_run = sub.add_parser("run", help="generate + evaluate in one pass")
    _add_common_generate_args(p_run)
    p_run.add_argument("--ablation", action="store_true",
                       help="replay the six published scale sets as sub-runs")

    p_render = sub.add_parser("render", help="overlay a map on its image")
    p_render.add_argument("--map", required=True, type=Path)
    p_render.add_argument("--image", required=True, type=Path)
    p_render.add_argument("--manifest", required=True, type=Path)
    p_render.add_argument("--case", required=True)
    p_render.add_argument("--out", required=True, type=Path)
    p_render.add_argument("--blend", type=float, default=0.5)

    p_stats = sub.add_parser("stats", help="manifest statistics table")
    p_stats.add_argument("--manifest", required=True, type=Path)
    p_stats.add_argument("--out", type=Path, default=None)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("SELO_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "generate":
            result = cmd_generate(_run_config(args))
            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            (out / "generate.json").write_text(
                json.dumps(result, indent=2, sort_keys=True), encoding="utf-8"
            )
            _print_errors(result["errors"])
            return 1 if result["errors"] else 0
        if args.command == "evaluate":
            report = cmd_evaluate(
                args.maps, args.manifest, _param_overrides(args),
                out_dir=args.out,
            )
            _print_errors(report["errors"])
            _print_aggregate(report)
            return 1 if report["errors"] else 0
        if args.command == "run":
            cfg = _run_config(args)
            report = cmd_run(cfg, ablation=args.ablation)
            if args.ablation:
                for row in report["ablation"]:
                    print(
                        f"{row['run']}: scales={row['scales']} "
                        f"R_mi={_fmt(row['r_mi'])} "
                        f"time={row['total_time_s']:.2f}s "
                        f"errors={row['errors']}"
                    )
                failed = sum(row["errors"] for row in report["ablation"])
                return 1 if failed else 0
            _print_errors(report["errors"])
            _print_aggregate(report)
            return 1 if report["errors"] else 0
        if args.command == "render":
            cmd_render(args.map, args.image, args.manifest, args.case,
                       args.out, args.blend)
            return 0
        if args.command == "stats":
            stats = cmd_stats(args.manifest)
            text = json.dumps(stats, indent=2, sort_keys=True)
            print(text)
            if args.out:
                Path(args.out).write_text(text, encoding="utf-8")
            return 0
    except (SeloError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    raise AssertionError(f"unhandled command {args.command}")


def _print_errors(errors: list[dict]):
    for err in errors:
        print(f"FAILED {err['case_id']}: {err['error']}", file=sys.stderr)


def _print_aggregate(report: dict):
    agg = report.get("aggregate")
    if agg:
        print(
            f"cases={agg['case_count']} R_su={agg['r_su']:.4f} "
            f"R_da={agg['r_da']:.4f} R_as={agg['r_as']:.4f} "
            f"R_mi={agg['r_mi']:.4f}"
        )


if __name__ == "__main__":
    sys.exit(main())
