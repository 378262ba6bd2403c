"""Command line entry point: ``volbench {gt,slice,eval,run,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from volbench.errors import VolbenchError
from volbench.geometry import IcpParams
from volbench.harness import (
    ManifestError,
    aggregate,
    is_hard_failure,
    load_manifest,
    load_records,
    record_filename,
    record_to_dict,
    render_json,
    run_manifest,
    write_record,
    write_report,
)
from volbench.mesh import load_mesh, to_point_cloud, write_ply_points
from volbench.metrics import MetricConfig, evaluate_pair
from volbench.nifti import parse_nifti, read_mask
from volbench.volume import export_slice, midpoint_masked_slice, surface_points

EXIT_OK, EXIT_SAMPLE_FAILED, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("volbench")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _env_int(name: str, default: int | None) -> int | None:
    value = os.environ.get(name)
    if value is None or value == "":
        return default
    try:
        return int(value, 0)
    except ValueError:
        raise SystemExit(f"{name} must be an integer, got {value!r}")


def _is_nifti(path: str) -> bool:
    return path.lower().endswith((".nii", ".nii.gz", ".hdr", ".hdr.gz"))


def cmd_gt(args) -> int:
    cloud = surface_points(read_mask(args.mask, label=args.label))
    write_ply_points(cloud, args.out)
    log.info("wrote %d surface points to %s", len(cloud), args.out)
    return EXIT_OK


def cmd_slice(args) -> int:
    scan = parse_nifti(args.scan)
    mask = read_mask(args.mask, label=args.label)
    s = midpoint_masked_slice(scan, mask, args.plane)
    export_slice(s, args.out)
    log.info("wrote %s slice %d (%dx%d) to %s", s.plane.value, s.slice_index, s.height, s.width, args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    seed = args.seed if args.seed is not None else _env_int("VOLBENCH_SEED", 0)
    cfg = MetricConfig(
        tau=args.tau,
        grid_size=args.grid,
        emd_cap=args.emd_cap,
        seed=seed,
        icp=replace(IcpParams(), max_correspondence_distance=args.icp_threshold),
        sample_points=args.sample_points,
        mesh_mode=args.mesh_mode,
    )
    pred = to_point_cloud(load_mesh(args.pred), cfg.sample_points, seed, cfg.mesh_mode)
    if _is_nifti(args.gt):
        gt = surface_points(read_mask(args.gt, label=args.label))
    else:
        # seed + 1 keeps a mesh gt from drawing the same barycentrics as the prediction
        gt = to_point_cloud(load_mesh(args.gt), cfg.sample_points, seed + 1, cfg.mesh_mode)
    record = evaluate_pair(pred, gt, cfg, sample_id=Path(args.pred).stem, model=args.model)
    out = json.dumps(record_to_dict(record), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(out)
    else:
        sys.stdout.write(out)
    return EXIT_OK if record.status == "ok" else EXIT_SAMPLE_FAILED


def cmd_run(args) -> int:
    try:
        manifest = load_manifest(args.manifest)
    except ManifestError as exc:
        log.error("manifest error: %s", exc)
        return EXIT_USAGE
    seed = args.seed if args.seed is not None else _env_int("VOLBENCH_SEED", None)
    if seed is not None:
        manifest = replace(manifest, global_seed=seed)
    threads = args.threads or _env_int("VOLBENCH_THREADS", None)

    out = Path(args.out)
    records = run_manifest(manifest, threads=threads, slice_dir=out / "slices" if args.export_slices else None)
    for r in records:
        write_record(r, out / "records" / record_filename(r))
    rows = aggregate(records, ddof=0 if args.population_std else 1)
    (out / "report.json").write_text(render_json(rows))
    write_report(rows, "markdown", out / "report.md", tau=manifest.config.tau)
    n_skipped = sum(r.status != "ok" for r in records)
    log.info("%d records (%d skipped) written to %s", len(records), n_skipped, out)
    return EXIT_SAMPLE_FAILED if any(is_hard_failure(r) for r in records) else EXIT_OK


def cmd_report(args) -> int:
    records = load_records(args.records)
    rows = aggregate(records, ddof=0 if args.population_std else 1)
    write_report(rows, args.format, args.out, tau=args.tau)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="volbench", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gt", help="extract the ground-truth surface point cloud from a mask")
    g.add_argument("--mask", required=True)
    g.add_argument("--label", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gt)

    s = sub.add_parser("slice", help="export the masked midpoint slice as PNG")
    s.add_argument("--scan", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--plane", required=True, choices=["coronal", "axial"])
    s.add_argument("--label", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_slice)

    d = MetricConfig()
    e = sub.add_parser("eval", help="score one prediction against one ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True, help="mask (.nii/.nii.gz) or PLY/OBJ")
    e.add_argument("--label", type=int)
    e.add_argument("--model", default="")
    e.add_argument("--tau", type=float, default=d.tau)
    e.add_argument("--grid", type=int, default=d.grid_size)
    e.add_argument("--icp-threshold", type=float, default=d.icp.max_correspondence_distance)
    e.add_argument("--emd-cap", type=int, default=d.emd_cap)
    e.add_argument("--sample-points", type=int, default=d.sample_points)
    e.add_argument("--mesh-mode", choices=["surface", "vertices"], default=d.mesh_mode)
    e.add_argument("--seed", type=int)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("run", help="evaluate a whole manifest")
    r.add_argument("--manifest", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--threads", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--export-slices", action="store_true")
    r.add_argument("--population-std", action="store_true")
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="aggregate record files into a table")
    rep.add_argument("--records", required=True)
    rep.add_argument("--format", required=True, choices=["csv", "json", "markdown"])
    rep.add_argument("--out", required=True)
    rep.add_argument("--tau", type=float, default=d.tau, help="threshold shown in the F1 column header")
    rep.add_argument("--population-std", action="store_true")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (VolbenchError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_SAMPLE_FAILED
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
