"""Compute golden records for the phantom manifest with the reference oracle.

Ground truth comes from nibabel + the loop-based boundary extraction in
tests/oracle.py, and metrics from its straight-line protocol. Only the
prediction point clouds (mesh loading and seeded surface sampling) are taken
from volbench, since those are inputs to the protocol rather than part of it.

    python scripts/make_golden.py [--manifest data/phantom/manifest.json]
"""

import argparse
import json
import sys
from pathlib import Path

import nibabel as nib
import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "tests"))

import oracle  # noqa: E402

from volbench.harness import load_manifest, sample_seed  # noqa: E402
from volbench.mesh import load_mesh, to_point_cloud  # noqa: E402

PLANE_CODES = {"axial": "SI", "coronal": "AP"}


def midpoint_has_structure(bits, affine, plane):
    codes = nib.aff2axcodes(affine)
    axis = next(i for i, c in enumerate(codes) if c in PLANE_CODES[plane])
    return bool(np.take(bits, bits.shape[axis] // 2, axis=axis).any())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--manifest", default=ROOT / "data" / "phantom" / "manifest.json", type=Path)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()
    out = args.out or args.manifest.with_name("golden.json")

    manifest = load_manifest(args.manifest)
    cfg = manifest.config
    golden = []
    for entry in manifest.samples:
        mask_img = nib.load(str(entry.mask_path))
        bits = np.asarray(mask_img.dataobj) > 0.5
        spacing = mask_img.header.get_zooms()[:3]
        present = midpoint_has_structure(bits, mask_img.affine, entry.plane.value)
        gt = oracle.boundary_points(bits, spacing) if present else None
        for model in sorted(entry.predictions):
            seed = sample_seed(manifest.global_seed, entry.id, model)
            rec = {"sample_id": entry.id, "model": model, "plane": entry.plane.value, "dataset": entry.dataset}
            if gt is None:
                rec.update(status="skipped", reason="structure-absent-at-midpoint")
            else:
                pred = to_point_cloud(load_mesh(entry.predictions[model]), cfg.sample_points, seed, cfg.mesh_mode).points
                rec.update(
                    status="ok",
                    **oracle.evaluate(
                        pred,
                        gt,
                        tau=cfg.tau,
                        grid=cfg.grid_size,
                        cap=cfg.emd_cap,
                        seed=seed,
                        thr=cfg.icp.max_correspondence_distance,
                        iters=cfg.icp.max_iterations,
                        tol=cfg.icp.rmse_convergence_tol,
                    ),
                )
            golden.append(rec)
            print(entry.id, model, rec["status"], {k: round(v, 4) for k, v in rec.items() if isinstance(v, float)})
    out.write_text(json.dumps({"records": golden}, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(golden)} golden records to {out}")


if __name__ == "__main__":
    main()
