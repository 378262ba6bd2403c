"""Generate the synthetic phantom dataset under data/phantom/.

Two masks (a thick spherical shell and an axis-aligned box) with synthetic
scans, plus three prediction meshes per mask:

  exact    analytic surface through the boundary voxels
  halfres  marching cubes of the mask downsampled by 2
  planar   the exact mesh squashed to 5% of its anterior-posterior depth

A third, off-centre structure misses the axial midpoint slice and exercises
the skip path. Needs nibabel and scikit-image.

    python scripts/make_phantom.py [--out data/phantom]
"""

import argparse
import gzip
import json
from pathlib import Path

import nibabel as nib
import numpy as np
from skimage.measure import marching_cubes

from volbench.mesh import TriangleMesh, write_obj

PLANAR_DEPTH = 0.05


def save_nifti(path, data, spacing):
    img = nib.Nifti1Image(data, np.diag([*spacing, 1.0]))
    img.header.set_zooms(spacing)
    img.header.set_xyzt_units("mm")
    path.write_bytes(gzip.compress(img.to_bytes(), mtime=0))


def icosphere(level):
    t = (1 + 5**0.5) / 2
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, float) / np.linalg.norm(p) for p in v]
    for _ in range(level):
        cache, nxt = {}, []

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nxt += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        f = nxt
    return np.array(verts), np.array(f)


def merge(*meshes):
    verts, tris, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + off)
        off += len(m.vertices)
    return TriangleMesh(np.vstack(verts), np.vstack(tris))


def box_mesh(lo, hi):
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])], float)
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = [t for a, b, c, d in quads for t in ((a, b, c), (a, c, d))]
    return TriangleMesh(corners, np.array(tris))


def flatten(mesh, axis=1, factor=PLANAR_DEPTH):
    v = mesh.vertices.copy()
    centre = 0.5 * (v[:, axis].min() + v[:, axis].max())
    v[:, axis] = centre + (v[:, axis] - centre) * factor
    return TriangleMesh(v, mesh.triangles)


def half_resolution(bits, spacing):
    nx, ny, nz = (s // 2 * 2 for s in bits.shape)
    coarse = bits[:nx, :ny, :nz].reshape(nx // 2, 2, ny // 2, 2, nz // 2, 2).mean(axis=(1, 3, 5))
    padded = np.pad(coarse, 1)
    step = tuple(2 * s for s in spacing)
    verts, faces, _, _ = marching_cubes(padded, level=0.5, spacing=step)
    # coarse cell c covers fine voxels 2c, 2c+1; its centre sits at 2c + 0.5
    verts = verts - np.asarray(step) + 0.5 * np.asarray(spacing)
    return TriangleMesh(verts, faces)


def synthetic_scan(bits, seed):
    rng = np.random.default_rng(seed)
    grid = np.indices(bits.shape).sum(axis=0).astype(float)
    scan = 40 + 2 * grid + rng.normal(scale=5, size=bits.shape)
    scan[bits] += 300
    return np.round(scan).astype(np.int16)


def shell_phantom():
    dims, spacing = (28, 24, 20), (1.0, 1.25, 1.5)
    r_out, r_in = 9.0, 5.0
    centre = np.array([(d - 1) * s / 2 for d, s in zip(dims, spacing)])
    pos = np.indices(dims).transpose(1, 2, 3, 0) * np.array(spacing)
    r = np.linalg.norm(pos - centre, axis=-1)
    bits = (r <= r_out) & (r >= r_in)
    v, f = icosphere(3)
    outer = TriangleMesh(centre + v * (r_out - 0.5), f)
    inner = TriangleMesh(centre + v * (r_in + 0.5), f[:, ::-1])
    exact = merge(outer, inner)
    return dims, spacing, bits, exact


def box_phantom():
    dims, spacing = (24, 20, 16), (1.0, 1.0, 2.0)
    lo, hi = (6, 5, 4), (17, 14, 11)
    bits = np.zeros(dims, bool)
    bits[lo[0] : hi[0] + 1, lo[1] : hi[1] + 1, lo[2] : hi[2] + 1] = True
    exact = box_mesh(np.multiply(lo, spacing), np.multiply(hi, spacing))
    return dims, spacing, bits, exact


def offcentre_phantom():
    dims, spacing = (16, 16, 16), (1.0, 1.0, 1.0)
    bits = np.zeros(dims, bool)
    bits[2:6, 2:6, 1:5] = True  # never reaches the axial midpoint k = 8
    exact = box_mesh((2.0, 2.0, 1.0), (5.0, 5.0, 4.0))
    return dims, spacing, bits, exact


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=Path(__file__).resolve().parents[1] / "data" / "phantom", type=Path)
    args = ap.parse_args()
    out = args.out
    (out / "volumes").mkdir(parents=True, exist_ok=True)
    (out / "predictions").mkdir(parents=True, exist_ok=True)

    samples = []
    for seed, (name, build) in enumerate([("shell", shell_phantom), ("box", box_phantom), ("offcentre", offcentre_phantom)]):
        dims, spacing, bits, exact = build()
        save_nifti(out / "volumes" / f"{name}_scan.nii.gz", synthetic_scan(bits, seed), spacing)
        save_nifti(out / "volumes" / f"{name}_mask.nii.gz", bits.astype(np.uint8), spacing)
        preds = {"exact": write_obj(exact, out / "predictions" / f"{name}_exact.obj")}
        if name != "offcentre":
            preds["halfres"] = write_obj(half_resolution(bits, spacing), out / "predictions" / f"{name}_halfres.obj")
            preds["planar"] = write_obj(flatten(exact), out / "predictions" / f"{name}_planar.obj")
        planes = ["axial"] if name == "offcentre" else ["coronal", "axial"]
        for plane in planes:
            samples.append(
                {
                    "id": f"{name}-{plane}",
                    "dataset": "phantom",
                    "scan_path": f"volumes/{name}_scan.nii.gz",
                    "mask_path": f"volumes/{name}_mask.nii.gz",
                    "plane": plane,
                    "predictions": {m: str(p.relative_to(out)) for m, p in preds.items()},
                }
            )
        print(f"{name}: dims {dims}, {int(bits.sum())} voxels")

    manifest = {"global_seed": 20240601, "config": {}, "samples": samples}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {len(samples)} samples to {out / 'manifest.json'}")


if __name__ == "__main__":
    main()
