"""Straight-line reference implementation of the scoring protocol.

Shares no code with ``volbench``: exhaustive nearest neighbours, Horn's
quaternion alignment instead of SVD, a textbook O(n^3) Hungarian solver and
plain Python sets and loops. Slow, but only used on small inputs.
"""

import itertools
import math

import numpy as np


def brute_nn(a, b, chunk=2048):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    dist = np.empty(len(a))
    idx = np.empty(len(a), dtype=np.int64)
    for s in range(0, len(a), chunk):
        block = a[s : s + chunk]
        d = np.sqrt(((block[:, None, :] - b[None, :, :]) ** 2).sum(-1))
        idx[s : s + chunk] = d.argmin(1)
        dist[s : s + chunk] = d.min(1)
    return dist, idx


def normalize(points):
    pts = np.asarray(points, dtype=np.float64)
    centroid = pts.sum(axis=0) / len(pts)
    c = pts - centroid
    s = np.abs(c).max()
    if s < 1e-12:
        return np.zeros_like(pts)
    return c / s


def horn_transform(src, dst):
    """Rotation/translation via the unit-quaternion eigenvector method."""
    ms, md = src.mean(0), dst.mean(0)
    a, b = src - ms, dst - md
    S = a.T @ b
    sxx, sxy, sxz = S[0]
    syx, syy, syz = S[1]
    szx, szy, szz = S[2]
    N = np.array(
        [
            [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
            [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
            [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
            [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
        ]
    )
    w, v = np.linalg.eigh(N)
    q0, qx, qy, qz = v[:, np.argmax(w)]
    R = np.array(
        [
            [q0 * q0 + qx * qx - qy * qy - qz * qz, 2 * (qx * qy - q0 * qz), 2 * (qx * qz + q0 * qy)],
            [2 * (qy * qx + q0 * qz), q0 * q0 - qx * qx + qy * qy - qz * qz, 2 * (qy * qz - q0 * qx)],
            [2 * (qz * qx - q0 * qy), 2 * (qz * qy + q0 * qx), q0 * q0 - qx * qx - qy * qy + qz * qz],
        ]
    )
    return R, md - R @ ms


def inlier_rmse(src, dst, thr):
    d, _ = brute_nn(src, dst)
    inl = d <= thr
    if not inl.any():
        return 0.0
    return math.sqrt(float((d[inl] ** 2).mean()))


def icp(src, dst, thr=0.02, iters=50, tol=1e-6):
    R, t = np.eye(3), np.zeros(3)
    base = inlier_rmse(src, dst, thr)
    prev = base
    moved = src
    solved = False
    for _ in range(iters):
        d, j = brute_nn(moved, dst)
        inl = d <= thr
        if inl.sum() < 3:
            break
        dR, dt = horn_transform(moved[inl], dst[j[inl]])
        R, t = dR @ R, dR @ t + dt
        moved = src @ R.T + t
        solved = True
        rmse = inlier_rmse(moved, dst, thr)
        if prev - rmse < tol:
            prev = rmse
            break
        prev = rmse
    if not solved or prev > base:
        return np.eye(3), np.zeros(3)
    return R, t


def occupied(points, grid):
    v = 2.0 / grid
    cells = set()
    for x, y, z in np.asarray(points).tolist():
        cell = tuple(min(max(math.floor((c + 1.0) / v), 0), grid - 1) for c in (x, y, z))
        cells.add(cell)
    return cells


def chamfer(p, g):
    return brute_nn(p, g)[0].mean() + brute_nn(g, p)[0].mean()


def f1(p, g, tau):
    prec = float((brute_nn(p, g)[0] <= tau).mean())
    rec = float((brute_nn(g, p)[0] <= tau).mean())
    f = 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec)
    return prec, rec, f


def hungarian(cost):
    """Minimum-cost perfect matching on a square matrix (potentials + augmenting paths)."""
    a = np.asarray(cost, dtype=np.float64)
    n = a.shape[0]
    INF = float("inf")
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: row matched to column j (1-based, 0 = none)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = a[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], INF)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    match = np.zeros(n, dtype=np.int64)
    for j in range(1, n + 1):
        match[p[j] - 1] = j - 1
    return match


def exhaustive_assignment(cost):
    """Minimum total cost over all n! bijections."""
    cost = np.asarray(cost, dtype=np.float64)
    n = len(cost)
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64).reshape(-1, n)
    return float(cost[np.arange(n), perms].sum(axis=1).min())


def pairwise(p, g):
    return np.sqrt(((p[:, None, :] - g[None, :, :]) ** 2).sum(-1))


def pick(n_total, n, seed):
    if n_total <= n:
        return np.arange(n_total)
    rng = np.random.Generator(np.random.PCG64(seed & (2**64 - 1)))
    return rng.choice(n_total, size=n, replace=False)


def emd(p, g, cap, seed):
    n = min(len(p), len(g), cap)
    ps, gs = p[pick(len(p), n, seed)], g[pick(len(g), n, seed)]
    cost = pairwise(ps, gs)
    match = hungarian(cost)
    return float(cost[np.arange(n), match].sum() / n)


def evaluate(pred, gt, tau=0.01, grid=64, cap=2048, seed=0, thr=0.02, iters=50, tol=1e-6):
    pn, gn = normalize(pred), normalize(gt)
    R, t = icp(pn, gn, thr, iters, tol)
    pa = pn @ R.T + t
    prec, rec, f = f1(pa, gn, tau)
    A, B = occupied(pa, grid), occupied(gn, grid)
    inter = len(A & B)
    return {
        "f1": f,
        "precision": prec,
        "recall": rec,
        "voxel_iou": inter / len(A | B),
        "voxel_dice": 2 * inter / (len(A) + len(B)),
        "chamfer": float(chamfer(pa, gn)),
        "emd": emd(pa, gn, cap, seed),
    }


def boundary_points(bits, spacing):
    """Boundary voxels by explicit 6-neighbour checks (out of bounds counts as empty)."""
    bits = np.asarray(bits, dtype=bool)
    nx, ny, nz = bits.shape
    out = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if not bits[i, j, k]:
                    continue
                interior = True
                for di, dj, dk in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                    a, b, c = i + di, j + dj, k + dk
                    if not (0 <= a < nx and 0 <= b < ny and 0 <= c < nz) or not bits[a, b, c]:
                        interior = False
                        break
                if not interior:
                    out.append((i * spacing[0], j * spacing[1], k * spacing[2]))
    return np.array(out, dtype=np.float64).reshape(-1, 3)
