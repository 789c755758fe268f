"""BVH-accelerated ray casting over a semantic mesh.

The acceleration structure is semantically invisible: for every ray the
nearest hit is selected by smallest ray parameter, ties broken by lowest
original face index, so results are identical to a brute-force scan over
all faces regardless of traversal order.

Ray parameter convention: directions carry a unit z-component in the
camera frame, so the parameter of a hit equals its camera depth.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

from .geometry import Z_NEAR
from .scene import SemanticMesh

SKY_CLASS = 6

_LEAF_SIZE = 4


class MeshBVH:
    """Flattened median-split BVH over a mesh's triangles."""

    def __init__(self, mesh: SemanticMesh):
        self.mesh = mesh
        tris = mesh.vertices[mesh.faces]  # (F, 3, 3)
        f = len(tris)
        self.v0 = np.ascontiguousarray(tris[:, 0], dtype=np.float64)
        self.e1 = np.ascontiguousarray(tris[:, 1] - tris[:, 0], dtype=np.float64)
        self.e2 = np.ascontiguousarray(tris[:, 2] - tris[:, 0], dtype=np.float64)
        self.classes = np.ascontiguousarray(mesh.classes, dtype=np.uint8)

        if f == 0:
            self.node_min = np.zeros((1, 3))
            self.node_max = np.full((1, 3), -1.0)  # inverted box: never hit
            self.node_a = np.array([0], dtype=np.int64)
            self.node_b = np.array([0], dtype=np.int64)
            self.node_leaf = np.array([True])
            self.order = np.zeros(0, dtype=np.int64)
            self.tri_index = np.zeros(0, dtype=np.int64)
            self.tri_class = np.zeros(0, dtype=np.uint8)
            return

        lo = tris.min(axis=1)
        hi = tris.max(axis=1)
        centers = tris.mean(axis=1)

        order = np.arange(f, dtype=np.int64)
        n_min, n_max, n_a, n_b, n_leaf = [], [], [], [], []

        def build(idx):
            node = len(n_min)
            n_min.append(lo[idx].min(axis=0))
            n_max.append(hi[idx].max(axis=0))
            n_a.append(0)
            n_b.append(0)
            n_leaf.append(False)
            if len(idx) <= _LEAF_SIZE:
                start = build.cursor
                order[start:start + len(idx)] = idx
                build.cursor += len(idx)
                n_a[node] = start
                n_b[node] = start + len(idx)
                n_leaf[node] = True
                return node
            ext = n_max[node] - n_min[node]
            axis = int(np.argmax(ext))
            key = centers[idx, axis]
            mid = len(idx) // 2
            part = idx[np.argsort(key, kind="stable")]
            left = build(part[:mid])
            right = build(part[mid:])
            n_a[node] = left
            n_b[node] = right
            return node

        build.cursor = 0
        build(order.copy())
        self.node_min = np.ascontiguousarray(np.array(n_min))
        self.node_max = np.ascontiguousarray(np.array(n_max))
        self.node_a = np.array(n_a, dtype=np.int64)
        self.node_b = np.array(n_b, dtype=np.int64)
        self.node_leaf = np.array(n_leaf)
        self.order = order
        # Reorder triangle data to leaf order; keep original indices for ties.
        self.v0 = np.ascontiguousarray(self.v0[order])
        self.e1 = np.ascontiguousarray(self.e1[order])
        self.e2 = np.ascontiguousarray(self.e2[order])
        self.tri_index = np.ascontiguousarray(order)
        self.tri_class = np.ascontiguousarray(self.classes[order])

    def kernel_args(self):
        return (
            self.node_min, self.node_max, self.node_a, self.node_b, self.node_leaf,
            self.v0, self.e1, self.e2, self.tri_index, self.tri_class,
        )


@njit(cache=True, error_model="numpy", inline="always")
def _ray_node_hit(ox, oy, oz, dx, dy, dz, ix, iy, iz, bmin, bmax, tmax):
    tn = -np.inf
    tf = np.inf
    if dx == 0.0:
        if ox < bmin[0] or ox > bmax[0]:
            return False
    else:
        t0 = (bmin[0] - ox) * ix
        t1 = (bmax[0] - ox) * ix
        if t0 > t1:
            t0, t1 = t1, t0
        tn = t0
        tf = t1
    if dy == 0.0:
        if oy < bmin[1] or oy > bmax[1]:
            return False
    else:
        t0 = (bmin[1] - oy) * iy
        t1 = (bmax[1] - oy) * iy
        if t0 > t1:
            t0, t1 = t1, t0
        if t0 > tn:
            tn = t0
        if t1 < tf:
            tf = t1
    if dz == 0.0:
        if oz < bmin[2] or oz > bmax[2]:
            return False
    else:
        t0 = (bmin[2] - oz) * iz
        t1 = (bmax[2] - oz) * iz
        if t0 > t1:
            t0, t1 = t1, t0
        if t0 > tn:
            tn = t0
        if t1 < tf:
            tf = t1
    return tf >= tn and tf >= Z_NEAR and tn <= tmax


@njit(cache=True, error_model="numpy")
def _cast_ray(ox, oy, oz, dx, dy, dz, stack,
              node_min, node_max, node_a, node_b, node_leaf,
              v0, e1, e2, tri_index, tri_class):
    """Nearest hit along one ray: returns (t, face_index, class) or (inf, -1, SKY)."""
    ix = 1.0 / dx
    iy = 1.0 / dy
    iz = 1.0 / dz
    best_t = np.inf
    best_face = -1
    best_class = SKY_CLASS
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        if not _ray_node_hit(ox, oy, oz, dx, dy, dz, ix, iy, iz,
                             node_min[node], node_max[node], best_t):
            continue
        if node_leaf[node]:
            for k in range(node_a[node], node_b[node]):
                p0x = v0[k, 0]
                p0y = v0[k, 1]
                p0z = v0[k, 2]
                e1x = e1[k, 0]
                e1y = e1[k, 1]
                e1z = e1[k, 2]
                e2x = e2[k, 0]
                e2y = e2[k, 1]
                e2z = e2[k, 2]
                # Moller-Trumbore, inclusive bounds
                px = dy * e2z - dz * e2y
                py = dz * e2x - dx * e2z
                pz = dx * e2y - dy * e2x
                det = e1x * px + e1y * py + e1z * pz
                if det == 0.0:
                    continue
                inv = 1.0 / det
                tx = ox - p0x
                ty = oy - p0y
                tz = oz - p0z
                u = (tx * px + ty * py + tz * pz) * inv
                if u < 0.0 or u > 1.0:
                    continue
                qx = ty * e1z - tz * e1y
                qy = tz * e1x - tx * e1z
                qz = tx * e1y - ty * e1x
                v = (dx * qx + dy * qy + dz * qz) * inv
                if v < 0.0 or u + v > 1.0:
                    continue
                t = (e2x * qx + e2y * qy + e2z * qz) * inv
                if t <= Z_NEAR:
                    continue
                fi = tri_index[k]
                if t < best_t or (t == best_t and fi < best_face):
                    best_t = t
                    best_face = fi
                    best_class = tri_class[k]
        else:
            stack[top] = node_a[node]
            stack[top + 1] = node_b[node]
            top += 2
    return best_t, best_face, best_class


@njit(cache=True, error_model="numpy", parallel=True)
def render_kernel(origin, rot, dirs_local,
                  node_min, node_max, node_a, node_b, node_leaf,
                  v0, e1, e2, tri_index, tri_class):
    """Cast one ray per pixel; returns flat (classes, depths)."""
    n = dirs_local.shape[0]
    classes = np.empty(n, dtype=np.uint8)
    depths = np.empty(n, dtype=np.float64)
    for i in prange(n):
        stack = np.empty(64, dtype=np.int64)
        dx = (rot[0, 0] * dirs_local[i, 0] + rot[0, 1] * dirs_local[i, 1]
              + rot[0, 2] * dirs_local[i, 2])
        dy = (rot[1, 0] * dirs_local[i, 0] + rot[1, 1] * dirs_local[i, 1]
              + rot[1, 2] * dirs_local[i, 2])
        dz = (rot[2, 0] * dirs_local[i, 0] + rot[2, 1] * dirs_local[i, 1]
              + rot[2, 2] * dirs_local[i, 2])
        t, _, c = _cast_ray(origin[0], origin[1], origin[2], dx, dy, dz, stack,
                            node_min, node_max, node_a, node_b, node_leaf,
                            v0, e1, e2, tri_index, tri_class)
        classes[i] = c
        depths[i] = t
    return classes, depths


@njit(cache=True, error_model="numpy", parallel=True)
def score_kernel(cam_flat, dirs_local, origins, rots,
                 node_min, node_max, node_a, node_b, node_leaf,
                 v0, e1, e2, tri_index, tri_class):
    """Render each candidate pose and score it against a camera image.

    Returns per-candidate (agreement, mean-class-IoU).  Candidates are
    independent, so results do not depend on the degree of parallelism.
    """
    n_px = dirs_local.shape[0]
    n_cand = origins.shape[0]
    agree = np.empty(n_cand, dtype=np.float64)
    miou = np.empty(n_cand, dtype=np.float64)
    for c in prange(n_cand):
        stack = np.empty(64, dtype=np.int64)
        rot = rots[c]
        ox = origins[c, 0]
        oy = origins[c, 1]
        oz = origins[c, 2]
        inter = np.zeros(9, dtype=np.int64)
        union = np.zeros(9, dtype=np.int64)
        same = 0
        for i in range(n_px):
            dx = (rot[0, 0] * dirs_local[i, 0] + rot[0, 1] * dirs_local[i, 1]
                  + rot[0, 2] * dirs_local[i, 2])
            dy = (rot[1, 0] * dirs_local[i, 0] + rot[1, 1] * dirs_local[i, 1]
                  + rot[1, 2] * dirs_local[i, 2])
            dz = (rot[2, 0] * dirs_local[i, 0] + rot[2, 1] * dirs_local[i, 1]
                  + rot[2, 2] * dirs_local[i, 2])
            _, _, cls = _cast_ray(ox, oy, oz, dx, dy, dz, stack,
                                  node_min, node_max, node_a, node_b, node_leaf,
                                  v0, e1, e2, tri_index, tri_class)
            cam_c = cam_flat[i]
            if cam_c == cls:
                same += 1
                inter[cls] += 1
                union[cls] += 1
            else:
                union[cam_c] += 1
                union[cls] += 1
        agree[c] = same / n_px
        s = 0.0
        k = 0
        for j in range(9):
            if union[j] > 0:
                s += inter[j] / union[j]
                k += 1
        miou[c] = s / k if k > 0 else 0.0
    return agree, miou
