"""Independent reference implementations used only by the tests.

Each oracle is deliberately coded from a different formulation than the
library (plane + barycentric instead of Moller-Trumbore, Krueger series
instead of Snyder, shoelace instead of cross products, BFS instead of
scipy labeling) so agreement is meaningful.
"""

import math
from collections import deque

import numpy as np

SKY = 6
Z_NEAR = 0.01


def brute_force_render(mesh, state, datum):
    """All-faces ray cast, one pixel at a time; returns (classes, depths).

    Plane-intersection + barycentric formulation (the library uses
    Moller-Trumbore) with the same smallest-t / lowest-face-index tie rule.
    """
    from semmap.geometry import pose_to_transform

    k = state.intrinsics
    T = pose_to_transform(state.pose, datum)
    R = T.matrix[:3, :3]
    origin = T.matrix[:3, 3]

    v0 = mesh.vertices[mesh.faces[:, 0]]
    v1 = mesh.vertices[mesh.faces[:, 1]]
    v2 = mesh.vertices[mesh.faces[:, 2]]
    ab = v1 - v0
    ac = v2 - v0
    normal = np.cross(ab, ac)
    d00 = np.einsum("ij,ij->i", ab, ab)
    d01 = np.einsum("ij,ij->i", ab, ac)
    d11 = np.einsum("ij,ij->i", ac, ac)
    bary_den = d00 * d11 - d01 * d01
    plane_num = np.einsum("ij,ij->i", normal, v0 - origin)

    u0, p0 = k.principal_point
    n_faces = len(v0)
    classes = np.full((k.height, k.width), SKY, dtype=np.uint8)
    depths = np.full((k.height, k.width), np.inf)
    eps = 0.0  # inclusive bounds, matching the renderer
    for v in range(k.height):
        for u in range(k.width):
            d_local = np.array([(u + 0.5 - u0) / k.focal_px,
                                (v + 0.5 - p0) / k.focal_px, 1.0])
            d = R @ d_local
            denom = normal @ d
            with np.errstate(divide="ignore", invalid="ignore"):
                t = plane_num / denom
                p = origin[None, :] + t[:, None] * d[None, :]
                ap = p - v0
                d20 = np.einsum("ij,ij->i", ap, ab)
                d21 = np.einsum("ij,ij->i", ap, ac)
                bv = (d11 * d20 - d01 * d21) / bary_den
                bw = (d00 * d21 - d01 * d20) / bary_den
            hit = (
                (denom != 0) & (bary_den != 0) & (t >= Z_NEAR)
                & (bv >= -eps) & (bw >= -eps) & (bv + bw <= 1.0 + eps)
            )
            if not hit.any():
                continue
            th = np.where(hit, t, np.inf)
            best_t = th.min()
            best_f = int(np.nonzero(th == best_t)[0][0])
            classes[v, u] = mesh.classes[best_f]
            depths[v, u] = best_t
    return classes, depths


def krueger_forward(lat_deg, lon_deg, a, f, lon0_deg, lat0_deg, k0, fe, fn):
    """Transverse-Mercator forward via the Krueger n-series (order n^4)."""
    n = f / (2.0 - f)
    A = a / (1 + n) * (1 + n**2 / 4 + n**4 / 64)
    alpha = [
        n / 2 - 2 * n**2 / 3 + 5 * n**3 / 16 + 41 * n**4 / 180,
        13 * n**2 / 48 - 3 * n**3 / 5 + 557 * n**4 / 1440,
        61 * n**3 / 240 - 103 * n**4 / 140,
        49561 * n**4 / 161280,
    ]
    e2 = f * (2 - f)
    e = math.sqrt(e2)

    def _xi_eta(lat, lon):
        phi = math.radians(lat)
        lam = math.radians(lon - lon0_deg)
        t = math.sinh(
            math.atanh(math.sin(phi))
            - e * math.atanh(e * math.sin(phi))
        )
        xi_p = math.atan2(t, math.cos(lam))
        eta_p = math.atanh(math.sin(lam) / math.sqrt(1 + t * t))
        xi = xi_p
        eta = eta_p
        for j, aj in enumerate(alpha, start=1):
            xi += aj * math.sin(2 * j * xi_p) * math.cosh(2 * j * eta_p)
            eta += aj * math.cos(2 * j * xi_p) * math.sinh(2 * j * eta_p)
        return xi, eta

    xi, eta = _xi_eta(lat_deg, lon_deg)
    xi0, _ = _xi_eta(lat0_deg, lon0_deg)
    easting = fe + k0 * A * eta
    northing = fn + k0 * A * (xi - xi0)
    return easting, northing


def shoelace_quad_area(corners):
    """Quad area via 2D shoelace after projecting onto the quad's plane."""
    corners = np.asarray(corners, dtype=float)
    a, b, c, d = corners
    normal = np.cross(b - a, c - a)
    if np.linalg.norm(normal) == 0.0:
        normal = np.cross(b - a, d - a)
    normal = normal / np.linalg.norm(normal)
    u = b - a
    u = u / np.linalg.norm(u)
    w = np.cross(normal, u)
    xy = np.array([[(p - a) @ u, (p - a) @ w] for p in corners])
    s = 0.0
    for i in range(4):
        x0, y0 = xy[i]
        x1, y1 = xy[(i + 1) % 4]
        s += x0 * y1 - x1 * y0
    return abs(s) / 2.0


def flood_fill_label(mask):
    """BFS 4-connected labeling; labels assigned in row-major discovery order."""
    mask = np.asarray(mask)
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=int)
    count = 0
    for r in range(h):
        for c in range(w):
            if mask[r, c] and labels[r, c] == 0:
                count += 1
                q = deque([(r, c)])
                labels[r, c] = count
                while q:
                    y, x = q.popleft()
                    for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                        yy, xx = y + dy, x + dx
                        if (0 <= yy < h and 0 <= xx < w
                                and mask[yy, xx] and labels[yy, xx] == 0):
                            labels[yy, xx] = count
                            q.append((yy, xx))
    return labels, count


def nearest_descriptor_scan(descriptors, point):
    """Exhaustive min-distance scan; ties to the smallest id."""
    point = np.asarray(point, dtype=float)
    best = None
    best_key = None
    for d in descriptors:
        p = np.array([d.position.easting, d.position.northing, d.position.up])
        key = (float(np.linalg.norm(p - point)), d.id)
        if best_key is None or key < best_key:
            best, best_key = d, key
    return best
