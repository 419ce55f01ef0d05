"""Deferred G-buffer rasterization.

Software rasterizer producing per-pixel triangle id, perspective-correct
barycentrics, UV, world position, depth and coverage. Cloth is two-sided, so
back faces are kept. There is no anti-aliasing and no fill-rule tie breaking:
when two triangles interpolate to exactly the same depth at a pixel, the
first-processed one wins (depth test is a strict ``<``).

Gradients never flow through geometry; this module is plain numpy.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import Camera, TriMesh

# Triangles whose projected area (in pixels^2, times 2) falls below this are
# skipped rather than producing NaN barycentrics.
DEGENERATE_AREA_EPS = 1e-12
# Triangles with any vertex closer than this to the camera plane are skipped
# (no near-plane clipping; scenes keep geometry well in front of the camera).
NEAR_PLANE = 1e-6


@dataclass
class GBuffer:
    """Per-pixel geometry buffers from one rasterization pass."""

    triangle_id: np.ndarray  # (H, W) int32, -1 where empty
    bary: np.ndarray         # (H, W, 3) perspective-correct, sums to 1 on mask
    uv: np.ndarray           # (H, W, 2)
    world_pos: np.ndarray    # (H, W, 3) meters
    depth: np.ndarray        # (H, W) camera-space depth, +inf where empty
    mask: np.ndarray         # (H, W) uint8 in {0, 1}

    @property
    def resolution(self) -> tuple[int, int]:
        return self.mask.shape[0], self.mask.shape[1]

    def coverage(self) -> int:
        return int(self.mask.sum())


def project_vertices(vertices: np.ndarray, camera: Camera) -> tuple[np.ndarray, np.ndarray]:
    """Project world vertices to pixel coordinates. Returns (uv_px (V,2), z (V,))."""
    cam = camera.world_to_camera(np.asarray(vertices, dtype=np.float64))
    z = cam[:, 2]
    safe_z = np.where(z > NEAR_PLANE, z, 1.0)
    u = camera.fx * cam[:, 0] / safe_z + camera.cx
    v = camera.fy * cam[:, 1] / safe_z + camera.cy
    return np.stack([u, v], axis=1), z


def rasterize(vertices: np.ndarray, mesh: TriMesh, camera: Camera,
              resolution: tuple[int, int]) -> GBuffer:
    """Rasterize ``mesh`` topology at deformed ``vertices`` into a GBuffer.

    ``vertices`` may differ from the mesh's rest vertices but must match its
    vertex count. Pixel centers sit at (col + 0.5, row + 0.5).
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    if vertices.shape != (mesh.num_vertices, 3):
        raise ValueError(
            f"vertex array {vertices.shape} does not match mesh ({mesh.num_vertices}, 3)"
        )
    h, w = resolution
    tri_id = np.full((h, w), -1, dtype=np.int32)
    bary = np.zeros((h, w, 3), dtype=np.float64)
    uv_buf = np.zeros((h, w, 2), dtype=np.float64)
    pos_buf = np.zeros((h, w, 3), dtype=np.float64)
    depth = np.full((h, w), np.inf, dtype=np.float64)

    if mesh.num_faces == 0:
        return GBuffer(tri_id, bary, uv_buf, pos_buf, depth,
                       np.zeros((h, w), dtype=np.uint8))

    screen, z = project_vertices(vertices, camera)

    for f in range(mesh.num_faces):
        i0, i1, i2 = mesh.faces[f]
        z0, z1, z2 = z[i0], z[i1], z[i2]
        if z0 <= NEAR_PLANE or z1 <= NEAR_PLANE or z2 <= NEAR_PLANE:
            continue
        x0, y0 = screen[i0]
        x1, y1 = screen[i1]
        x2, y2 = screen[i2]

        area2 = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if abs(area2) < DEGENERATE_AREA_EPS:
            continue
        orient = 1.0 if area2 > 0.0 else -1.0

        xmin = max(int(np.floor(min(x0, x1, x2) - 0.5)), 0)
        xmax = min(int(np.ceil(max(x0, x1, x2) - 0.5)), w - 1)
        ymin = max(int(np.floor(min(y0, y1, y2) - 0.5)), 0)
        ymax = min(int(np.ceil(max(y0, y1, y2) - 0.5)), h - 1)
        if xmin > xmax or ymin > ymax:
            continue

        px = np.arange(xmin, xmax + 1, dtype=np.float64) + 0.5
        py = np.arange(ymin, ymax + 1, dtype=np.float64) + 0.5
        gx, gy = np.meshgrid(px, py)

        # edge function e(a, b, p) = (bx-ax)(py-ay) - (by-ay)(px-ax); the sum
        # of the three equals area2, so orient makes them all >= 0 inside.
        w0 = ((x2 - x1) * (gy - y1) - (y2 - y1) * (gx - x1)) * orient
        w1 = ((x0 - x2) * (gy - y2) - (y0 - y2) * (gx - x2)) * orient
        w2 = ((x1 - x0) * (gy - y0) - (y1 - y0) * (gx - x0)) * orient
        inside = (w0 >= 0.0) & (w1 >= 0.0) & (w2 >= 0.0)
        if not inside.any():
            continue

        wsum = w0 + w1 + w2
        # Perspective-correct weights: divide screen barycentrics by vertex depth.
        d0 = w0 / (wsum * z0)
        d1 = w1 / (wsum * z1)
        d2 = w2 / (wsum * z2)
        dsum = d0 + d1 + d2
        pix_depth = 1.0 / dsum

        sub = (slice(ymin, ymax + 1), slice(xmin, xmax + 1))
        closer = inside & (pix_depth < depth[sub])
        if not closer.any():
            continue

        b0 = d0 / dsum
        b1 = d1 / dsum
        b2 = d2 / dsum

        depth[sub] = np.where(closer, pix_depth, depth[sub])
        tri_id[sub] = np.where(closer, f, tri_id[sub])
        for k, bk in enumerate((b0, b1, b2)):
            bary[sub][..., k] = np.where(closer, bk, bary[sub][..., k])
        corner_uv = mesh.uv[f]  # (3, 2)
        for k in range(2):
            uv_k = b0 * corner_uv[0, k] + b1 * corner_uv[1, k] + b2 * corner_uv[2, k]
            uv_buf[sub][..., k] = np.where(closer, uv_k, uv_buf[sub][..., k])
        va, vb, vc = vertices[i0], vertices[i1], vertices[i2]
        for k in range(3):
            pos_k = b0 * va[k] + b1 * vb[k] + b2 * vc[k]
            pos_buf[sub][..., k] = np.where(closer, pos_k, pos_buf[sub][..., k])

    mask = (tri_id >= 0).astype(np.uint8)
    return GBuffer(tri_id, bary, uv_buf, pos_buf, depth, mask)


def world_positions_at(gbuffer: GBuffer, mesh: TriMesh,
                       other_vertices: np.ndarray) -> np.ndarray:
    """Re-evaluate covered pixels' surface points against another frame's vertices.

    Pixel correspondence (triangle_id, bary) stays fixed at the rasterized
    frame; only vertex positions change. Linear in the vertex array.
    """
    other = np.asarray(other_vertices, dtype=np.float64)
    if other.shape != (mesh.num_vertices, 3):
        raise ValueError(
            f"vertex array {other.shape} does not match mesh ({mesh.num_vertices}, 3)"
        )
    h, w = gbuffer.resolution
    out = np.zeros((h, w, 3), dtype=np.float64)
    ys, xs = np.nonzero(gbuffer.mask)
    if ys.size == 0:
        return out
    tids = gbuffer.triangle_id[ys, xs]
    corners = other[mesh.faces[tids]]          # (N, 3, 3)
    weights = gbuffer.bary[ys, xs][:, :, None]  # (N, 3, 1)
    out[ys, xs] = (weights * corners).sum(axis=1)
    return out
