"""Vectorized software rasterization: z-buffers, visibility, mesh shading.

Triangles are expanded into (face, pixel) pairs over their screen bounding
boxes; the depth test runs as a scatter-min over the whole batch, and ties
resolve to the lowest face index, so the result is deterministic and
independent of face order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import brdf as brdf_mod
from .cameras import CameraView
from .mesh import TriangleMesh


@dataclass
class Raster:
    depth: np.ndarray       # [H,W] float64, +inf at background
    tri: np.ndarray         # [H,W] int64, -1 at background
    bary: np.ndarray        # [H,W,3] perspective-correct barycentrics

    @property
    def mask(self) -> np.ndarray:
        return self.tri >= 0


def _candidate_pairs(uv, z, faces, width, height):
    """Expand faces into per-pixel candidates inside their bounding boxes."""
    u, v = uv[:, 0], uv[:, 1]
    tri_u = u[faces]  # [T,3]
    tri_v = v[faces]
    xmin = np.maximum(np.ceil(tri_u.min(axis=1)), 0).astype(np.int64)
    xmax = np.minimum(np.floor(tri_u.max(axis=1)), width - 1).astype(np.int64)
    ymin = np.maximum(np.ceil(tri_v.min(axis=1)), 0).astype(np.int64)
    ymax = np.minimum(np.floor(tri_v.max(axis=1)), height - 1).astype(np.int64)
    bw = xmax - xmin + 1
    bh = ymax - ymin + 1
    area = ((tri_u[:, 1] - tri_u[:, 0]) * (tri_v[:, 2] - tri_v[:, 0])
            - (tri_u[:, 2] - tri_u[:, 0]) * (tri_v[:, 1] - tri_v[:, 0]))
    keep = (bw > 0) & (bh > 0) & (np.abs(area) > 1e-14)
    kept = np.nonzero(keep)[0]
    if len(kept) == 0:
        return None
    counts = (bw * bh)[kept]
    total = int(counts.sum())
    fi = np.repeat(np.arange(len(kept)), counts)
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    local = np.arange(total) - offsets[fi]
    px = xmin[kept][fi] + local % bw[kept][fi]
    py = ymin[kept][fi] + local // bw[kept][fi]

    fk = kept[fi]
    a = area[fk]
    u0, u1, u2 = tri_u[fk].T
    v0, v1, v2 = tri_v[fk].T
    l0 = ((v1 - v2) * (px - u2) + (u2 - u1) * (py - v2)) / a
    l1 = ((v2 - v0) * (px - u2) + (u0 - u2) * (py - v2)) / a
    l2 = 1.0 - l0 - l1
    inside = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)

    z0, z1, z2 = z[faces[fk]].T
    zinv = l0 / z0 + l1 / z1 + l2 / z2
    zpx = 1.0 / zinv
    ok = inside & (zpx > 0)
    lam = np.stack([l0 / z0, l1 / z1, l2 / z2], axis=1) * zpx[:, None]
    return fk[ok], px[ok], py[ok], zpx[ok], lam[ok]


def rasterize(vertices: np.ndarray, faces: np.ndarray, view: CameraView,
              need_attrs: bool = True) -> Raster:
    H, W = view.height, view.width
    uv, z, in_front = view.project(vertices)
    zbuf = np.full(H * W, np.inf)
    tri = np.full(H * W, -1, dtype=np.int64)
    bary = np.zeros((H * W, 3))

    usable = in_front[faces].all(axis=1)
    faces_u = faces[usable]
    face_ids = np.nonzero(usable)[0]
    if len(faces_u):
        cand = _candidate_pairs(uv, z, faces_u, W, H)
    else:
        cand = None
    if cand is not None:
        fk, px, py, zpx, lam = cand
        lin = py * W + px
        np.minimum.at(zbuf, lin, zpx)
        if need_attrs:
            winners = zpx == zbuf[lin]
            order = np.full(H * W, np.iinfo(np.int64).max, dtype=np.int64)
            np.minimum.at(order, lin[winners], fk[winners])
            final = winners & (fk == order[lin])
            tri[lin[final]] = face_ids[fk[final]]
            bary[lin[final]] = lam[final]
    return Raster(depth=zbuf.reshape(H, W), tri=tri.reshape(H, W),
                  bary=bary.reshape(H, W, 3))


def depth_buffer(vertices: np.ndarray, faces: np.ndarray, view: CameraView) -> np.ndarray:
    return rasterize(vertices, faces, view, need_attrs=False).depth


def interpolate(raster: Raster, faces: np.ndarray, attr: np.ndarray) -> np.ndarray:
    """Barycentric interpolation of a per-vertex attribute [K,D] -> [D,H,W];
    zero at background pixels."""
    H, W = raster.tri.shape
    a = np.asarray(attr, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    out = np.zeros((a.shape[1], H, W))
    m = raster.mask
    tri = raster.tri[m]
    lam = raster.bary[m]  # [P,3]
    vals = (a[faces[tri, 0]] * lam[:, :1] + a[faces[tri, 1]] * lam[:, 1:2]
            + a[faces[tri, 2]] * lam[:, 2:3])
    out[:, m] = vals.T
    return out


def visible_vertices(mesh: TriangleMesh, view: CameraView, eps_rel: float = 0.01,
                     zbuf: np.ndarray | None = None, backface: bool = True) -> np.ndarray:
    """Per-vertex visibility: projects inside the image, in front of the
    camera, passes a z-buffer test with tolerance eps_rel * depth, and (when
    normals exist) faces the camera."""
    H, W = view.height, view.width
    if zbuf is None:
        zbuf = depth_buffer(mesh.vertices, mesh.faces, view)
    uv, z, in_front = view.project(mesh.vertices)
    inside = (uv[:, 0] >= 0) & (uv[:, 0] <= W - 1) & (uv[:, 1] >= 0) & (uv[:, 1] <= H - 1)
    # conservative buffer lookup: farthest depth over the 2x2 footprint, so
    # steep depth slopes across a pixel do not shadow the surface itself
    x0 = np.clip(np.floor(uv[:, 0]).astype(np.int64), 0, W - 1)
    y0 = np.clip(np.floor(uv[:, 1]).astype(np.int64), 0, H - 1)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    zb = np.maximum(np.maximum(zbuf[y0, x0], zbuf[y0, x1]),
                    np.maximum(zbuf[y1, x0], zbuf[y1, x1]))
    vis = in_front & inside & (z <= zb + eps_rel * np.abs(z))
    if backface:
        normals = mesh.vertex_normals
        if normals is None:
            normals = mesh.compute_vertex_normals()
        to_cam = view.camera_center[None] - mesh.vertices
        vis &= (normals * to_cam).sum(axis=1) > 0
    return vis


def project_vertices(mesh: TriangleMesh, rig, eps_rel: float = 0.01):
    """Per-view vertex projections and visibility flags.

    Returns (uv [n,K,2], vis [n,K]); projections of behind-camera vertices
    are zeroed (and flagged invisible).
    """
    n = len(rig.views)
    K = mesh.num_vertices
    uv_all = np.zeros((n, K, 2))
    vis_all = np.zeros((n, K), dtype=bool)
    for i, view in enumerate(rig.views):
        uv, z, in_front = view.project(mesh.vertices)
        uv = np.where(in_front[:, None], uv, 0.0)
        uv_all[i] = uv
        vis_all[i] = visible_vertices(mesh, view, eps_rel=eps_rel)
    return uv_all, vis_all


def render_mesh(mesh: TriangleMesh, view: CameraView, intensity: float | None = None,
                light_position: np.ndarray | None = None, r_min: float = brdf_mod.R_MIN):
    """Rasterize and shade a BRDF-attributed mesh under a point light
    (collocated with the camera unless light_position is given).

    Returns (image [3,H,W], mask [H,W], raster).
    """
    if not mesh.has_brdf:
        raise ValueError("mesh has no per-vertex BRDF attributes")
    ras = rasterize(mesh.vertices, mesh.faces, view)
    m = ras.mask
    H, W = m.shape
    img = np.zeros((3, H, W))
    if not m.any():
        return img, m, ras

    pos = interpolate(ras, mesh.faces, mesh.vertices)[:, m]          # [3,P]
    nrm = interpolate(ras, mesh.faces, mesh.brdf_normal)[:, m]
    nrm /= np.maximum(np.linalg.norm(nrm, axis=0, keepdims=True), 1e-12)
    alb = np.clip(interpolate(ras, mesh.faces, mesh.albedo)[:, m], 0.0, 1.0)
    rough = np.clip(interpolate(ras, mesh.faces, mesh.roughness)[:, m], r_min, 1.0)
    spec = np.clip(interpolate(ras, mesh.faces, mesh.specular)[:, m], 0.0, 1.0)

    cam = view.camera_center
    light = cam if light_position is None else np.asarray(light_position, dtype=np.float64)
    to_light = light[:, None] - pos
    dist = np.linalg.norm(to_light, axis=0, keepdims=True)
    ldir = to_light / np.maximum(dist, 1e-12)
    to_view = cam[:, None] - pos
    vdir = to_view / np.maximum(np.linalg.norm(to_view, axis=0, keepdims=True), 1e-12)

    sample = brdf_mod.BrdfSample(albedo=alb, normal=nrm, roughness=rough, specular=spec)
    q = brdf_mod.ShadingQuery(
        light_dir=ldir,
        intensity=float(view.light_intensity if intensity is None else intensity),
        distance=dist)
    img[:, m] = brdf_mod.shade_point(sample, q, view_dir=vdir, r_min=r_min)
    return img, m, ras
