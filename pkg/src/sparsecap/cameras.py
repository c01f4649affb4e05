"""Pinhole cameras, the capture rig, and cross-view warping.

Coordinate conventions, used everywhere in this package:
  - right-handed world frame; camera looks down its local +z axis
  - camera transform: x_cam = R @ x_world + t  (R: world-to-camera)
  - pixel origin at the top-left, u along +x (columns), v along +y (rows),
    pixel centers at integer coordinates
  - projection: u = fx*x/z + cx, v = fy*y/z + cy, depth = camera-space z
  - each view's point light sits exactly at the camera center

Images and maps are channels-first float arrays [C,H,W]; depth maps are
[H,W] with a boolean validity mask.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0


@dataclass
class CameraView:
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray      # (3,3) world -> camera
    translation: np.ndarray   # (3,)
    width: int
    height: int
    light_intensity: float = 1.0

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        rtr = self.rotation.T @ self.rotation
        if not np.allclose(rtr, np.eye(3), atol=1e-8):
            raise ValueError("rotation is not orthonormal")
        if np.linalg.det(self.rotation) < 0:
            raise ValueError("rotation has negative determinant")

    @property
    def camera_center(self) -> np.ndarray:
        """Camera (and light) position in world coordinates."""
        return -self.rotation.T @ self.translation

    @property
    def light_position(self) -> np.ndarray:
        return self.camera_center

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        return (points - self.translation) @ self.rotation

    def project(self, points_world: np.ndarray):
        """Project world points [N,3] -> (uv [N,2], z [N], in_front [N])."""
        pc = self.world_to_camera(np.atleast_2d(points_world))
        z = pc[:, 2]
        in_front = z > 0
        zs = np.where(in_front, z, 1.0)
        u = self.fx * pc[:, 0] / zs + self.cx
        v = self.fy * pc[:, 1] / zs + self.cy
        return np.stack([u, v], axis=-1), z, in_front

    def unproject(self, u, v, z, to_world: bool = True):
        """Lift pixels at depth z (camera-space) back to 3D points."""
        x = (np.asarray(u) - self.cx) * z / self.fx
        y = (np.asarray(v) - self.cy) * z / self.fy
        pc = np.stack([x, y, np.broadcast_to(z, np.shape(x))], axis=-1)
        return self.camera_to_world(pc.reshape(-1, 3)).reshape(pc.shape) if to_world else pc

    def pixel_grid(self):
        v, u = np.mgrid[0:self.height, 0:self.width].astype(np.float64)
        return u, v

    def to_dict(self) -> dict:
        ext = np.concatenate([self.rotation, self.translation[:, None]], axis=1)
        return {
            "width": self.width, "height": self.height,
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "extrinsic": ext.tolist(),
            "light_intensity": self.light_intensity,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraView":
        ext = np.asarray(d["extrinsic"], dtype=np.float64)
        return cls(fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
                   rotation=ext[:, :3], translation=ext[:, 3],
                   width=int(d["width"]), height=int(d["height"]),
                   light_intensity=float(d.get("light_intensity", 1.0)))


@dataclass
class CaptureRig:
    views: list
    depth_range: tuple

    def __post_init__(self):
        if len(self.views) < 2:
            raise ValueError("a rig needs at least two views")
        near, far = self.depth_range
        if not (near > 0 and far > near):
            raise ValueError(f"bad depth range ({near}, {far})")
        self.depth_range = (float(near), float(far))

    def __len__(self):
        return len(self.views)

    def save(self, path):
        payload = {"depth_range": list(self.depth_range),
                   "views": [v.to_dict() for v in self.views]}
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1)

    @classmethod
    def load(cls, path) -> "CaptureRig":
        with open(path) as fh:
            payload = json.load(fh)
        return cls(views=[CameraView.from_dict(d) for d in payload["views"]],
                   depth_range=tuple(payload["depth_range"]))


def crop_view(view: CameraView, x0: int, y0: int, width: int, height: int) -> CameraView:
    """Camera for a pixel window of an existing view (same pose, shifted
    principal point). Warps computed against the window cost only its area."""
    return CameraView(fx=view.fx, fy=view.fy, cx=view.cx - x0, cy=view.cy - y0,
                      rotation=view.rotation, translation=view.translation,
                      width=width, height=height,
                      light_intensity=view.light_intensity)


def look_at(position, target, up=(0.0, 1.0, 0.0)) -> tuple:
    """World->camera rotation and translation for a camera at `position`
    looking toward `target` (camera +z axis points at the target)."""
    position = np.asarray(position, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - position
    fwd /= np.linalg.norm(fwd)
    upv = np.asarray(up, dtype=np.float64)
    if abs(np.dot(upv, fwd)) > 0.999:
        upv = np.array([1.0, 0.0, 0.0])
    right = np.cross(upv, fwd)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd], axis=0)
    t = -R @ position
    return R, t


def icosahedron_directions() -> np.ndarray:
    """Unit directions of one icosahedron vertex and its five adjoining
    face centers (the vertex direction first). The vertex-to-face angle is
    about 37 degrees, so all six fit in a ~74 degree cone."""
    phi = GOLDEN
    verts = []
    for a in (-1.0, 1.0):
        for b in (-phi, phi):
            verts.append(np.array([0.0, a, b]))
            verts.append(np.array([a, b, 0.0]))
            verts.append(np.array([b, 0.0, a]))
    verts = np.array(verts)
    apex_idx = int(np.argmax(verts @ np.array([0.0, 1.0, phi])))
    apex = verts[apex_idx]
    edge = 2.0
    nbrs = [v for v in verts if 1e-9 < np.linalg.norm(v - apex) < edge + 1e-9]
    # faces at the apex: neighbor pairs that are themselves adjacent
    centers = []
    for i in range(len(nbrs)):
        for j in range(i + 1, len(nbrs)):
            if np.linalg.norm(nbrs[i] - nbrs[j]) < edge + 1e-9:
                centers.append((apex + nbrs[i] + nbrs[j]) / 3.0)
    assert len(centers) == 5
    # deterministic ordering: by azimuth around the apex direction
    apex_dir = apex / np.linalg.norm(apex)
    ref = np.cross(apex_dir, [1.0, 0.0, 0.0])
    ref /= np.linalg.norm(ref)
    ref2 = np.cross(apex_dir, ref)
    ang = [np.arctan2(np.dot(c, ref2), np.dot(c, ref)) for c in centers]
    centers = [c for _, c in sorted(zip(ang, centers))]
    dirs = [apex_dir] + [c / np.linalg.norm(c) for c in centers]
    return np.array(dirs)


def make_icosahedron_rig(radius: float = 2.5, image_size: int = 128,
                         focal: float | None = None, depth_range=None,
                         light_intensity: float | None = None) -> CaptureRig:
    """Six collocated camera/light views: an icosahedron vertex plus the five
    adjoining face centers, all at `radius` from the origin, looking at it."""
    dirs = icosahedron_directions()
    if focal is None:
        focal = 1.8 * image_size
    if depth_range is None:
        depth_range = (radius - 0.9, radius + 0.9)
    if light_intensity is None:
        light_intensity = float(np.pi * radius * radius)
    c = (image_size - 1) / 2.0
    views = []
    for d in dirs:
        R, t = look_at(d * radius, np.zeros(3))
        views.append(CameraView(fx=focal, fy=focal, cx=c, cy=c, rotation=R,
                                translation=t, width=image_size, height=image_size,
                                light_intensity=light_intensity))
    return CaptureRig(views=views, depth_range=tuple(depth_range))


# ----------------------------------------------------------------------
# sampling / warping
# ----------------------------------------------------------------------
def bilinear_sample(image: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Sample [C,H,W] (or [H,W]) at float pixel coords with zero padding.

    Returns (samples, inside_mask); samples fade to zero at the border.
    """
    squeeze = image.ndim == 2
    img = image[None] if squeeze else image
    C, H, W = img.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    x0 = np.floor(u).astype(np.int64)
    y0 = np.floor(v).astype(np.int64)
    fx = u - x0
    fy = v - y0
    flat = img.reshape(C, H * W)
    out = 0.0
    for dy, dx, w in ((0, 0, (1 - fx) * (1 - fy)), (0, 1, fx * (1 - fy)),
                      (1, 0, (1 - fx) * fy), (1, 1, fx * fy)):
        xc, yc = x0 + dx, y0 + dy
        ok = (xc >= 0) & (xc < W) & (yc >= 0) & (yc < H)
        idx = np.where(ok, yc * W + xc, 0)
        out = out + flat[:, idx] * (w * ok)
    inside = (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1)
    return (out[0] if squeeze else out), inside


def homography_warp(source: np.ndarray, source_view: CameraView,
                    target_view: CameraView, plane_depth: float):
    """Resample `source` (from source_view) as seen by target_view assuming
    all geometry lies on the fronto-parallel plane z = plane_depth in the
    target frame. Returns (warped, inside_mask)."""
    u, v = target_view.pixel_grid()
    pw = target_view.unproject(u, v, float(plane_depth))
    uv, z, in_front = source_view.project(pw.reshape(-1, 3))
    su = uv[:, 0].reshape(u.shape)
    sv = uv[:, 1].reshape(u.shape)
    warped, inside = bilinear_sample(source, su, sv)
    mask = inside & in_front.reshape(u.shape)
    return warped * mask, mask


def warp_image_by_depth(image_j: np.ndarray, view_j: CameraView, view_i: CameraView,
                        depth_i: np.ndarray, valid_i: np.ndarray | None = None):
    """Warp view j's image into view i using view i's depth map.

    Per pixel of view i: lift via depth_i, project into view j, sample.
    Returns (warped [C,H,W], mask [H,W]).
    """
    H, W = depth_i.shape
    if (view_i.height, view_i.width) != (H, W):
        raise ValueError("depth resolution does not match view i")
    if valid_i is None:
        valid_i = depth_i > 0
    u, v = view_i.pixel_grid()
    pw = view_i.unproject(u, v, np.where(valid_i, depth_i, 1.0))
    uv, z, in_front = view_j.project(pw.reshape(-1, 3))
    su = uv[:, 0].reshape(H, W)
    sv = uv[:, 1].reshape(H, W)
    warped, inside = bilinear_sample(image_j, su, sv)
    mask = inside & in_front.reshape(H, W) & valid_i
    return warped * mask, mask


def depth_pair_maps(view_i: CameraView, view_j: CameraView, depth_i: np.ndarray,
                    depth_j: np.ndarray, valid_i: np.ndarray | None = None):
    """Occlusion cue maps for the pair (i, j).

    Z(p)  = depth in camera j of the point lifted from pixel p via depth_i.
    Z*(p) = depth_j sampled at that point's projection in view j.
    A pixel with Z noticeably larger than Z* is occluded in view j.
    Returns (Z, Z*, mask).
    """
    H, W = depth_i.shape
    if valid_i is None:
        valid_i = depth_i > 0
    u, v = view_i.pixel_grid()
    pw = view_i.unproject(u, v, np.where(valid_i, depth_i, 1.0))
    uv, zj, in_front = view_j.project(pw.reshape(-1, 3))
    su = uv[:, 0].reshape(H, W)
    sv = uv[:, 1].reshape(H, W)
    z_in_j = zj.reshape(H, W)
    sampled, inside = bilinear_sample(depth_j, su, sv)
    mask = inside & in_front.reshape(H, W) & valid_i & (sampled > 0)
    return z_in_j * mask, sampled * mask, mask


def light_direction_maps(view_i: CameraView, view_j: CameraView, depth_i: np.ndarray,
                         valid_i: np.ndarray | None = None):
    """Per-pixel unit directions from the surface toward the lights of view i
    and view j, both expressed in view i's camera frame.

    Returns (L_i [3,H,W], L_ij [3,H,W], mask).
    """
    H, W = depth_i.shape
    if valid_i is None:
        valid_i = depth_i > 0
    u, v = view_i.pixel_grid()
    pc = view_i.unproject(u, v, np.where(valid_i, depth_i, 1.0), to_world=False)
    pc = pc.reshape(H, W, 3)
    # light i is at view i's camera center = origin of this frame
    norm_i = np.linalg.norm(pc, axis=-1)
    if np.any(norm_i[valid_i] < 1e-12):
        raise ValueError("surface point coincides with the light position")
    li = -pc / np.maximum(norm_i, 1e-12)[..., None]
    cj_in_i = view_i.world_to_camera(view_j.camera_center[None])[0]
    to_j = cj_in_i[None, None] - pc
    norm_j = np.linalg.norm(to_j, axis=-1)
    if np.any(norm_j[valid_i] < 1e-12):
        raise ValueError("surface point coincides with the light position")
    lij = to_j / np.maximum(norm_j, 1e-12)[..., None]
    mask = valid_i
    li = np.moveaxis(li, -1, 0) * mask
    lij = np.moveaxis(lij, -1, 0) * mask
    return li, lij, mask
