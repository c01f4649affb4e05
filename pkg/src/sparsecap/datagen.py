"""Procedural scenes and ground-truth rendering for end-to-end verification.

A scene combines 1-5 primitive shapes (spheres, cylinders, cubes) with
rigid poses, optional height-field displacement along the surface normal
(seeded value noise) and per-primitive procedural material fields sampled
as solid textures. Scenes materialize into triangle meshes and render with
the shared rasterizer under collocated point lights, emitting exact depth,
normal and material buffers per view. Everything is reproducible from a
single integer seed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import brdf as brdf_mod
from . import cameras, imgio, raster
from .noise import value_noise3

PRIMITIVE_KINDS = ("sphere", "cylinder", "cube")


# ----------------------------------------------------------------------
# primitive tessellation (axis-aligned, origin-centered, analytic normals)
# ----------------------------------------------------------------------
def sphere_mesh(radius: float = 1.0, segments: int = 96, rings: int = 48):
    verts = [np.array([0.0, radius, 0.0]), np.array([0.0, -radius, 0.0])]
    normals = [np.array([0.0, 1.0, 0.0]), np.array([0.0, -1.0, 0.0])]
    for r in range(1, rings):
        theta = np.pi * r / rings
        for s in range(segments):
            phi = 2 * np.pi * s / segments
            n = np.array([np.sin(theta) * np.cos(phi), np.cos(theta),
                          np.sin(theta) * np.sin(phi)])
            verts.append(radius * n)
            normals.append(n)
    faces = []
    def ring_idx(r, s):
        return 2 + (r - 1) * segments + (s % segments)
    for s in range(segments):
        faces.append([0, ring_idx(1, s + 1), ring_idx(1, s)])
        faces.append([1, ring_idx(rings - 1, s), ring_idx(rings - 1, s + 1)])
    for r in range(1, rings - 1):
        for s in range(segments):
            a, b = ring_idx(r, s), ring_idx(r, s + 1)
            c, d = ring_idx(r + 1, s), ring_idx(r + 1, s + 1)
            faces.append([a, b, d])
            faces.append([a, d, c])
    return np.array(verts), np.array(faces, dtype=np.int64), np.array(normals)


def cylinder_mesh(radius: float = 1.0, half_height: float = 1.0,
                  segments: int = 96, rings: int = 24):
    verts, normals, faces = [], [], []
    # side (smooth radial normals), y is the axis
    for r in range(rings + 1):
        y = half_height * (1.0 - 2.0 * r / rings)
        for s in range(segments):
            phi = 2 * np.pi * s / segments
            n = np.array([np.cos(phi), 0.0, np.sin(phi)])
            verts.append(np.array([radius * n[0], y, radius * n[2]]))
            normals.append(n)
    def side_idx(r, s):
        return r * segments + (s % segments)
    for r in range(rings):
        for s in range(segments):
            a, b = side_idx(r, s), side_idx(r, s + 1)
            c, d = side_idx(r + 1, s), side_idx(r + 1, s + 1)
            faces.append([a, b, d])
            faces.append([a, d, c])
    # caps: duplicated rims with axial normals (sharp edge)
    for sign in (1.0, -1.0):
        center = len(verts)
        verts.append(np.array([0.0, sign * half_height, 0.0]))
        normals.append(np.array([0.0, sign, 0.0]))
        rim = len(verts)
        for s in range(segments):
            phi = 2 * np.pi * s / segments
            verts.append(np.array([radius * np.cos(phi), sign * half_height,
                                   radius * np.sin(phi)]))
            normals.append(np.array([0.0, sign, 0.0]))
        for s in range(segments):
            a = rim + s
            b = rim + (s + 1) % segments
            faces.append([center, b, a] if sign > 0 else [center, a, b])
    return np.array(verts), np.array(faces, dtype=np.int64), np.array(normals)


def cube_mesh(half_extents=(1.0, 1.0, 1.0), divisions: int = 24):
    hx, hy, hz = half_extents
    verts, normals, faces = [], [], []
    axes = [(0, np.array([1.0, 0, 0])), (0, np.array([-1.0, 0, 0])),
            (1, np.array([0, 1.0, 0])), (1, np.array([0, -1.0, 0])),
            (2, np.array([0, 0, 1.0])), (2, np.array([0, 0, -1.0]))]
    he = np.array([hx, hy, hz])
    for axis, n in axes:
        u_axis, v_axis = [a for a in range(3) if a != axis]
        base = len(verts)
        lin = np.linspace(-1.0, 1.0, divisions + 1)
        for i in range(divisions + 1):
            for j in range(divisions + 1):
                p = n * he
                p = p.copy()
                p[u_axis] = lin[i] * he[u_axis]
                p[v_axis] = lin[j] * he[v_axis]
                verts.append(p)
                normals.append(n)
        stride = divisions + 1
        for i in range(divisions):
            for j in range(divisions):
                a = base + i * stride + j
                b, c, d = a + 1, a + stride, a + stride + 1
                # orient so the face normal matches n
                p0, p1, p2 = verts[a], verts[b], verts[d]
                if np.dot(np.cross(p1 - p0, p2 - p0), n) > 0:
                    faces.append([a, b, d]); faces.append([a, d, c])
                else:
                    faces.append([a, d, b]); faces.append([a, c, d])
    return np.array(verts), np.array(faces, dtype=np.int64), np.array(normals)


# ----------------------------------------------------------------------
# materials
# ----------------------------------------------------------------------
@dataclass
class MaterialTexture:
    """Procedural solid-texture material; train/test seed streams are disjoint
    (train materials use even seeds, test materials odd)."""

    seed: int
    split: str = "train"
    color_a: tuple = (0.2, 0.2, 0.2)
    color_b: tuple = (0.8, 0.8, 0.8)
    albedo_freq: float = 6.0
    rough_range: tuple = (0.15, 0.9)
    rough_freq: float = 4.0
    spec_range: tuple = (0.02, 0.5)
    spec_freq: float = 5.0
    normal_amp: float = 0.0

    def evaluate(self, points: np.ndarray):
        """Sample material fields at world points [N,3].

        Returns (albedo [3,N], roughness [N], specular [3,N]).
        """
        t = value_noise3(points, self.seed, self.albedo_freq, octaves=3)
        ca = np.asarray(self.color_a)[:, None]
        cb = np.asarray(self.color_b)[:, None]
        albedo = ca + (cb - ca) * t[None]
        r = value_noise3(points, self.seed + 7, self.rough_freq, octaves=2)
        # banded roughness: sharpen the noise into plateaus
        r = np.clip(0.5 + 1.8 * (r - 0.5), 0.0, 1.0)
        rough = self.rough_range[0] + (self.rough_range[1] - self.rough_range[0]) * r
        s = value_noise3(points, self.seed + 13, self.spec_freq, octaves=2)
        spec_sc = self.spec_range[0] + (self.spec_range[1] - self.spec_range[0]) * s
        specular = np.broadcast_to(spec_sc[None], (3, len(points))).copy()
        return albedo, rough, specular

    def perturb_normals(self, points: np.ndarray, normals: np.ndarray):
        """Tangential normal perturbation (off when normal_amp == 0)."""
        if self.normal_amp <= 0:
            return normals
        g = np.stack([value_noise3(points, self.seed + 17 + i, 8.0) - 0.5
                      for i in range(3)], axis=-1)
        g -= (g * normals).sum(axis=-1, keepdims=True) * normals
        out = normals + self.normal_amp * 2.0 * g
        return out / np.maximum(np.linalg.norm(out, axis=-1, keepdims=True), 1e-12)


def material_for(rng: np.random.Generator, split: str, overrides: dict | None = None):
    raw = int(rng.integers(0, 2 ** 30))
    seed = 2 * raw + (1 if split == "test" else 0)
    mat = MaterialTexture(
        seed=seed, split=split,
        color_a=tuple(rng.uniform(0.05, 0.5, 3)),
        color_b=tuple(rng.uniform(0.4, 0.95, 3)),
        albedo_freq=float(rng.uniform(4.0, 9.0)),
        rough_range=(float(rng.uniform(0.12, 0.3)), float(rng.uniform(0.5, 0.95))),
        rough_freq=float(rng.uniform(3.0, 6.0)),
        spec_range=(float(rng.uniform(0.0, 0.1)), float(rng.uniform(0.2, 0.6))),
        spec_freq=float(rng.uniform(3.0, 7.0)))
    if overrides:
        for k, v in overrides.items():
            setattr(mat, k, v)
    return mat


# ----------------------------------------------------------------------
# scenes
# ----------------------------------------------------------------------
@dataclass
class PrimitiveSpec:
    kind: str
    params: dict
    rotation: np.ndarray       # (3,3)
    center: np.ndarray         # (3,)
    displacement_amp: float
    displacement_freq: float
    displacement_seed: int
    material: MaterialTexture


@dataclass
class SceneMesh:
    vertices: np.ndarray
    faces: np.ndarray
    normals: np.ndarray        # shading normals, world frame, unit
    face_prim: np.ndarray      # [T] primitive index per face


@dataclass
class ProceduralScene:
    seed: int
    primitives: list

    def build(self, segments: int = 96) -> SceneMesh:
        all_v, all_f, all_n, all_p = [], [], [], []
        offset = 0
        for pi, prim in enumerate(self.primitives):
            if prim.kind == "sphere":
                v, f, n = sphere_mesh(prim.params["radius"], segments, segments // 2)
            elif prim.kind == "cylinder":
                v, f, n = cylinder_mesh(prim.params["radius"], prim.params["half_height"],
                                        segments, max(8, segments // 4))
            elif prim.kind == "cube":
                v, f, n = cube_mesh(prim.params["half_extents"], max(8, segments // 4))
            else:
                raise ValueError(f"unknown primitive kind {prim.kind}")
            if prim.displacement_amp > 0:
                h = value_noise3(v, prim.displacement_seed, prim.displacement_freq,
                                 octaves=2) - 0.5
                v = v + (2.0 * prim.displacement_amp) * h[:, None] * n
                n = _area_weighted_normals(v, f, n)
            v = v @ prim.rotation.T + prim.center
            n = n @ prim.rotation.T
            all_v.append(v)
            all_f.append(f + offset)
            all_n.append(n)
            all_p.append(np.full(len(f), pi, dtype=np.int64))
            offset += len(v)
        return SceneMesh(vertices=np.concatenate(all_v), faces=np.concatenate(all_f),
                         normals=np.concatenate(all_n), face_prim=np.concatenate(all_p))


def _area_weighted_normals(verts, faces, fallback):
    e1 = verts[faces[:, 1]] - verts[faces[:, 0]]
    e2 = verts[faces[:, 2]] - verts[faces[:, 0]]
    fn = np.cross(e1, e2)
    vn = np.zeros_like(verts)
    for c in range(3):
        np.add.at(vn, faces[:, c], fn)
    norms = np.linalg.norm(vn, axis=1, keepdims=True)
    bad = norms[:, 0] < 1e-12
    vn = np.where(bad[:, None], fallback, vn / np.maximum(norms, 1e-300))
    return vn


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)]])


@dataclass
class DatagenConfig:
    resolution: int = 128
    rig_radius: float = 2.5
    focal_per_pixel: float = 1.6          # focal = this * resolution
    depth_margin: float = 0.9
    max_primitives: int = 5
    displacement_amp: float = 0.05
    displacement_freq: float = 3.0
    segments: int = 96
    split: str = "train"
    material_overrides: dict | None = None
    shadows: bool = False


def make_rig(config: DatagenConfig) -> cameras.CaptureRig:
    return cameras.make_icosahedron_rig(
        radius=config.rig_radius, image_size=config.resolution,
        focal=config.focal_per_pixel * config.resolution,
        depth_range=(config.rig_radius - config.depth_margin,
                     config.rig_radius + config.depth_margin))


def generate_scene(seed: int, config: DatagenConfig | None = None) -> ProceduralScene:
    config = config or DatagenConfig()
    rng = np.random.default_rng(seed)
    count = int(rng.integers(1, config.max_primitives + 1))
    prims = []
    for _ in range(count):
        kind = PRIMITIVE_KINDS[int(rng.integers(0, len(PRIMITIVE_KINDS)))]
        size = float(rng.uniform(0.18, 0.38))
        if kind == "sphere":
            params = {"radius": size}
        elif kind == "cylinder":
            params = {"radius": size * float(rng.uniform(0.4, 0.8)),
                      "half_height": size * float(rng.uniform(0.6, 1.0))}
        else:
            # |half_extents| <= size keeps the bounding radius within budget
            he = size * rng.uniform(0.5, 1.0, 3) / np.sqrt(3.0)
            params = {"half_extents": tuple(float(x) for x in he)}
        center = rng.normal(size=3)
        center *= rng.uniform(0.0, 0.28) / max(np.linalg.norm(center), 1e-9)
        prims.append(PrimitiveSpec(
            kind=kind, params=params, rotation=_random_rotation(rng),
            center=center,
            displacement_amp=config.displacement_amp * float(rng.uniform(0.5, 1.5)),
            displacement_freq=config.displacement_freq * float(rng.uniform(0.7, 1.4)),
            displacement_seed=int(rng.integers(0, 2 ** 31)),
            material=material_for(rng, config.split, config.material_overrides)))
    return ProceduralScene(seed=seed, primitives=prims)


def make_plane_scene(plane_depth: float, config: DatagenConfig | None = None,
                     texture_seed: int = 0, lambertian: bool = True) -> ProceduralScene:
    """A wide textured slab fronto-parallel to view 0 at the given depth;
    used by the depth-estimation oracles."""
    config = config or DatagenConfig()
    rig = make_rig(config)
    view0 = rig.views[0]
    fwd = view0.rotation[2]                      # view-0 optical axis in world
    center = view0.camera_center + fwd * plane_depth
    # rotate slab local +z onto the axis
    R, _ = cameras.look_at(center - fwd, center)
    overrides = {"albedo_freq": 9.0}
    if lambertian:
        overrides.update({"spec_range": (0.0, 0.0), "rough_range": (1.0, 1.0)})
    rng = np.random.default_rng(texture_seed)
    mat = material_for(rng, config.split, overrides)
    mat.color_a = (0.05, 0.05, 0.05)
    mat.color_b = (0.95, 0.95, 0.95)
    prim = PrimitiveSpec(kind="cube", params={"half_extents": (1.4, 1.4, 0.01)},
                         rotation=R.T, center=center, displacement_amp=0.0,
                         displacement_freq=1.0, displacement_seed=0, material=mat)
    return ProceduralScene(seed=texture_seed, primitives=[prim])


# ----------------------------------------------------------------------
# ground-truth rendering
# ----------------------------------------------------------------------
def render_ground_truth(scene: ProceduralScene, rig: cameras.CaptureRig,
                        segments: int = 96, shadows: bool = False,
                        r_min: float = brdf_mod.R_MIN):
    """Render every rig view of a scene with exact per-pixel ground truth.

    Returns a list (one dict per view) with: image [3,H,W], depth [H,W],
    normal [3,H,W] (view camera frame), albedo [3,H,W], rough [1,H,W],
    spec [3,H,W], mask [H,W].
    """
    sm = scene.build(segments=segments)
    out = []
    for view in rig.views:
        ras = raster.rasterize(sm.vertices, sm.faces, view)
        m = ras.mask
        H, W = m.shape
        depth = np.where(m, ras.depth, 0.0)
        pos = raster.interpolate(ras, sm.faces, sm.vertices)
        nrm = raster.interpolate(ras, sm.faces, sm.normals)
        nn = np.linalg.norm(nrm, axis=0, keepdims=True)
        nrm = np.where(nn > 1e-12, nrm / np.maximum(nn, 1e-12), 0.0)

        albedo = np.zeros((3, H, W))
        rough = np.full((1, H, W), 0.0)
        spec = np.zeros((3, H, W))
        prim_of_pixel = np.where(m, sm.face_prim[np.maximum(ras.tri, 0)], -1)
        pts_flat = np.moveaxis(pos, 0, -1)
        nrm_flat = np.moveaxis(nrm, 0, -1)
        for pi, prim in enumerate(scene.primitives):
            sel = prim_of_pixel == pi
            if not sel.any():
                continue
            a, r, s = prim.material.evaluate(pts_flat[sel])
            albedo[:, sel] = a
            rough[0, sel] = np.clip(r, r_min, 1.0)
            spec[:, sel] = s
            if prim.material.normal_amp > 0:
                nrm_flat[sel] = prim.material.perturb_normals(pts_flat[sel], nrm_flat[sel])
        nrm = np.moveaxis(nrm_flat, -1, 0)

        # shade in the world frame (collocated light at the camera center)
        cam = view.camera_center
        to_light = cam[:, None] - pos[:, m]
        dist = np.linalg.norm(to_light, axis=0, keepdims=True)
        ldir = to_light / np.maximum(dist, 1e-12)
        sample = brdf_mod.BrdfSample(albedo=albedo[:, m], normal=nrm[:, m],
                                     roughness=rough[:, m], specular=spec[:, m])
        q = brdf_mod.ShadingQuery(light_dir=ldir, intensity=float(view.light_intensity),
                                  distance=dist)
        shaded = brdf_mod.shade_point(sample, q, r_min=r_min)
        if shadows:
            shaded = shaded * _shadow_factor(sm, view, pos[:, m])
        image = np.zeros((3, H, W))
        image[:, m] = shaded

        # store normals in the view's camera frame
        nrm_cam = np.tensordot(view.rotation, nrm, axes=1) * m
        out.append({"image": image, "depth": depth, "normal": nrm_cam,
                    "albedo": albedo * m, "rough": rough * m, "spec": spec * m,
                    "mask": m})
    return out


def _shadow_factor(sm: SceneMesh, light_view: cameras.CameraView, points):
    """Shadow-map test against the light's own depth buffer. For collocated
    capture the light view is the camera view, so this is always 1 (up to
    the depth bias)."""
    zbuf = raster.depth_buffer(sm.vertices, sm.faces, light_view)
    uv, z, in_front = light_view.project(points.T)
    H, W = zbuf.shape
    px = np.clip(np.round(uv[:, 0]).astype(np.int64), 0, W - 1)
    py = np.clip(np.round(uv[:, 1]).astype(np.int64), 0, H - 1)
    lit = ~in_front | (z <= zbuf[py, px] * 1.01 + 1e-6)
    return lit.astype(np.float64)[None]


# ----------------------------------------------------------------------
# dataset writing
# ----------------------------------------------------------------------
def write_dataset(out_dir, num_scenes: int, seed: int, config: DatagenConfig | None = None,
                  start_index: int = 0):
    """Render `num_scenes` scenes into out_dir/scene_XXXX/view_XX/*.pfm with a
    shared rig.json per scene and a manifest for exact reproduction."""
    config = config or DatagenConfig()
    rig = make_rig(config)
    os.makedirs(out_dir, exist_ok=True)
    root_seq = np.random.SeedSequence(seed)
    scene_seeds = [int(s.generate_state(1)[0]) for s in root_seq.spawn(num_scenes)]
    scene_dirs = []
    for si, sseed in enumerate(scene_seeds):
        scene = generate_scene(sseed, config)
        views = render_ground_truth(scene, rig, segments=config.segments,
                                    shadows=config.shadows)
        sdir = os.path.join(out_dir, f"scene_{start_index + si:04d}")
        os.makedirs(sdir, exist_ok=True)
        rig.save(os.path.join(sdir, "rig.json"))
        for vi, buf in enumerate(views):
            vdir = os.path.join(sdir, f"view_{vi:02d}")
            os.makedirs(vdir, exist_ok=True)
            imgio.write_pfm(os.path.join(vdir, "image.pfm"), buf["image"])
            imgio.write_pfm(os.path.join(vdir, "depth.pfm"), buf["depth"])
            imgio.write_pfm(os.path.join(vdir, "normal.pfm"), buf["normal"])
            imgio.write_pfm(os.path.join(vdir, "albedo.pfm"), buf["albedo"])
            imgio.write_pfm(os.path.join(vdir, "rough.pfm"), buf["rough"])
            imgio.write_pfm(os.path.join(vdir, "spec.pfm"), buf["spec"])
        scene_dirs.append(sdir)
    manifest = {"seed": seed, "scene_seeds": scene_seeds,
                "num_scenes": num_scenes, "start_index": start_index,
                "config": {k: (list(v) if isinstance(v, tuple) else v)
                           for k, v in asdict(config).items()}}
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1)
    return scene_dirs
