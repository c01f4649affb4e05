"""Triangle meshes with optional per-vertex BRDF attributes, plus PLY/OBJ IO.

PLY files are binary little-endian. BRDF-attributed meshes carry the
per-vertex properties a_r,a_g,a_b (diffuse albedo), n_x,n_y,n_z (shading
normal), rough, s_r,s_g,s_b (specular albedo) and optional view blending
weights w_1..w_n, alongside position x,y,z and geometric normal nx,ny,nz.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class TriangleMesh:
    vertices: np.ndarray                 # [K,3] float64
    faces: np.ndarray                    # [T,3] int64
    vertex_normals: np.ndarray | None = None   # [K,3] unit, geometric
    albedo: np.ndarray | None = None     # [K,3]
    brdf_normal: np.ndarray | None = None  # [K,3] unit shading normal (world)
    roughness: np.ndarray | None = None  # [K]
    specular: np.ndarray | None = None   # [K,3]
    blend_weights: np.ndarray | None = None  # [K,n]

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face indices out of range")

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    @property
    def has_brdf(self) -> bool:
        return all(a is not None for a in
                   (self.albedo, self.brdf_normal, self.roughness, self.specular))

    def face_normals(self) -> np.ndarray:
        v = self.vertices
        e1 = v[self.faces[:, 1]] - v[self.faces[:, 0]]
        e2 = v[self.faces[:, 2]] - v[self.faces[:, 0]]
        n = np.cross(e1, e2)
        return n  # unnormalized: length = 2 * area

    def compute_vertex_normals(self) -> np.ndarray:
        """Area-weighted vertex normals; stores and returns them."""
        fn = self.face_normals()
        vn = np.zeros_like(self.vertices)
        for c in range(3):
            np.add.at(vn, self.faces[:, c], fn)
        norms = np.linalg.norm(vn, axis=1, keepdims=True)
        vn /= np.maximum(norms, 1e-300)
        self.vertex_normals = vn
        return vn

    def edges(self) -> np.ndarray:
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]],
                            self.faces[:, [2, 0]]], axis=0)
        return np.sort(e, axis=1)

    def euler_characteristic(self) -> int:
        unique_edges = np.unique(self.edges(), axis=0)
        return self.num_vertices - len(unique_edges) + self.num_faces

    def is_watertight(self) -> bool:
        """Every undirected edge is shared by exactly two faces."""
        if self.num_faces == 0:
            return False
        _, counts = np.unique(self.edges(), axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def cleaned(self, min_area: float = 1e-12) -> "TriangleMesh":
        """Drop degenerate faces and unreferenced vertices."""
        areas = 0.5 * np.linalg.norm(self.face_normals(), axis=1)
        faces = self.faces[areas > min_area]
        used = np.unique(faces)
        remap = np.full(self.num_vertices, -1, dtype=np.int64)
        remap[used] = np.arange(len(used))

        def take(a):
            return a[used] if a is not None else None

        return TriangleMesh(
            vertices=self.vertices[used], faces=remap[faces],
            vertex_normals=take(self.vertex_normals), albedo=take(self.albedo),
            brdf_normal=take(self.brdf_normal), roughness=take(self.roughness),
            specular=take(self.specular), blend_weights=take(self.blend_weights))

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "TriangleMesh":
        R = np.asarray(rotation, dtype=np.float64)
        t = np.asarray(translation, dtype=np.float64)
        rot = lambda a: a @ R.T if a is not None else None
        return TriangleMesh(
            vertices=self.vertices @ R.T + t, faces=self.faces.copy(),
            vertex_normals=rot(self.vertex_normals), albedo=self.albedo,
            brdf_normal=rot(self.brdf_normal), roughness=self.roughness,
            specular=self.specular, blend_weights=self.blend_weights)


# ----------------------------------------------------------------------
# PLY
# ----------------------------------------------------------------------
def save_ply(path, mesh: TriangleMesh):
    if mesh.vertex_normals is None:
        mesh.compute_vertex_normals()
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
              ("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4")]
    columns = [mesh.vertices, mesh.vertex_normals]
    if mesh.has_brdf:
        fields += [("a_r", "<f4"), ("a_g", "<f4"), ("a_b", "<f4"),
                   ("n_x", "<f4"), ("n_y", "<f4"), ("n_z", "<f4"),
                   ("rough", "<f4"),
                   ("s_r", "<f4"), ("s_g", "<f4"), ("s_b", "<f4")]
        columns += [mesh.albedo, mesh.brdf_normal,
                    np.asarray(mesh.roughness).reshape(-1, 1), mesh.specular]
        if mesh.blend_weights is not None:
            n = mesh.blend_weights.shape[1]
            fields += [(f"w_{i + 1}", "<f4") for i in range(n)]
            columns += [mesh.blend_weights]

    vert = np.zeros(mesh.num_vertices, dtype=fields)
    flat = np.concatenate([np.asarray(c, dtype=np.float64).reshape(mesh.num_vertices, -1)
                           for c in columns], axis=1).astype("<f4")
    for i, (name, _) in enumerate(fields):
        vert[name] = flat[:, i]

    face_dtype = np.dtype([("count", "u1"), ("idx", "<i4", 3)])
    face = np.zeros(mesh.num_faces, dtype=face_dtype)
    face["count"] = 3
    face["idx"] = mesh.faces.astype("<i4")

    with open(path, "wb") as fh:
        head = ["ply", "format binary_little_endian 1.0",
                f"element vertex {mesh.num_vertices}"]
        head += [f"property float {name}" for name, _ in fields]
        head += [f"element face {mesh.num_faces}",
                 "property list uchar int vertex_indices", "end_header"]
        fh.write(("\n".join(head) + "\n").encode())
        fh.write(vert.tobytes())
        fh.write(face.tobytes())


def load_ply(path) -> TriangleMesh:
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise ValueError(f"not a PLY file: {path}")
        fmt = fh.readline().strip()
        if b"binary_little_endian" not in fmt:
            raise ValueError("only binary little-endian PLY is supported")
        n_vert = n_face = 0
        props = []
        element = None
        while True:
            line = fh.readline().strip().decode()
            if line == "end_header":
                break
            parts = line.split()
            if parts[0] == "element":
                element = parts[1]
                if element == "vertex":
                    n_vert = int(parts[2])
                elif element == "face":
                    n_face = int(parts[2])
            elif parts[0] == "property" and element == "vertex":
                if parts[1] != "float":
                    raise ValueError("vertex properties must be float")
                props.append(parts[2])
        vert_dtype = np.dtype([(p, "<f4") for p in props])
        vert = np.frombuffer(fh.read(n_vert * vert_dtype.itemsize), dtype=vert_dtype)
        face_dtype = np.dtype([("count", "u1"), ("idx", "<i4", 3)])
        face = np.frombuffer(fh.read(n_face * face_dtype.itemsize), dtype=face_dtype)

    def grab(names):
        if not all(n in props for n in names):
            return None
        return np.stack([vert[n].astype(np.float64) for n in names], axis=1)

    weights = []
    i = 1
    while f"w_{i}" in props:
        weights.append(vert[f"w_{i}"].astype(np.float64))
        i += 1
    rough = vert["rough"].astype(np.float64) if "rough" in props else None
    return TriangleMesh(
        vertices=grab(["x", "y", "z"]), faces=face["idx"].astype(np.int64),
        vertex_normals=grab(["nx", "ny", "nz"]),
        albedo=grab(["a_r", "a_g", "a_b"]), brdf_normal=grab(["n_x", "n_y", "n_z"]),
        roughness=rough, specular=grab(["s_r", "s_g", "s_b"]),
        blend_weights=np.stack(weights, axis=1) if weights else None)


# ----------------------------------------------------------------------
# OBJ (geometry + normals only)
# ----------------------------------------------------------------------
def save_obj(path, mesh: TriangleMesh):
    if mesh.vertex_normals is None:
        mesh.compute_vertex_normals()
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for n in mesh.vertex_normals:
            fh.write(f"vn {n[0]:.9g} {n[1]:.9g} {n[2]:.9g}\n")
        for f in mesh.faces + 1:
            fh.write(f"f {f[0]}//{f[0]} {f[1]}//{f[1]} {f[2]}//{f[2]}\n")


def load_obj(path) -> TriangleMesh:
    verts, normals, faces = [], [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vn":
                normals.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:4]]
                faces.append(idx)
    return TriangleMesh(vertices=np.array(verts), faces=np.array(faces, dtype=np.int64),
                        vertex_normals=np.array(normals) if normals else None)
