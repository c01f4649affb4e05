"""Microfacet BRDF and differentiable local shading for collocated point lights.

The reflectance model is a simplified principled BRDF: a Lambertian diffuse
lobe plus a GGX specular lobe with a Schlick-style exponential Fresnel
approximation and a Smith-Schlick geometric term,

    f = A/pi + D * F * G / (4 (N.L)(N.V))
    D = alpha^2 / (pi ((N.H)^2 (alpha^2 - 1) + 1)^2),      alpha = R^2
    F = S + (1 - S) * 2^(-(5.55473 (V.H) + 6.8316) (V.H))
    G = G1(V) G1(L),  G1(X) = (N.X) / ((N.X)(1 - k) + k),  k = (R + 1)^2 / 8

with rgb diffuse albedo A, unit normal N, scalar roughness R and rgb
specular albedo S. Roughness is floored at ``R_MIN`` so alpha stays away
from zero.

Every function here is written against the dispatch helpers in
``autodiff``, so the same code runs on plain ndarrays (fast paths: data
generation, mesh rendering) and on Tensors (loss terms, refinement).
Vector quantities are channels-first: shape [3, ...]; scalars [1, ...].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import cameras
from .autodiff import Tensor, clip, exp, relu, sqrt, values

R_MIN = 0.08
LN2 = float(np.log(2.0))


def vdot(a, b):
    """Dot product over the leading (channel) axis, keepdims."""
    return (a * b).sum(axis=0, keepdims=True)


def normalize(v, eps: float = 1e-12):
    return v / sqrt(vdot(v, v) + eps)


@dataclass
class BrdfSample:
    """BRDF parameters at one or many surface points (trailing shape shared)."""

    albedo: object      # [3, ...] in [0,1]
    normal: object      # [3, ...] unit
    roughness: object   # [1, ...] in [R_MIN, 1]
    specular: object    # [3, ...] in [0,1]

    def validate(self, r_min: float = R_MIN):
        n = values(self.normal)
        norms = np.sqrt((n * n).sum(axis=0))
        if not np.allclose(norms, 1.0, atol=1e-6):
            raise ValueError("normals are not unit length")
        r = values(self.roughness)
        if np.any(r < r_min - 1e-9) or np.any(r > 1.0 + 1e-9):
            raise ValueError(f"roughness outside [{r_min}, 1]")
        for name, fieldv in (("albedo", self.albedo), ("specular", self.specular)):
            a = values(fieldv)
            if np.any(a < -1e-9) or np.any(a > 1.0 + 1e-9):
                raise ValueError(f"{name} outside [0, 1]")


@dataclass
class ShadingQuery:
    """Collocated light/view geometry for one or many points."""

    light_dir: object           # [3, ...] unit, surface -> light (= view)
    intensity: object           # scalar or [1, ...]
    distance: object            # [1, ...] scene units

    @property
    def half_vector(self):
        # collocated light: H = normalize(V + L) = L
        return self.light_dir


def eval_brdf(sample: BrdfSample, light_dir, view_dir=None, r_min: float = R_MIN):
    """BRDF value [3, ...]; zero (flagged by a mask) where a direction is
    back-facing. Returns (f, front_mask)."""
    L = light_dir
    V = light_dir if view_dir is None else view_dir
    A, N, R, S = sample.albedo, sample.normal, sample.roughness, sample.specular

    H = normalize(L + V)
    ndl = vdot(N, L)
    ndv = vdot(N, V)
    ndh = vdot(N, H)
    vdh = vdot(V, H)

    front = (values(ndl) > 0) & (values(ndv) > 0)

    ndl_c = clip(ndl, 1e-9, 2.0)
    ndv_c = clip(ndv, 1e-9, 2.0)

    alpha = clip(R, r_min, 1.0) ** 2
    a2 = alpha * alpha
    denom = ndh * ndh * (a2 - 1.0) + 1.0
    d_term = a2 / (np.pi * denom * denom)

    f_exp = exp(-(vdh * 5.55473 + 6.8316) * vdh * LN2)
    f_term = S + (1.0 - S) * f_exp

    k = (R + 1.0) ** 2 / 8.0
    g1_v = ndv_c / (ndv_c * (1.0 - k) + k)
    g1_l = ndl_c / (ndl_c * (1.0 - k) + k)
    g_term = g1_v * g1_l

    spec = d_term * f_term * g_term / (4.0 * ndl_c * ndv_c)
    f = A / np.pi + spec
    return f * front.astype(values(f).dtype), front


def shade_point(sample: BrdfSample, query: ShadingQuery, view_dir=None,
                r_min: float = R_MIN):
    """Outgoing radiance [3, ...] under a point light with inverse-square
    falloff: f * max(N.L, 0) * intensity / distance^2."""
    dist = values(query.distance)
    if np.any(dist <= 0):
        raise ValueError("light distance must be positive")
    f, front = eval_brdf(sample, query.light_dir, view_dir, r_min=r_min)
    ndl = vdot(sample.normal, query.light_dir)
    falloff = query.intensity / (query.distance * query.distance)
    return f * relu(ndl) * falloff


@dataclass
class SvbrdfMaps:
    """Per-view SVBRDF maps: albedo [3,H,W], normal [3,H,W] (view camera
    frame, unit where valid), roughness [1,H,W], specular [3,H,W]."""

    albedo: object
    normal: object
    roughness: object
    specular: object

    @property
    def resolution(self):
        shp = values(self.albedo).shape
        return shp[-2], shp[-1]

    def as_sample(self) -> BrdfSample:
        return BrdfSample(self.albedo, self.normal, self.roughness, self.specular)

    def detached(self) -> "SvbrdfMaps":
        def d(x):
            return x.data.copy() if isinstance(x, Tensor) else np.array(x)
        return SvbrdfMaps(d(self.albedo), d(self.normal), d(self.roughness), d(self.specular))


def shading_query_for_view(view: cameras.CameraView, depth: np.ndarray,
                           valid: np.ndarray | None = None):
    """Per-pixel collocated ShadingQuery in the view's camera frame.

    Returns (query with [3,H,W]/[1,H,W] fields, valid mask).
    """
    if valid is None:
        valid = depth > 0
    u, v = view.pixel_grid()
    pc = view.unproject(u, v, np.where(valid, depth, 1.0), to_world=False)
    dist = np.linalg.norm(pc, axis=-1)
    ldir = -np.moveaxis(pc, -1, 0) / np.maximum(dist, 1e-12)
    query = ShadingQuery(light_dir=ldir * valid,
                         intensity=float(view.light_intensity),
                         distance=np.maximum(dist, 1e-12)[None])
    return query, valid


def render_view(maps: SvbrdfMaps, depth: np.ndarray, view: cameras.CameraView,
                valid: np.ndarray | None = None, r_min: float = R_MIN):
    """Shade every valid pixel of a view from its SVBRDF maps and depth.

    Returns (image [3,H,W], mask [H,W]). Pixels with invalid depth are zero.
    """
    H, W = maps.resolution
    if depth.shape != (H, W) or (view.height, view.width) != (H, W):
        raise ValueError(f"resolution mismatch: maps {H}x{W}, depth {depth.shape}, "
                         f"view {view.height}x{view.width}")
    query, valid = shading_query_for_view(view, depth, valid)
    radiance = shade_point(maps.as_sample(), query, r_min=r_min)
    return values(radiance) * valid, valid
