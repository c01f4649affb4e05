"""Plane-sweep depth estimation: cost volumes, soft depth regression and
guided-filter refinement.

Two aggregation paths are exposed:
  - a learning-free path (default): the raw images act as features, the
    variance cost volume is box-smoothed per plane, negated, sharpened and
    soft-maxed over depth;
  - a learned path with a 2D U-Net feature extractor, a 3D U-Net cost
    aggregator and a learned guidance map, trained end-to-end with an L1
    depth loss.

Costs are per-plane population variances of the features warped from all
views into the reference view; cells seen by fewer than two views are
masked and excluded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import cameras, nn
from .autodiff import Tensor


@dataclass
class DepthConfig:
    num_planes: int = 32
    features: str = "normalized"   # "normalized" | "image" | "grayscale"
    normalize_radius: int = 4
    smooth_radius: int = 10
    sharpness: float = 1000.0      # cost-to-probability softmax scale
    guided_radius: int = 4
    guided_eps: float = 1e-4
    mode: str = "learning_free"    # "learning_free" | "learned"


@dataclass
class CostVolume:
    values: np.ndarray       # [Q,H,W] variance cost, 0 where masked
    depths: np.ndarray       # [Q] strictly increasing
    counts: np.ndarray       # [Q,H,W] contributing views per cell

    def __post_init__(self):
        if len(self.depths) < 2:
            raise ValueError("need at least two depth planes")
        if np.any(np.diff(self.depths) <= 0):
            raise ValueError("plane depths must be strictly increasing")

    @property
    def valid(self) -> np.ndarray:
        return self.counts >= 2


def plane_depths(depth_range, num_planes: int) -> np.ndarray:
    near, far = depth_range
    return np.linspace(near, far, num_planes)


def _warp_grid(src_view, ref_view, plane_depth):
    """Pixel coords in src_view for every ref pixel lifted to the plane."""
    u, v = ref_view.pixel_grid()
    pw = ref_view.unproject(u, v, float(plane_depth))
    uv, z, in_front = src_view.project(pw.reshape(-1, 3))
    H, W = u.shape
    grid = uv.reshape(H, W, 2)
    inside = ((grid[..., 0] >= 0) & (grid[..., 0] <= src_view.width - 1)
              & (grid[..., 1] >= 0) & (grid[..., 1] <= src_view.height - 1)
              & in_front.reshape(H, W))
    return grid, inside


def build_cost_volume(features: list, rig: cameras.CaptureRig, ref_index: int,
                      depths: np.ndarray) -> CostVolume:
    """Variance-over-views cost volume for one reference view (numpy path).

    features: per-view [C,H,W] arrays, all with the same channel count.
    """
    if len(features) < 2:
        raise ValueError("need at least two views to build a cost volume")
    C = features[0].shape[0]
    ref_view = rig.views[ref_index]
    H, W = ref_view.height, ref_view.width
    Q = len(depths)
    cost = np.zeros((Q, H, W), dtype=np.float64)
    counts = np.zeros((Q, H, W), dtype=np.int32)
    for qi, d in enumerate(depths):
        s = np.zeros((C, H, W))
        s2 = np.zeros((C, H, W))
        cnt = np.zeros((H, W))
        for vi, view in enumerate(rig.views):
            if vi == ref_index:
                warped = np.asarray(features[vi], dtype=np.float64)
                inside = np.ones((H, W), dtype=bool)
            else:
                grid, inside = _warp_grid(view, ref_view, d)
                warped, _ = cameras.bilinear_sample(
                    np.asarray(features[vi], dtype=np.float64),
                    grid[..., 0], grid[..., 1])
            s += warped * inside
            s2 += warped * warped * inside
            cnt += inside
        ok = cnt >= 2
        cntc = np.maximum(cnt, 1)
        mean = s / cntc
        var = np.maximum(s2 / cntc - mean * mean, 0.0)
        cost[qi] = var.mean(axis=0) * ok
        counts[qi] = cnt
    return CostVolume(values=cost, depths=np.asarray(depths, dtype=np.float64),
                      counts=counts)


def cost_to_probability(volume: CostVolume, config: DepthConfig | None = None,
                        aggregator: "CostAggregatorNet | None" = None):
    """Per-plane depth probabilities [Q,H,W] summing to one at every pixel.

    Learning-free: validity-normalized box smoothing of the cost per plane,
    negate (variance is a cost), sharpen, softmax over planes. With an
    aggregator net, its output volume is soft-maxed directly.
    """
    config = config or DepthConfig()
    if aggregator is not None:
        vol = Tensor(volume.values.astype(np.float32)[None])  # [1,Q,H,W]
        logits = aggregator(vol)
        return ad.softmax(logits[0], axis=0)

    Q, H, W = volume.values.shape
    valid = volume.valid.astype(np.float64)
    if config.smooth_radius > 0:
        num = ad.values(ad.box_filter2d(Tensor(volume.values * valid), config.smooth_radius))
        den = ad.values(ad.box_filter2d(Tensor(valid), config.smooth_radius))
        smoothed = np.where(den > 1e-12, num / np.maximum(den, 1e-12), 0.0)
        valid = (den > 1e-12).astype(np.float64)
    else:
        smoothed = volume.values
    logits = np.where(valid > 0, -config.sharpness * smoothed, -1e9)
    # pixels with no valid plane anywhere fall back to a uniform distribution
    none_valid = ~(valid > 0).any(axis=0)
    logits = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(logits)
    prob = e / e.sum(axis=0, keepdims=True)
    prob[:, none_valid] = 1.0 / Q
    return prob


def regress_depth(prob, depths) -> object:
    """Soft-argmin depth: D(p) = sum_q P_q(p) * d_q (works for Tensor prob)."""
    p = ad.values(prob)
    sums = p.sum(axis=0)
    if np.any(np.abs(sums - 1.0) > 1e-3):
        raise ValueError("depth probabilities are not normalized")
    d = np.asarray(depths, dtype=p.dtype).reshape(-1, 1, 1)
    return (prob * d).sum(axis=0)


def guided_filter(guide, src, radius: int = 4, eps: float = 1e-4):
    """Classic guided filter: output is locally linear in the guide.

    guide, src: [H,W] or [1,H,W]; Tensor in -> Tensor out (differentiable).
    """
    gshape = ad.values(guide).shape
    H, W = gshape[-2], gshape[-1]
    if radius >= min(H, W) / 2:
        raise ValueError(f"radius {radius} too large for {H}x{W} input")
    I = guide if isinstance(guide, Tensor) else Tensor(np.asarray(guide))
    p = src if isinstance(src, Tensor) else Tensor(np.asarray(src))
    mean_i = ad.box_filter2d(I, radius)
    mean_p = ad.box_filter2d(p, radius)
    corr_ip = ad.box_filter2d(I * p, radius)
    corr_ii = ad.box_filter2d(I * I, radius)
    cov_ip = corr_ip - mean_i * mean_p
    var_i = corr_ii - mean_i * mean_i
    a = cov_ip / (var_i + eps)
    b = mean_p - a * mean_i
    out = ad.box_filter2d(a, radius) * I + ad.box_filter2d(b, radius)
    if isinstance(guide, Tensor) or isinstance(src, Tensor):
        return out
    return ad.values(out)


def grayscale(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image)
    return img.mean(axis=0) if img.ndim == 3 else img


def contrast_normalize(image: np.ndarray, radius: int = 4, eps: float = 1e-3) -> np.ndarray:
    """Local contrast normalization: (I - mean_r) / (std_r + eps) per channel.

    Collocated capture shades each view differently; normalizing local
    statistics turns the photometric variance cost into texture matching.
    """
    img = np.asarray(image, dtype=np.float64)
    mu = ad.values(ad.box_filter2d(Tensor(img), radius))
    var = ad.values(ad.box_filter2d(Tensor(img * img), radius)) - mu * mu
    return (img - mu) / np.sqrt(np.maximum(var, 0.0) + eps)


# ----------------------------------------------------------------------
# learned modules
# ----------------------------------------------------------------------
class FeatureNet(nn.Module):
    """2D U-Net feature extractor, 16-channel output."""

    def __init__(self, rng=None, base=16, out_channels=16):
        self.net = nn.UNet2d(3, out_channels, base=base, depth=2, rng=rng)

    def forward(self, x):
        return self.net(x)


class CostAggregatorNet(nn.Module):
    """3D U-Net over the cost volume -> per-plane logits (desk scale: two
    down/up blocks instead of the full-size four)."""

    def __init__(self, rng=None, base=8):
        self.net = nn.UNet3d(1, 1, base=base, depth=2, rng=rng)

    def forward(self, x):
        return self.net(x)


class GuidanceNet(nn.Module):
    """2D U-Net producing a 1-channel guidance map for the guided filter."""

    def __init__(self, rng=None, base=8):
        self.net = nn.UNet2d(3, 1, base=base, depth=2, rng=rng)

    def forward(self, x):
        return self.net(x)


class DepthNets(nn.Module):
    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.features = FeatureNet(rng=rng)
        self.aggregator = CostAggregatorNet(rng=rng)
        self.guidance = GuidanceNet(rng=rng)


def build_cost_volume_t(feature_tensors: list, rig: cameras.CaptureRig,
                        ref_index: int, depths: np.ndarray) -> Tensor:
    """Differentiable cost volume over Tensor features (variance over all
    views, zero-filled outside the image)."""
    if len(feature_tensors) < 2:
        raise ValueError("need at least two views")
    ref_view = rig.views[ref_index]
    n = len(feature_tensors)
    planes = []
    for d in depths:
        s = None
        s2 = None
        for vi in range(n):
            if vi == ref_index:
                warped = feature_tensors[vi]
            else:
                grid, inside = _warp_grid(rig.views[vi], ref_view, d)
                warped = ad.sample2d(feature_tensors[vi], grid)
            s = warped if s is None else s + warped
            sq = warped * warped
            s2 = sq if s2 is None else s2 + sq
        mean = s * (1.0 / n)
        var = s2 * (1.0 / n) - mean * mean
        planes.append(var.mean(axis=0, keepdims=True))
    return ad.concat(planes, axis=0)


def depth_l1_loss(pred, gt: np.ndarray, mask: np.ndarray | None = None):
    """Mean absolute depth error over (optionally masked) pixels."""
    diff = (pred - np.asarray(gt, dtype=np.float32)).abs()
    if mask is None:
        return diff.mean()
    m = mask.astype(np.float32)
    return (diff * m).sum() / max(float(m.sum()), 1.0)


def predict_depth_learned(nets: DepthNets, images: list, rig: cameras.CaptureRig,
                          ref_index: int, config: DepthConfig):
    """Differentiable learned-path forward pass -> (depth Tensor [H,W], prob)."""
    depths = plane_depths(rig.depth_range, config.num_planes)
    feats = [nets.features(Tensor(np.asarray(img, dtype=np.float32))) for img in images]
    vol = build_cost_volume_t(feats, rig, ref_index, depths)
    logits = nets.aggregator(vol.reshape(1, *vol.shape))
    prob = ad.softmax(logits[0], axis=0)
    d0 = regress_depth(prob, depths)
    guide = nets.guidance(Tensor(np.asarray(images[ref_index], dtype=np.float32)))
    d = guided_filter(guide[0], d0, radius=config.guided_radius, eps=config.guided_eps)
    return d, prob


def estimate_depth(images: list, rig: cameras.CaptureRig, ref_index: int,
                   config: DepthConfig | None = None, nets: DepthNets | None = None):
    """Full single-view depth estimate.

    Returns (depth [H,W] float64 clipped to the rig depth range, valid mask,
    probability volume).
    """
    config = config or DepthConfig()
    near, far = rig.depth_range
    if config.mode == "learned":
        if nets is None:
            raise ValueError("learned mode requires DepthNets")
        with ad.no_grad():
            d, prob = predict_depth_learned(nets, images, rig, ref_index, config)
        depth = np.clip(ad.values(d).astype(np.float64), near, far)
        return depth, np.ones_like(depth, dtype=bool), ad.values(prob)

    depths = plane_depths(rig.depth_range, config.num_planes)
    if config.features == "grayscale":
        feats = [grayscale(img)[None] for img in images]
    elif config.features == "normalized":
        feats = [contrast_normalize(img, config.normalize_radius) for img in images]
    else:
        feats = [np.asarray(img) for img in images]
    volume = build_cost_volume(feats, rig, ref_index, depths)
    prob = cost_to_probability(volume, config)
    d0 = regress_depth(prob, depths)
    guide = grayscale(images[ref_index])
    d = guided_filter(guide, d0, radius=config.guided_radius, eps=config.guided_eps)
    valid = volume.valid.any(axis=0)
    return np.clip(d, near, far), valid, prob
