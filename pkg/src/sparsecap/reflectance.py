"""Multi-view SVBRDF estimation network and its training loop.

For a reference view i, every other view j is warped into i using i's
depth, and the pair (i, j) is stacked into a 14-channel input: the two
images, the shadow-map style depth pair (the pixel's depth in view j and
view j's own depth sampled at its projection) and the two collocated
light/view direction maps, all in view i's camera frame. A shared
(Siamese) encoder maps each pair to a latent feature at 1/8 resolution;
features are aggregated across views by an elementwise max, which makes
the latent invariant to view order and count. Four decoder branches with
nearest-neighbor upsampling (no skip connections, so the latent stays a
complete reflectance description) regress diffuse albedo, normals,
roughness and specular albedo.

The training loss is the sum of per-component squared errors plus a
rendering loss that shades the predicted maps under the reference view's
collocated light and compares to the input image.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import brdf as brdf_mod
from . import cameras, imgio, nn
from .autodiff import Tensor

FULL_CHANNELS = 14


@dataclass
class NetConfig:
    widths: tuple = (16, 32, 64)     # encoder widths per downsampling stage
    dec_widths: tuple = (32, 16, 8)  # decoder widths per upsampling stage
    groups: int = 4
    include_depths: bool = True      # Z / Z* channels (ablation flag)
    include_directions: bool = True  # light-direction channels (ablation flag)
    r_min: float = brdf_mod.R_MIN

    @property
    def in_channels(self) -> int:
        c = 6
        if self.include_depths:
            c += 2
        if self.include_directions:
            c += 6
        return c

    @property
    def latent_channels(self) -> int:
        return self.widths[-1]


class PairEncoder(nn.Module):
    """Shared encoder: three stride-2 downsamplings -> latent at 1/8 res.

    Each stage downsamples first and refines at the reduced resolution,
    keeping the full-resolution work to a single strided layer.
    """

    def __init__(self, config: NetConfig, rng):
        w = config.widths
        g = config.groups
        cin = config.in_channels
        self.blocks = [
            nn.ConvBlock2d(cin, w[0], stride=2, rng=rng, groups=g),
            nn.ConvBlock2d(w[0], w[0], rng=rng, groups=g),
            nn.ConvBlock2d(w[0], w[1], stride=2, rng=rng, groups=g),
            nn.ConvBlock2d(w[1], w[1], rng=rng, groups=g),
            nn.ConvBlock2d(w[1], w[2], stride=2, rng=rng, groups=g),
            nn.ConvBlock2d(w[2], w[2], rng=rng, groups=g),
        ]

    def forward(self, x):
        h = x
        for b in self.blocks:
            h = b(h)
        return h


class DecoderBranch(nn.Module):
    """Three nearest-neighbor upsamplings, then a linear conv head.

    No skip connections from the encoder.
    """

    def __init__(self, config: NetConfig, out_channels: int, rng):
        w = [config.latent_channels, *config.dec_widths]
        g = config.groups
        self.blocks = []
        for i in range(3):
            self.blocks.append(nn.ConvBlock2d(w[i], w[i + 1], rng=rng, groups=g))
        self.head = nn.Conv2d(w[3], out_channels, rng=rng)

    def forward(self, z):
        h = z
        for b in self.blocks:
            h = b(ad.upsample_nearest2d(h, 2))
        return self.head(h)


class SvbrdfNet(nn.Module):
    def __init__(self, config: NetConfig | None = None, seed: int = 0):
        self.config = config or NetConfig()
        rng = np.random.default_rng(seed)
        self.encoder = PairEncoder(self.config, rng)
        self.dec_albedo = DecoderBranch(self.config, 3, rng)
        self.dec_normal = DecoderBranch(self.config, 3, rng)
        self.dec_rough = DecoderBranch(self.config, 1, rng)
        self.dec_spec = DecoderBranch(self.config, 3, rng)

    # ------------------------------------------------------------------
    def encode(self, pair_stack) -> Tensor:
        """Encode one [C,H,W] pair stack (or a [B,C,H,W] batch)."""
        shape = ad.values(pair_stack).shape
        if shape[-1] % 8 or shape[-2] % 8:
            raise ValueError(f"spatial size {shape[-2:]} not divisible by 8")
        if shape[-3] != self.config.in_channels:
            raise ValueError(f"expected {self.config.in_channels} channels, got {shape[-3]}")
        x = pair_stack if isinstance(pair_stack, Tensor) else Tensor(pair_stack)
        return self.encoder(x)

    @staticmethod
    def aggregate(features: list) -> Tensor:
        """Max-pool the per-pair features into one latent per reference view."""
        return ad.maxpool_over_set(features)

    def decode(self, latent) -> brdf_mod.SvbrdfMaps:
        z = latent if isinstance(latent, Tensor) else Tensor(latent)
        r_min = self.config.r_min
        channel_axis = -3
        albedo = self.dec_albedo(z).sigmoid()
        rough = self.dec_rough(z).sigmoid() * (1.0 - r_min) + r_min
        spec = self.dec_spec(z).sigmoid()
        raw_n = self.dec_normal(z).tanh()
        norm = (raw_n * raw_n).sum(axis=channel_axis, keepdims=True)
        normal = raw_n / (norm + 1e-12).sqrt()
        return brdf_mod.SvbrdfMaps(albedo=albedo, normal=normal,
                                   roughness=rough, specular=spec)

    def forward_view(self, pair_stacks: list):
        """Full pass for one reference view: encode each of the n pair
        stacks, max-pool, decode. Returns (maps, latent)."""
        feats = [self.encode(s) for s in pair_stacks]
        latent = self.aggregate(feats)
        return self.decode(latent), latent


# ----------------------------------------------------------------------
# encoder input assembly
# ----------------------------------------------------------------------
def assemble_pair_input(i: int, j: int, images: list, depths: list,
                        rig: cameras.CaptureRig, valids: list | None = None,
                        include_depths: bool = True, include_directions: bool = True):
    """Channel stack for the view pair (i, j) plus its validity mask.

    Full layout (14 channels): I_i(3), I_warped_j(3), Z(1), Z*(1),
    L_i(3), L_j(3); the two flags drop the depth / direction groups to
    reproduce the 8/12/6-channel input ablations.
    """
    if depths[i] is None or depths[j] is None:
        raise ValueError("pair assembly requires depths for both views")
    view_i, view_j = rig.views[i], rig.views[j]
    valid_i = valids[i] if valids is not None else depths[i] > 0
    img_i = np.asarray(images[i], dtype=np.float64)
    warped, wmask = cameras.warp_image_by_depth(images[j], view_j, view_i,
                                                depths[i], valid_i)
    channels = [img_i, warped]
    if include_depths:
        z, zs, zmask = cameras.depth_pair_maps(view_i, view_j, depths[i],
                                               depths[j], valid_i)
        channels += [z[None], zs[None]]
    if include_directions:
        li, lij, lmask = cameras.light_direction_maps(view_i, view_j, depths[i], valid_i)
        channels += [li, lij]
    return np.concatenate(channels, axis=0).astype(np.float32), valid_i


def assemble_view_stacks(i: int, images: list, depths: list, rig: cameras.CaptureRig,
                         valids: list | None = None, include_depths: bool = True,
                         include_directions: bool = True):
    """All n pair stacks for reference view i -> ([n,C,H,W], mask)."""
    stacks = []
    mask = None
    for j in range(len(rig.views)):
        s, m = assemble_pair_input(i, j, images, depths, rig, valids,
                                   include_depths, include_directions)
        stacks.append(s)
        mask = m if mask is None else mask
    return np.stack(stacks, axis=0), mask


# ----------------------------------------------------------------------
# losses
# ----------------------------------------------------------------------
def masked_mse(pred, target: np.ndarray, mask: np.ndarray):
    """Mean squared error over valid pixels; mask broadcasts over channels."""
    m = mask.astype(np.float32)
    denom = max(float(m.sum()) * (ad.values(pred).size / m.size), 1.0)
    diff = pred - target.astype(np.float32)
    return (diff * diff * m).sum() / denom


def render_maps(maps: brdf_mod.SvbrdfMaps, light_dir: np.ndarray, dist: np.ndarray,
                intensity: float, r_min: float = brdf_mod.R_MIN):
    """Shade SVBRDF maps under a per-pixel collocated light.

    maps fields are [B,3,h,w] (or [3,h,w]); light_dir/dist are numpy consts
    with matching layout. Works on Tensors; returns unclamped radiance.
    """
    batched = ad.values(maps.albedo).ndim == 4

    def chanfirst(x):
        return x.transpose((1, 0, 2, 3)) if (batched and isinstance(x, Tensor)) else (
            np.moveaxis(x, 0, 1) if (batched and isinstance(x, np.ndarray)) else x)

    sample = brdf_mod.BrdfSample(albedo=chanfirst(maps.albedo),
                                 normal=chanfirst(maps.normal),
                                 roughness=chanfirst(maps.roughness),
                                 specular=chanfirst(maps.specular))
    q = brdf_mod.ShadingQuery(light_dir=chanfirst(light_dir),
                              intensity=intensity, distance=chanfirst(dist))
    rad = brdf_mod.shade_point(sample, q, r_min=r_min)
    return rad.transpose((1, 0, 2, 3)) if batched else rad


def svbrdf_loss(pred: brdf_mod.SvbrdfMaps, gt: brdf_mod.SvbrdfMaps,
                rendered, image: np.ndarray, mask: np.ndarray):
    """L = L_A + L_N + L_R + L_S + L_I (all masked mean squared errors).

    `rendered` is the unclamped radiance from the predicted maps; it is
    clamped to [0,1] before comparison with the input image.
    """
    parts = {
        "albedo": masked_mse(pred.albedo, ad.values(gt.albedo), mask),
        "normal": masked_mse(pred.normal, ad.values(gt.normal), mask),
        "rough": masked_mse(pred.roughness, ad.values(gt.roughness), mask),
        "spec": masked_mse(pred.specular, ad.values(gt.specular), mask),
        "render": masked_mse(rendered.clip(0.0, 1.0),
                             np.clip(np.asarray(image, dtype=np.float32), 0.0, 1.0),
                             mask),
    }
    total = parts["albedo"] + parts["normal"] + parts["rough"] + parts["spec"] \
        + parts["render"]
    return total, parts


# ----------------------------------------------------------------------
# dataset access
# ----------------------------------------------------------------------
@dataclass
class SceneData:
    rig: cameras.CaptureRig
    images: list         # [3,H,W] per view
    depths: list         # [H,W]
    masks: list
    albedo: list
    normal: list
    rough: list
    spec: list

    @property
    def num_views(self):
        return len(self.images)


def load_scene(scene_dir) -> SceneData:
    rig = cameras.CaptureRig.load(os.path.join(scene_dir, "rig.json"))
    data = {k: [] for k in ("images", "depths", "masks", "albedo", "normal",
                            "rough", "spec")}
    for vi in range(len(rig.views)):
        vdir = os.path.join(scene_dir, f"view_{vi:02d}")
        img = imgio.read_pfm(os.path.join(vdir, "image.pfm"))
        d = imgio.read_pfm(os.path.join(vdir, "depth.pfm"))
        data["images"].append(img)
        data["depths"].append(d)
        data["masks"].append(d > 0)
        data["albedo"].append(imgio.read_pfm(os.path.join(vdir, "albedo.pfm")))
        data["normal"].append(imgio.read_pfm(os.path.join(vdir, "normal.pfm")))
        data["rough"].append(imgio.read_pfm(os.path.join(vdir, "rough.pfm"))[None])
        data["spec"].append(imgio.read_pfm(os.path.join(vdir, "spec.pfm")))
    return SceneData(rig=rig, **data)


def list_scene_dirs(root):
    out = sorted(os.path.join(root, d) for d in os.listdir(root)
                 if d.startswith("scene_"))
    if not out:
        raise FileNotFoundError(f"no scene_* directories under {root}")
    return out


def light_geometry(view: cameras.CameraView, depth_map: np.ndarray,
                   valid: np.ndarray):
    """Per-pixel collocated light direction and distance (camera frame)."""
    query, _ = brdf_mod.shading_query_for_view(view, depth_map, valid)
    return (np.asarray(query.light_dir, dtype=np.float32),
            np.asarray(query.distance, dtype=np.float32))


# ----------------------------------------------------------------------
# training
# ----------------------------------------------------------------------
@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 4
    crop: int = 64
    lr: float = 1e-3
    seed: int = 0
    log_every: int = 50
    net: NetConfig = field(default_factory=NetConfig)


def _sample_batch(scenes: list, config: TrainConfig, rng: np.random.Generator):
    """Assemble one training batch: per sample a (scene, reference view,
    crop window) with its n pair stacks and ground-truth crops.

    Warps run against a cropped reference view, so assembly cost scales
    with the crop area rather than the full image.
    """
    n = scenes[0].num_views
    c = config.crop
    stacks, gts, lights = [], [], []
    for _ in range(config.batch_size):
        sc = scenes[int(rng.integers(0, len(scenes)))]
        i = int(rng.integers(0, n))
        H, W = sc.depths[i].shape
        y0 = int(rng.integers(0, H - c + 1))
        x0 = int(rng.integers(0, W - c + 1))
        win = np.s_[y0:y0 + c, x0:x0 + c]
        crop_rig = cameras.CaptureRig(
            views=[cameras.crop_view(v, x0, y0, c, c) if vi == i else v
                   for vi, v in enumerate(sc.rig.views)],
            depth_range=sc.rig.depth_range)
        depths = list(sc.depths)
        depths[i] = sc.depths[i][win]
        images = list(sc.images)
        images[i] = sc.images[i][:, y0:y0 + c, x0:x0 + c]
        valids = [None] * n
        valids[i] = sc.masks[i][win]
        stack, _ = assemble_view_stacks(
            i, images, depths, crop_rig, valids=valids,
            include_depths=config.net.include_depths,
            include_directions=config.net.include_directions)
        ld, dist = light_geometry(crop_rig.views[i], depths[i], valids[i])
        stacks.append(stack)
        gts.append({"albedo": sc.albedo[i][(np.s_[:],) + win],
                    "normal": sc.normal[i][(np.s_[:],) + win],
                    "rough": sc.rough[i][(np.s_[:],) + win],
                    "spec": sc.spec[i][(np.s_[:],) + win],
                    "image": images[i],
                    "mask": valids[i]})
        lights.append({"dir": ld, "dist": dist,
                       "intensity": sc.rig.views[i].light_intensity})
    return np.stack(stacks, axis=0), gts, lights


def train_step(net: SvbrdfNet, batch, optimizer: ad.Adam):
    stacks, gts, lights = batch
    B, n = stacks.shape[0], stacks.shape[1]
    flat = Tensor(stacks.reshape(B * n, *stacks.shape[2:]))
    feats = net.encode(flat)
    per_view = [feats[np.arange(B) * n + j] for j in range(n)]
    latent = net.aggregate(per_view)
    maps = net.decode(latent)

    gt_maps = brdf_mod.SvbrdfMaps(
        albedo=np.stack([g["albedo"] for g in gts]),
        normal=np.stack([g["normal"] for g in gts]),
        roughness=np.stack([g["rough"] for g in gts]),
        specular=np.stack([g["spec"] for g in gts]))
    mask = np.stack([g["mask"] for g in gts])[:, None]
    image = np.stack([g["image"] for g in gts])
    ldir = np.stack([l["dir"] for l in lights])
    dist = np.stack([l["dist"] for l in lights])
    intensity = float(lights[0]["intensity"])
    rendered = render_maps(maps, ldir, dist, intensity, r_min=net.config.r_min)
    loss, parts = svbrdf_loss(maps, gt_maps, rendered, image, mask)
    if not np.isfinite(loss.item()):
        raise RuntimeError(f"training diverged: loss={loss.item()} parts="
                           f"{ {k: v.item() for k, v in parts.items()} }")
    loss.backward()
    optimizer.step()
    return loss.item(), {k: v.item() for k, v in parts.items()}


def train(scene_dirs: list, config: TrainConfig | None = None,
          checkpoint_path=None, progress=None):
    """Train an SvbrdfNet on rendered scenes. Returns (net, loss_curve)."""
    config = config or TrainConfig()
    scenes = [load_scene(d) for d in scene_dirs]
    net = SvbrdfNet(config.net, seed=config.seed)
    optimizer = ad.Adam(net.parameters(), lr=config.lr)
    rng = np.random.default_rng(config.seed + 1)
    curve = []
    for step in range(config.steps):
        batch = _sample_batch(scenes, config, rng)
        loss, parts = train_step(net, batch, optimizer)
        curve.append(loss)
        if progress and (step % config.log_every == 0 or step == config.steps - 1):
            progress(step, loss, parts)
    if checkpoint_path is not None:
        nn.save_checkpoint(checkpoint_path, net.state())
    return net, curve


# ----------------------------------------------------------------------
# evaluation
# ----------------------------------------------------------------------
def predict_view_maps(net: SvbrdfNet, scene: SceneData, i: int,
                      depths: list | None = None):
    """Forward pass at full resolution for reference view i (no tape).

    Returns (maps with numpy fields, latent ndarray)."""
    depths = depths if depths is not None else scene.depths
    stacks, _ = assemble_view_stacks(
        i, scene.images, depths, scene.rig,
        include_depths=net.config.include_depths,
        include_directions=net.config.include_directions)
    with ad.no_grad():
        maps, latent = net.forward_view([Tensor(s) for s in stacks])
    return maps.detached(), ad.values(latent)


def component_mse(net: SvbrdfNet, scenes: list) -> dict:
    """Masked per-component MSE of network predictions over scenes/views."""
    sums = {k: 0.0 for k in ("albedo", "normal", "rough", "spec")}
    count = 0.0
    for sc in scenes:
        for i in range(sc.num_views):
            maps, _ = predict_view_maps(net, sc, i)
            m = sc.masks[i]
            w = float(m.sum())
            count += w
            sums["albedo"] += ((maps.albedo - sc.albedo[i]) ** 2)[:, m].mean(axis=0).sum()
            sums["normal"] += ((maps.normal - sc.normal[i]) ** 2)[:, m].mean(axis=0).sum()
            sums["rough"] += ((maps.roughness - sc.rough[i]) ** 2)[:, m].mean(axis=0).sum()
            sums["spec"] += ((maps.specular - sc.spec[i]) ** 2)[:, m].mean(axis=0).sum()
    return {k: v / max(count, 1.0) for k, v in sums.items()}


def mean_predictor_mse(train_scenes: list, test_scenes: list) -> dict:
    """Baseline: predict the per-component masked mean of the training set."""
    comps = {"albedo": "albedo", "normal": "normal", "rough": "rough", "spec": "spec"}
    means = {}
    for key in comps:
        total = 0.0
        count = 0.0
        for sc in train_scenes:
            for i in range(sc.num_views):
                arr = getattr(sc, key)[i]
                m = sc.masks[i]
                total += arr[:, m].sum(axis=1)
                count += float(m.sum())
        means[key] = total / max(count, 1.0)
    out = {}
    for key in comps:
        err = 0.0
        count = 0.0
        for sc in test_scenes:
            for i in range(sc.num_views):
                arr = getattr(sc, key)[i]
                m = sc.masks[i]
                err += ((arr[:, m] - means[key][:, None]) ** 2).mean(axis=0).sum()
                count += float(m.sum())
        out[key] = err / max(count, 1.0)
    return out
