"""Network building blocks on top of the autodiff engine.

Layers follow one recipe throughout: convolutions with group normalization
and ReLU, stride-2 convolutions for downsampling, nearest-neighbor
upsampling in decoders. Weights initialize from a caller-supplied
Generator with uniform fan-in scaling, so a fixed seed reproduces training
bit-for-bit.

Checkpoints are a flat little-endian float32 blob plus a JSON manifest of
tensor names, shapes and offsets.
"""

from __future__ import annotations

import json

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Base class: parameter discovery over attributes, lists and tuples."""

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = ""):
        out = {}
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                out[full] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(f"{full}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{full}.{i}."))
                    elif isinstance(item, Tensor):
                        out[f"{full}.{i}"] = item
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def freeze(self):
        for p in self.parameters():
            p.set_requires_grad(False)

    def unfreeze(self):
        for p in self.parameters():
            p.set_requires_grad(True)

    def load_state(self, state: dict, prefix: str = ""):
        params = self.named_parameters(prefix)
        missing = [k for k in params if k not in state]
        if missing:
            raise KeyError(f"checkpoint is missing tensors: {missing[:4]}...")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=p.dtype)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != {p.shape}")
            p.data[...] = arr

    def state(self, prefix: str = ""):
        return {k: v.data for k, v in self.named_parameters(prefix).items()}


def _uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


class Conv2d(Module):
    def __init__(self, cin, cout, kernel=3, stride=1, padding=None, bias=True,
                 rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        fan_in = cin * kernel * kernel
        self.weight = _uniform_init(rng, (cout, cin, kernel, kernel), fan_in, dtype)
        self.bias = _uniform_init(rng, (cout,), fan_in, dtype) if bias else None

    def forward(self, x):
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride,
                         padding=self.padding)


class Conv3d(Module):
    def __init__(self, cin, cout, kernel=3, stride=1, padding=None, bias=True,
                 rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        fan_in = cin * kernel ** 3
        self.weight = _uniform_init(rng, (cout, cin, kernel, kernel, kernel), fan_in, dtype)
        self.bias = _uniform_init(rng, (cout,), fan_in, dtype) if bias else None

    def forward(self, x):
        return ad.conv3d(x, self.weight, self.bias, stride=self.stride,
                         padding=self.padding)


class GroupNorm(Module):
    def __init__(self, channels, groups=4, spatial_dims=2, dtype=np.float32):
        if channels % groups != 0:
            raise ValueError(f"channels {channels} not divisible by groups {groups}")
        self.groups = groups
        self.spatial_dims = spatial_dims
        self.weight = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)

    def forward(self, x):
        return ad.group_norm(x, self.groups, self.weight, self.bias,
                             spatial_dims=self.spatial_dims)


class ConvBlock2d(Module):
    """conv -> GN -> ReLU."""

    def __init__(self, cin, cout, stride=1, groups=4, rng=None, dtype=np.float32):
        self.conv = Conv2d(cin, cout, stride=stride, rng=rng, dtype=dtype)
        self.norm = GroupNorm(cout, groups=min(groups, cout), dtype=dtype)

    def forward(self, x):
        return self.norm(self.conv(x)).relu()


class ConvBlock3d(Module):
    def __init__(self, cin, cout, stride=1, groups=4, rng=None, dtype=np.float32):
        self.conv = Conv3d(cin, cout, stride=stride, rng=rng, dtype=dtype)
        self.norm = GroupNorm(cout, groups=min(groups, cout), spatial_dims=3, dtype=dtype)

    def forward(self, x):
        return self.norm(self.conv(x)).relu()


class UNet2d(Module):
    """Small U-Net: `depth` stride-2 downsamplings, skip links, nearest
    upsampling, linear head."""

    def __init__(self, cin, cout, base=16, depth=2, groups=4, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.depth = depth
        widths = [base * (2 ** i) for i in range(depth + 1)]
        self.stem = ConvBlock2d(cin, widths[0], rng=rng, groups=groups, dtype=dtype)
        self.down = [ConvBlock2d(widths[i], widths[i + 1], stride=2, rng=rng,
                                 groups=groups, dtype=dtype) for i in range(depth)]
        self.mid = [ConvBlock2d(widths[i + 1], widths[i + 1], rng=rng, groups=groups,
                                dtype=dtype) for i in range(depth)]
        self.up = [ConvBlock2d(widths[i + 1] + widths[i], widths[i], rng=rng,
                               groups=groups, dtype=dtype) for i in reversed(range(depth))]
        self.head = Conv2d(widths[0], cout, rng=rng, dtype=dtype)

    def forward(self, x):
        h = self.stem(x)
        skips = [h]
        for i in range(self.depth):
            h = self.down[i](h)
            h = self.mid[i](h)
            if i < self.depth - 1:
                skips.append(h)
        for i in range(self.depth):
            h = ad.upsample_nearest2d(h, 2)
            skip = skips[self.depth - 1 - i]
            h = self.up[i](ad.concat([h, skip], axis=-3))
        return self.head(h)


class UNet3d(Module):
    def __init__(self, cin, cout, base=8, depth=2, groups=4, rng=None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.depth = depth
        widths = [base * (2 ** i) for i in range(depth + 1)]
        self.stem = ConvBlock3d(cin, widths[0], rng=rng, groups=groups, dtype=dtype)
        self.down = [ConvBlock3d(widths[i], widths[i + 1], stride=2, rng=rng,
                                 groups=groups, dtype=dtype) for i in range(depth)]
        self.up = [ConvBlock3d(widths[i + 1] + widths[i], widths[i], rng=rng,
                               groups=groups, dtype=dtype) for i in reversed(range(depth))]
        self.head = Conv3d(widths[0], cout, rng=rng, dtype=dtype)

    def forward(self, x):
        h = self.stem(x)
        skips = [h]
        for i in range(self.depth):
            h = self.down[i](h)
            if i < self.depth - 1:
                skips.append(h)
        for i in range(self.depth):
            h = ad.upsample_nearest3d(h, 2)
            skip = skips[self.depth - 1 - i]
            h = self.up[i](ad.concat([h, skip], axis=-4))
        return self.head(h)


# ----------------------------------------------------------------------
# checkpoints
# ----------------------------------------------------------------------
def save_checkpoint(path, tensors: dict):
    """Write name->array tensors as path(.bin) plus path.json manifest."""
    path = str(path)
    entries = []
    offset = 0
    blob = bytearray()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(ad.values(tensors[name]), dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob.extend(arr.tobytes())
        offset += arr.size
    with open(path + ".bin", "wb") as fh:
        fh.write(bytes(blob))
    with open(path + ".json", "w") as fh:
        json.dump({"dtype": "<f4", "tensors": entries}, fh, indent=1)


def load_checkpoint(path) -> dict:
    path = str(path)
    with open(path + ".json") as fh:
        manifest = json.load(fh)
    raw = np.fromfile(path + ".bin", dtype=manifest["dtype"])
    out = {}
    for e in manifest["tensors"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        out[e["name"]] = raw[e["offset"]:e["offset"] + n].reshape(e["shape"]).copy()
    return out
