"""PFM / PNG image IO and small image metrics.

PFM is the primary interchange format (little-endian float32, rows stored
bottom-to-top per the format spec). Arrays are channels-first: [3,H,W] for
color, [H,W] (or [1,H,W]) for single channel. PNG output is an 8-bit
preview with gamma 2.2.
"""

from __future__ import annotations

import numpy as np
from PIL import Image


def write_pfm(path, image: np.ndarray):
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    if img.ndim == 2:
        header, data = b"Pf", img[::-1]
    elif img.ndim == 3 and img.shape[0] == 3:
        header, data = b"PF", np.moveaxis(img, 0, -1)[::-1]
    else:
        raise ValueError(f"unsupported image shape {image.shape}")
    h, w = img.shape[-2:] if img.ndim == 2 else (img.shape[1], img.shape[2])
    with open(path, "wb") as fh:
        fh.write(header + b"\n")
        fh.write(f"{w} {h}\n".encode())
        fh.write(b"-1.0\n")  # negative scale = little endian
        fh.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header not in (b"PF", b"Pf"):
            raise ValueError(f"not a PFM file: {path}")
        dims = fh.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(fh.readline().strip())
        count = w * h * (3 if header == b"PF" else 1)
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(count * 4), dtype=dtype).astype(np.float32)
    if header == b"PF":
        return np.moveaxis(data.reshape(h, w, 3)[::-1], -1, 0).copy()
    return data.reshape(h, w)[::-1].copy()


def write_png(path, image: np.ndarray, gamma: float = 2.2):
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[0] in (1, 3):
        img = np.moveaxis(img, 0, -1)
        if img.shape[-1] == 1:
            img = img[..., 0]
    srgb = np.clip(img, 0.0, 1.0) ** (1.0 / gamma)
    Image.fromarray((srgb * 255.0 + 0.5).astype(np.uint8)).save(path)


def psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """PSNR between two images after clamping both to [0,1]."""
    x = np.clip(np.asarray(a, dtype=np.float64), 0.0, 1.0)
    y = np.clip(np.asarray(b, dtype=np.float64), 0.0, 1.0)
    d2 = (x - y) ** 2
    if mask is not None:
        m = np.broadcast_to(mask, d2.shape)
        mse = d2[m].mean() if m.any() else 0.0
    else:
        mse = d2.mean()
    if mse <= 0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


def rms(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    d2 = (np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2
    if mask is not None:
        m = np.broadcast_to(mask, d2.shape)
        return float(np.sqrt(d2[m].mean())) if m.any() else 0.0
    return float(np.sqrt(d2.mean()))
