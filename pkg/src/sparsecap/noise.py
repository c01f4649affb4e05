"""Seeded 3D value noise on an integer lattice.

Lattice values come from a splitmix-style integer hash of the cell
coordinates and a seed, so evaluation is deterministic, stateless and
vectorized over arbitrary point sets — the same (point, seed) pair always
produces the same value on any platform.
"""

from __future__ import annotations

import numpy as np

_U64 = np.uint64


def _mix(h):
    h = h.astype(_U64)
    h ^= h >> _U64(30)
    h *= _U64(0xBF58476D1CE4E5B9)
    h ^= h >> _U64(27)
    h *= _U64(0x94D049BB133111EB)
    h ^= h >> _U64(31)
    return h


def lattice_values(ix, iy, iz, seed: int):
    """Uniform [0,1) values at integer lattice coordinates."""
    seed_mix = (int(seed) * 0x27D4EB2F165667C5) & 0xFFFFFFFFFFFFFFFF
    h = (ix.astype(np.int64).astype(_U64) * _U64(0x9E3779B97F4A7C15)
         ^ iy.astype(np.int64).astype(_U64) * _U64(0xC2B2AE3D27D4EB4F)
         ^ iz.astype(np.int64).astype(_U64) * _U64(0x165667B19E3779F9)
         ^ _U64(seed_mix))
    return (_mix(h) >> _U64(11)).astype(np.float64) / float(1 << 53)


def value_noise3(points: np.ndarray, seed: int, frequency: float = 1.0,
                 octaves: int = 1, lacunarity: float = 2.0, gain: float = 0.5):
    """Fractal value noise in [0,1] at 3D points [...,3]."""
    pts = np.asarray(points, dtype=np.float64)
    out = np.zeros(pts.shape[:-1])
    total = 0.0
    amp = 1.0
    freq = float(frequency)
    for o in range(octaves):
        p = pts * freq
        i0 = np.floor(p).astype(np.int64)
        f = p - i0
        w = f * f * (3.0 - 2.0 * f)  # smoothstep fade
        acc = np.zeros(pts.shape[:-1])
        for dz in (0, 1):
            for dy in (0, 1):
                for dx in (0, 1):
                    corner = lattice_values(i0[..., 0] + dx, i0[..., 1] + dy,
                                            i0[..., 2] + dz, seed + 101 * o)
                    wt = (w[..., 0] if dx else 1 - w[..., 0]) \
                        * (w[..., 1] if dy else 1 - w[..., 1]) \
                        * (w[..., 2] if dz else 1 - w[..., 2])
                    acc += corner * wt
        out += amp * acc
        total += amp
        amp *= gain
        freq *= lacunarity
    return out / total
