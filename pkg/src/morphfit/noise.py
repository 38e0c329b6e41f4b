"""Deterministic hash-based value noise.

All noise here is computed from integer lattice hashing, so results are
bit-identical for a given seed on any platform. No global RNG state is
touched anywhere.
"""

import numpy as np

_MASK32 = np.uint64(0xFFFFFFFF)


def _mix(h):
    """32-bit finalizer (lowbias32), computed in uint64 with explicit masking."""
    h = h & _MASK32
    h = ((h ^ (h >> np.uint64(16))) * np.uint64(0x7FEB352D)) & _MASK32
    h = ((h ^ (h >> np.uint64(15))) * np.uint64(0x846CA68B)) & _MASK32
    h = h ^ (h >> np.uint64(16))
    return h & _MASK32


def _lattice_hash(ix, iy, iz, seed):
    """Hash integer lattice coordinates to floats in [0, 1)."""
    ix = np.asarray(ix, dtype=np.int64).astype(np.uint64) & _MASK32
    iy = np.asarray(iy, dtype=np.int64).astype(np.uint64) & _MASK32
    iz = np.asarray(iz, dtype=np.int64).astype(np.uint64) & _MASK32
    h = _mix(np.uint64(int(seed) & 0xFFFFFFFF) ^ (ix * np.uint64(0x9E3779B1) & _MASK32))
    h = _mix(h ^ (iy * np.uint64(0x85EBCA77) & _MASK32))
    h = _mix(h ^ (iz * np.uint64(0xC2B2AE3D) & _MASK32))
    return h.astype(np.float64) / 4294967296.0


def value_noise3(points, seed):
    """Trilinearly interpolated lattice noise at `points` (n, 3), lattice units.

    Returns values in [0, 1). Smoothstep fade between lattice corners.
    """
    pts = np.asarray(points, dtype=np.float64)
    p0 = np.floor(pts).astype(np.int64)
    f = pts - p0
    w = f * f * (3.0 - 2.0 * f)
    out = np.zeros(pts.shape[0], dtype=np.float64)
    for dx in (0, 1):
        wx = w[:, 0] if dx else 1.0 - w[:, 0]
        for dy in (0, 1):
            wy = w[:, 1] if dy else 1.0 - w[:, 1]
            for dz in (0, 1):
                wz = w[:, 2] if dz else 1.0 - w[:, 2]
                v = _lattice_hash(p0[:, 0] + dx, p0[:, 1] + dy, p0[:, 2] + dz, seed)
                out += v * wx * wy * wz
    return out


def fbm3(points, scale, seed, octaves=2):
    """Fractal sum of 3D value noise.

    points are in physical units; `scale` is the base lattice spacing in the
    same units. Each octave halves the spacing. Output in [0, 1).
    """
    pts = np.asarray(points, dtype=np.float64)
    total = np.zeros(pts.shape[0], dtype=np.float64)
    amp_sum = 0.0
    amp = 1.0
    step = float(scale)
    for o in range(octaves):
        total += amp * value_noise3(pts / step, seed + 101 * o)
        amp_sum += amp
        amp *= 0.5
        step *= 0.5
    return total / amp_sum


def _grid_noise2(width, height, scale, seed):
    """One octave of 2D value noise over a pixel grid.

    Exploits the regular grid: only the (small) set of lattice corners is
    hashed, then pixels interpolate from gathered corner values.
    """
    x = np.arange(width, dtype=np.float64) / scale
    y = np.arange(height, dtype=np.float64) / scale
    ix = np.floor(x).astype(np.int64)
    iy = np.floor(y).astype(np.int64)
    fx = x - ix
    fy = y - iy
    gx = np.arange(ix[0], ix[-1] + 2)
    gy = np.arange(iy[0], iy[-1] + 2)
    mx, my = np.meshgrid(gx, gy)
    lattice = _lattice_hash(mx, my, np.zeros_like(mx), seed)
    jx = ix - gx[0]
    jy = iy - gy[0]
    wx = (fx * fx * (3.0 - 2.0 * fx))[None, :]
    wy = (fy * fy * (3.0 - 2.0 * fy))[:, None]
    v00 = lattice[jy[:, None], jx[None, :]]
    v01 = lattice[jy[:, None], jx[None, :] + 1]
    v10 = lattice[jy[:, None] + 1, jx[None, :]]
    v11 = lattice[jy[:, None] + 1, jx[None, :] + 1]
    top = v00 * (1.0 - wx) + v01 * wx
    bot = v10 * (1.0 - wx) + v11 * wx
    return top * (1.0 - wy) + bot * wy


def noise_image(width, height, scale, seed, octaves=3):
    """Grayscale noise raster (height, width) with values in [0, 1)."""
    out = np.zeros((height, width), dtype=np.float64)
    amp_sum = 0.0
    amp = 1.0
    step = float(scale)
    for o in range(octaves):
        out += amp * _grid_noise2(width, height, step, seed + 101 * o)
        amp_sum += amp
        amp *= 0.5
        step *= 0.5
    return out / amp_sum
