"""Grayscale and RGB rendering of density stacks as binary PGM/PPM files.

Images are ``Nz`` rows (depth) by ``Nx`` columns (transverse position).
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

__all__ = ["to_uint8", "write_pgm", "write_ppm", "read_pnm", "render_images"]

CHANNELS = {"R": 0, "G": 1, "B": 2}


def to_uint8(img) -> np.ndarray:
    """Scale a non-negative image by its maximum to 0..255 (all-zero stays black)."""
    img = np.asarray(img, dtype=float)
    if np.any(img < 0) or not np.all(np.isfinite(img)):
        raise ValueError("image must be finite and non-negative")
    m = img.max(initial=0.0)
    if m == 0:
        return np.zeros(img.shape, dtype=np.uint8)
    return np.rint(255.0 * img / m).astype(np.uint8)


def write_pgm(path, img8) -> None:
    img8 = np.asarray(img8, dtype=np.uint8)
    if img8.ndim != 2:
        raise ValueError("PGM needs a 2-D image")
    h, w = img8.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img8.tobytes())


def write_ppm(path, rgb8) -> None:
    rgb8 = np.asarray(rgb8, dtype=np.uint8)
    if rgb8.ndim != 3 or rgb8.shape[2] != 3:
        raise ValueError("PPM needs an H x W x 3 image")
    h, w, _ = rgb8.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + rgb8.tobytes())


def read_pnm(path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6) written by this module."""
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    # exactly one whitespace byte separates the header from the raster
    raster = data[pos + 1:]
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError("only 8-bit images are supported")
    if magic == b"P5":
        return np.frombuffer(raster[: w * h], dtype=np.uint8).reshape(h, w)
    if magic == b"P6":
        return np.frombuffer(raster[: 3 * w * h], dtype=np.uint8).reshape(h, w, 3)
    raise ValueError(f"unsupported format {magic!r}")


def _transform(p, transform: str) -> np.ndarray:
    mag = np.abs(p)
    if transform == "magnitude":
        return mag
    if transform == "magnitude2":
        return mag * mag
    raise ValueError("transform must be 'magnitude' or 'magnitude2'")


def render_images(densities, out_dir, names=None, mapping=None,
                  transform: str = "magnitude", fourier: bool = False,
                  prefix: str = "") -> list:
    """Write one PGM per species and, with ``mapping``, one combined PPM.

    Parameters
    ----------
    densities : array ``[s, x, n]``
        Spatial densities, or transverse-DFT densities with ``fourier=True``.
    mapping : dict, optional
        Species index or name to channel ``"R"``, ``"G"`` or ``"B"``.
    transform : {"magnitude", "magnitude2"}

    Returns
    -------
    list of written paths
    """
    p = np.asarray(densities)
    if p.ndim != 3:
        raise ValueError("densities must be [s, x, n]")
    if fourier:
        p = np.fft.ifft(p, axis=1)
    Ns = p.shape[0]
    names = list(names) if names is not None else [f"species{s}" for s in range(Ns)]
    if len(names) != Ns:
        raise ValueError("one name per species required")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    imgs = _transform(p, transform).transpose(0, 2, 1)  # [s, z, x]
    written = []
    for s in range(Ns):
        path = out_dir / f"{prefix}{names[s]}_{transform}.pgm"
        write_pgm(path, to_uint8(imgs[s]))
        written.append(path)
    if mapping:
        used = {}
        rgb = np.zeros(imgs.shape[1:] + (3,), dtype=np.uint8)
        for key, ch in mapping.items():
            s = names.index(key) if isinstance(key, str) else int(key)
            if not 0 <= s < Ns:
                raise ValueError(f"species {key!r} not in the stack")
            c = CHANNELS.get(str(ch).upper())
            if c is None:
                raise ValueError(f"unknown channel {ch!r}")
            if c in used:
                raise ValueError(f"channel {ch} assigned to both {used[c]!r} and {key!r}")
            used[c] = key
            rgb[:, :, c] = to_uint8(imgs[s])
        path = out_dir / f"{prefix}rgb_{transform}.ppm"
        write_ppm(path, rgb)
        written.append(path)
    return written
