"""ISAM kernel quadrature, discretized kernel tables and passband predicates.

Conventions
-----------
One transverse dimension ``x`` and depth ``z`` (micrometres); wavenumbers in
rad/um. The transverse Fourier transform of the data carries the factor
``1/(2*pi)``; that constant, like every other global scale factor, is folded
into the kernel so that the DFT-domain model reads
``S[f, q, m] = sum_s h_s[m] sum_n A_f[q, m, n] P_s[q, n]``.
"""
from __future__ import annotations

import functools
import hashlib
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_legendre

__all__ = [
    "ImagingGeometry",
    "KernelTable",
    "kz",
    "isam_kernel",
    "isam_kernel_point",
    "build_kernel_table",
    "kernel_block",
    "dft_to_ft",
    "transverse_frequencies",
    "effective_rank",
    "passband_contains",
    "quadrature_nodes_for",
    "kernel_self_convergence",
    "SamplingWarning",
]

DEFAULT_NODES = 257


class SamplingWarning(UserWarning):
    """Transverse sampling coarser than the instrument bandwidth requires."""


@dataclass(frozen=True)
class ImagingGeometry:
    """Grid, band and optics of a two-dimensional (x, z) acquisition.

    ``power_spectrum`` holds ``|P(k0)|**2`` on the wavenumber grid; ``None``
    means flat (all ones) over ``[kmin, kmax]``.
    """

    Nx: int
    Nz: int
    Nk: int
    Lx: float
    Lz: float
    kmin: float
    kmax: float
    NA: float
    focal_planes: tuple
    power_spectrum: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("Nx", "Nz", "Nk"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v}")
            object.__setattr__(self, name, int(v))
        if self.Nx % 2:
            raise ValueError("Nx must be even")
        if self.Nk < 2:
            raise ValueError("Nk must be at least 2")
        if not (self.Lx > 0 and self.Lz > 0):
            raise ValueError("Lx and Lz must be positive")
        if not (0 < self.kmin < self.kmax):
            raise ValueError("need 0 < kmin < kmax")
        if not (0 < self.NA < 1):
            raise ValueError("NA must lie in (0, 1)")
        planes = tuple(float(z) for z in np.atleast_1d(self.focal_planes))
        if not planes:
            raise ValueError("at least one focal plane is required")
        for z in planes:
            if not 0 <= z <= self.Lz:
                raise ValueError(f"focal plane {z} outside [0, Lz={self.Lz}]")
        object.__setattr__(self, "focal_planes", planes)
        if self.power_spectrum is not None:
            ps = tuple(float(p) for p in self.power_spectrum)
            if len(ps) != self.Nk:
                raise ValueError("power_spectrum length must equal Nk")
            if any(p < 0 or not math.isfinite(p) for p in ps):
                raise ValueError("power_spectrum must be finite and non-negative")
            object.__setattr__(self, "power_spectrum", ps)
        limit = math.pi / (self.kmax * math.sin(self.NA))
        if not self.dx < limit:
            warnings.warn(
                f"dx = {self.dx:.4g} um does not satisfy dx < pi/(kmax sin NA) = {limit:.4g} um",
                SamplingWarning,
                stacklevel=3,
            )

    @property
    def Nf(self) -> int:
        return len(self.focal_planes)

    @property
    def dx(self) -> float:
        return self.Lx / self.Nx

    @property
    def dz(self) -> float:
        return self.Lz / self.Nz

    @property
    def dk(self) -> float:
        return (self.kmax - self.kmin) / (self.Nk - 1)

    @property
    def wavenumbers(self) -> np.ndarray:
        return self.kmin + np.arange(self.Nk) * self.dk

    @property
    def depths(self) -> np.ndarray:
        return np.arange(self.Nz) * self.dz

    @property
    def kx(self) -> np.ndarray:
        return transverse_frequencies(self.Nx, self.Lx)

    @property
    def pk2(self) -> np.ndarray:
        if self.power_spectrum is None:
            return np.ones(self.Nk)
        return np.array(self.power_spectrum)

    def to_dict(self) -> dict:
        d = {
            "Nx": self.Nx, "Nz": self.Nz, "Nk": self.Nk,
            "Lx": float(self.Lx), "Lz": float(self.Lz),
            "kmin": float(self.kmin), "kmax": float(self.kmax),
            "NA": float(self.NA), "focal_planes": list(self.focal_planes),
        }
        if self.power_spectrum is not None:
            d["power_spectrum"] = list(self.power_spectrum)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ImagingGeometry":
        known = {"Nx", "Nz", "Nk", "Lx", "Lz", "kmin", "kmax", "NA",
                 "focal_planes", "power_spectrum"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown geometry keys: {sorted(extra)}")
        return cls(**d)

    def with_focal_planes(self, planes) -> "ImagingGeometry":
        d = self.to_dict()
        d["focal_planes"] = list(planes)
        return ImagingGeometry.from_dict(d)

    def digest(self) -> str:
        """Stable hash of the geometry, used to key cached kernel tables."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def kz(k_perp, k0):
    """Axial wavenumber ``sqrt(k0**2 - k_perp**2)`` of a propagating mode."""
    k_perp = np.asarray(k_perp, dtype=float)
    k0 = np.asarray(k0, dtype=float)
    if np.any(np.abs(k_perp) > k0 * (1 + 1e-12)):
        raise ValueError("evanescent mode: |k_perp| > k0")
    out = np.sqrt(np.maximum(k0 * k0 - k_perp * k_perp, 0.0))
    return out[()] if out.ndim == 0 else out


@functools.lru_cache(maxsize=64)
def _legendre(n: int):
    x, w = roots_legendre(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def quadrature_nodes_for(zmax: float, k0: float, nodes: int = DEFAULT_NODES) -> int:
    """Node count used for a depth range ``|z| <= zmax`` at wavenumber ``k0``.

    ``nodes`` is a floor. The phase ``z*(kz + kz')`` sweeps about ``2*zmax*k0``
    radians across the aperture, and the rule adds nodes in proportion so the
    oscillation stays resolved at large depths.
    """
    n = max(int(nodes), int(math.ceil(1.6 * abs(zmax) * k0)) + 64)
    return n | 1


def _theta_rule(kx: float, k0: float, n: int):
    """Nodes/weights in the angle variable ``k' = k0 sin(theta)``.

    The integration interval ``Omega = {|k'| <= k0, |kx - k'| <= k0}`` is mapped
    to angles, and a cubic endpoint map ``s(t) = 3t^2 - 2t^3`` clusters nodes at
    both ends, which removes the square-root behaviour of ``kz(kx - k')`` at the
    edge of ``Omega``.
    """
    lo = max(-k0, kx - k0)
    hi = min(k0, kx + k0)
    t_lo = math.asin(max(-1.0, min(1.0, lo / k0)))
    t_hi = math.asin(max(-1.0, min(1.0, hi / k0)))
    x, w = _legendre(n)
    t = 0.5 * (x + 1.0)
    s = t * t * (3.0 - 2.0 * t)
    ds = 6.0 * t * (1.0 - t)
    theta = t_lo + (t_hi - t_lo) * s
    weights = 0.5 * w * (t_hi - t_lo) * ds
    return theta, weights


def isam_kernel(kx: float, z, k0: float, NA: float, pk2: float = 1.0,
                nodes: int = DEFAULT_NODES) -> np.ndarray:
    """ISAM kernel ``A(kx, z, k0)`` for an array of depths ``z``.

    Evaluates ``pk2/(k0 NA)^2 * int_Omega exp(-(k'^2 + (kx-k')^2)/(k0 NA)^2
    + i z (kz(k') + kz(kx-k'))) / kz(k') dk'`` by Gauss-Legendre quadrature in
    ``theta`` (``k' = k0 sin theta``, so ``dk'/kz(k') = dtheta``).
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    vals = (kx, k0, NA, pk2)
    if not all(math.isfinite(v) for v in vals) or not np.all(np.isfinite(z)):
        raise ValueError("non-finite input to isam_kernel")
    if k0 <= 0:
        raise ValueError("k0 must be positive")
    if nodes < 2:
        raise ValueError("need at least 2 quadrature nodes")
    if abs(kx) > 2 * k0 or pk2 == 0:
        return np.zeros(z.shape, dtype=complex)
    n = quadrature_nodes_for(np.max(np.abs(z)) if z.size else 0.0, k0, nodes)
    theta, w = _theta_rule(kx, k0, n)
    kp = k0 * np.sin(theta)
    kz1 = k0 * np.cos(theta)
    kz2 = np.sqrt(np.maximum(k0 * k0 - (kx - kp) ** 2, 0.0))
    a2 = (k0 * NA) ** 2
    amp = w * np.exp(-(kp * kp + (kx - kp) ** 2) / a2)
    phase = kz1 + kz2
    out = np.exp(1j * np.multiply.outer(z, phase)) @ amp.astype(complex)
    return out * (pk2 / a2)


def isam_kernel_point(k_perp: float, z: float, k0: float, NA: float,
                      pk2: float = 1.0, nodes: int = DEFAULT_NODES) -> complex:
    """Scalar convenience wrapper around :func:`isam_kernel`."""
    return complex(isam_kernel(k_perp, [z], k0, NA, pk2, nodes)[0])


def dft_to_ft(q: int, N: int, L: float) -> float:
    """Continuous transverse frequency of DFT index ``q`` (rad/um)."""
    if int(q) != q or not 0 <= q < N:
        raise ValueError(f"DFT index {q} outside [0, {N})")
    if N % 2:
        raise ValueError("N must be even")
    return 2 * math.pi * (q if q < N // 2 else q - N) / L


def transverse_frequencies(N: int, L: float) -> np.ndarray:
    return np.array([dft_to_ft(q, N, L) for q in range(N)])


def effective_rank(Lz: float, kmin: float, kmax: float) -> int:
    """Slepian-Pollak estimate ``round(Lz (kmax - kmin) / pi)``."""
    if not (kmax > kmin and Lz > 0):
        raise ValueError("need kmax > kmin and Lz > 0")
    return int(round(Lz * (kmax - kmin) / math.pi))


def passband_contains(kx: float, kz0: float, kmin: float, kmax: float, NA: float) -> bool:
    """Whether ``(kx, kz0)`` lies in the optical passband of the instrument.

    The point must sit on a backscattering arc ``sqrt(kx^2 + kz0^2) = 2 k0``
    with ``kz0 < 0`` for some ``k0`` in the band, inside the aperture
    ``kx^2 <= 4 (k0 NA)^2``.
    """
    if not kz0 < 0:
        return False
    k0 = 0.5 * math.hypot(kx, kz0)
    tol = 1e-12 * max(1.0, kmax)
    if not (kmin - tol <= k0 <= kmax + tol):
        return False
    return kx * kx <= 4 * (k0 * NA) ** 2 * (1 + 1e-12)


@dataclass(frozen=True)
class KernelTable:
    """Sampled kernel ``coefficients[f, q, m, n] = A(kx(q), k_m, n dz - z_f)``."""

    coefficients: np.ndarray = field(repr=False)
    geometry: ImagingGeometry
    quadrature_nodes: int = DEFAULT_NODES

    def __post_init__(self):
        g = self.geometry
        c = np.asarray(self.coefficients, dtype=complex)
        if c.shape != (g.Nf, g.Nx, g.Nk, g.Nz):
            raise ValueError(f"table shape {c.shape} does not match geometry")
        c = np.array(c, copy=True)
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @property
    def shape(self):
        return self.coefficients.shape

    def stacked(self, q: int) -> np.ndarray:
        """Focal-plane blocks for index ``q`` stacked into ``(Nf*Nk) x Nz``."""
        g = self.geometry
        return self.coefficients[:, q].reshape(g.Nf * g.Nk, g.Nz)

    def block(self, f: int, q: int) -> np.ndarray:
        return self.coefficients[f, q]

    def select_planes(self, planes) -> "KernelTable":
        planes = list(planes)
        geo = self.geometry.with_focal_planes([self.geometry.focal_planes[i] for i in planes])
        return KernelTable(self.coefficients[planes], geo, self.quadrature_nodes)

    def cache_key(self) -> str:
        return f"{self.geometry.digest()}-{self.quadrature_nodes}"


def _table_column(geometry: ImagingGeometry, q: int, nodes: int) -> np.ndarray:
    g = geometry
    kx = dft_to_ft(q, g.Nx, g.Lx)
    z = (g.depths[None, :] - np.array(g.focal_planes)[:, None]).ravel()
    out = np.zeros((g.Nf, g.Nk, g.Nz), dtype=complex)
    for m, (k0, pk2) in enumerate(zip(g.wavenumbers, g.pk2)):
        out[:, m, :] = isam_kernel(kx, z, k0, g.NA, pk2, nodes).reshape(g.Nf, g.Nz)
    return out


def kernel_block(geometry: ImagingGeometry, q: int, nodes: int = DEFAULT_NODES) -> np.ndarray:
    """Stacked ``(Nf*Nk) x Nz`` kernel block for one transverse index ``q``.

    Same values as ``build_kernel_table(geometry).stacked(q)`` without
    sampling the other blocks.
    """
    g = geometry
    return _table_column(g, q, nodes).reshape(g.Nf * g.Nk, g.Nz)


def build_kernel_table(geometry: ImagingGeometry, nodes: int = DEFAULT_NODES,
                       workers: int | None = None) -> KernelTable:
    """Sample the kernel on every ``(f, q, m, n)`` of the geometry.

    The work is an independent map over transverse indices ``q``; ``workers``
    spreads it over a thread pool with identical results.
    """
    g = geometry
    table = np.empty((g.Nf, g.Nx, g.Nk, g.Nz), dtype=complex)
    qs = range(g.Nx)
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cols = list(pool.map(lambda q: _table_column(g, q, nodes), qs))
    else:
        cols = [_table_column(g, q, nodes) for q in qs]
    for q, col in zip(qs, cols):
        table[:, q] = col
    return KernelTable(table, g, int(nodes))


def kernel_self_convergence(geometry: ImagingGeometry, nodes: int = DEFAULT_NODES,
                            q_list=None) -> float:
    """Max change between ``nodes`` and ``2*nodes`` relative to the max entry.

    Only the listed ``q`` (default: all) are compared.
    """
    g = geometry
    q_list = range(g.Nx) if q_list is None else q_list
    a = np.stack([_table_column(g, q, nodes) for q in q_list])
    b = np.stack([_table_column(g, q, 2 * nodes) for q in q_list])
    scale = np.max(np.abs(b))
    return float(np.max(np.abs(a - b)) / scale) if scale else 0.0
