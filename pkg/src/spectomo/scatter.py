"""Synthetic measurements from point scatterers and coarse pixel objects.

Fields are scalar and two-dimensional. The focused beam is the angular
spectrum whose pupil matches the kernel integrand, so Born-mode point data
and the kernel table describe the same instrument.

Normalization
-------------
Spatial data are scaled so that a unit-strength scatterer sitting on a grid
node produces the data of a unit density sample in ``P`` under the DFT-domain
model (``S = H (.) A P`` followed by the inverse transverse DFT). With that
convention Born data can be inverted by the kernel table without calibration.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.special import hankel1

from .errors import BudgetExceeded, NumericalFailure
from .kernel import ImagingGeometry, _legendre
from .rng import substream

__all__ = [
    "PointScatterer",
    "SimulationConfig",
    "incident_beam",
    "collection_beam",
    "green_2d",
    "foldy_lax_solve",
    "simulate_point_data",
    "multiple_scattering_ratio",
    "perturb_spectra",
    "scatterer_profiles",
    "lippmann_schwinger_coarse",
    "LS_MAX_CELLS",
]

BORN = "born"
FOLDY = "foldy"
LS_MAX_CELLS = 64 * 64


@dataclass(frozen=True)
class PointScatterer:
    """Point target at ``(x, z)`` um carrying ``strength`` times a species profile."""

    x: float
    z: float
    species: int
    strength: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.z)):
            raise ValueError("scatterer position must be finite")
        if not self.strength > 0:
            raise ValueError("strength must be positive")
        if int(self.species) != self.species or self.species < 0:
            raise ValueError("species must be a non-negative index")

    @property
    def position(self):
        return (self.x, self.z)


@dataclass(frozen=True)
class SimulationConfig:
    """Settings for :func:`simulate_point_data`.

    ``spectral_noise`` holds one variance ``xi_s`` per selected species (or a
    single value broadcast to all). ``delta`` scales the whole object.
    """

    geometry: ImagingGeometry
    mode: str = BORN
    spectral_noise: tuple = (0.0,)
    seed: int = 0
    delta: float = 1.0
    nodes: int = 129
    workers: int | None = None

    def __post_init__(self):
        if self.mode not in (BORN, FOLDY):
            raise ValueError(f"mode must be 'born' or 'foldy', got {self.mode!r}")
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        xi = tuple(float(v) for v in np.atleast_1d(self.spectral_noise))
        if any(v < 0 or not math.isfinite(v) for v in xi):
            raise ValueError("spectral noise variances must be finite and >= 0")
        object.__setattr__(self, "spectral_noise", xi)

    def noise_for(self, Ns: int) -> np.ndarray:
        xi = np.asarray(self.spectral_noise, dtype=float)
        if xi.size == 1:
            return np.full(Ns, xi[0])
        if xi.size != Ns:
            raise ValueError(f"{xi.size} noise variances for {Ns} species")
        return xi


def _beam_nodes(k0: float, reach: float, nodes: int) -> int:
    # phase k0*|r - r0| sweeps across the aperture; keep it resolved
    return max(int(nodes), int(math.ceil(1.2 * k0 * reach)) + 48) | 1


def _beam(x, z, r0x, zf, k0, NA, nodes, weight_kz: bool) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    dx = np.subtract.outer(x, np.asarray(r0x, dtype=float)) if np.ndim(r0x) else x - r0x
    dz = z - zf
    if np.ndim(r0x):
        dz = np.broadcast_to(np.asarray(dz)[..., None], dx.shape)
    reach = float(np.max(np.hypot(dx, dz))) if np.size(dx) else 0.0
    n = _beam_nodes(k0, reach, nodes)
    t, w = _legendre(n)
    theta = 0.5 * math.pi * t
    w = 0.5 * math.pi * w * np.exp(-(np.sin(theta) / NA) ** 2)
    if weight_kz:
        w = w * k0 * np.cos(theta)
    kx = k0 * np.sin(theta)
    kzz = k0 * np.cos(theta)
    ph = np.multiply.outer(dx, kx) + np.multiply.outer(dz, kzz)
    return np.exp(1j * ph) @ w.astype(complex)


def incident_beam(r, r0x, zf: float, k0: float, NA: float, nodes: int = 129):
    """Focused illumination at ``r = (x, z)`` for scan position ``r0x``.

    ``g(r) = int exp(-(k'/(k0 NA))^2) exp(i k' (x - r0x) + i kz(k') (z - zf))
    dk'/kz(k')`` over ``|k'| < k0``, evaluated in the angle variable
    ``k' = k0 sin(theta)``. ``r0x`` may be an array, in which case the
    result has a trailing scan axis. ``nodes`` is a floor raised with
    ``k0 |r - r0|``.
    """
    if not k0 > 0:
        raise ValueError("k0 must be positive")
    x, z = r
    out = _beam(x, z, r0x, zf, k0, NA, nodes, weight_kz=False)
    return out[()] if np.ndim(out) == 0 else out


def collection_beam(r, r0x, zf: float, k0: float, NA: float, nodes: int = 129):
    """Detection pattern through the aperture: as :func:`incident_beam` with
    plane-wave weights ``dk'`` instead of ``dk'/kz``.

    With these weights the transverse spectrum of ``incident * collection``
    reproduces the kernel integrand exactly.
    """
    if not k0 > 0:
        raise ValueError("k0 must be positive")
    x, z = r
    out = _beam(x, z, r0x, zf, k0, NA, nodes, weight_kz=True)
    return out[()] if np.ndim(out) == 0 else out


def green_2d(r, k0: float):
    """Free-space Helmholtz Green's function ``(i/4) H0^(1)(k0 r)`` in 2-D."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("Green's function is singular at r = 0")
    return 0.25j * hankel1(0, k0 * r)


def foldy_lax_solve(positions, alpha, incident, k0: float) -> np.ndarray:
    """Self-consistent exciting fields of coupled point scatterers.

    Solves ``(I - M) psi = e`` with ``M[n, m] = alpha[m] G(r_n, r_m)`` for
    ``n != m`` and zero diagonal. ``incident`` may carry extra trailing
    columns (one right-hand side per illumination).

    Raises
    ------
    NumericalFailure
        If the system is singular or badly conditioned (resonant layout).
    """
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    alpha = np.asarray(alpha, dtype=complex).ravel()
    e = np.asarray(incident, dtype=complex)
    n = pos.shape[0]
    if alpha.size != n or e.shape[0] != n:
        raise ValueError("positions, alpha and incident must agree in length")
    if n == 0:
        return e.copy()
    d = np.hypot(*(pos[:, None, :] - pos[None, :, :]).transpose(2, 0, 1))
    off = ~np.eye(n, dtype=bool)
    if np.any(d[off] == 0):
        raise ValueError("scatterer positions must be distinct")
    M = np.zeros((n, n), dtype=complex)
    M[off] = green_2d(d[off], k0)
    M *= alpha[None, :]
    A = np.eye(n) - M
    try:
        lu = scipy.linalg.lu_factor(A, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise NumericalFailure(f"Foldy-Lax system could not be factored: {exc}") from exc
    if np.any(np.abs(np.diag(lu[0])) < 1e-14 * max(1.0, np.abs(A).max())):
        raise NumericalFailure("Foldy-Lax system is singular (resonant configuration)")
    psi = scipy.linalg.lu_solve(lu, e)
    if not np.all(np.isfinite(psi)):
        raise NumericalFailure("non-finite Foldy-Lax solution")
    return psi


def _normalization(geometry: ImagingGeometry, k0: float, pk2: float) -> float:
    """Scale making a unit on-grid scatterer a unit density sample.

    Point data ``g_in g_out`` have transverse spectrum
    ``2 pi (k0 NA)^2 / pk2 * A``. Sampling the scan at ``dx`` and taking the
    DFT multiplies by ``1/dx``, and the scatterer carries the cell area
    ``dx dz`` through its polarizability.
    """
    g = geometry
    return pk2 / (2 * math.pi * g.dz * (k0 * g.NA) ** 2)


def perturb_spectra(h, xi: float, n_locations: int, seed: int = 0) -> np.ndarray:
    """Per-location copies of profile ``h`` with circular Gaussian noise.

    Returns ``(n_locations, Nk)`` with entries ``h[m] + e`` and
    ``e ~ CN(0, xi)`` (real and imaginary parts each of variance ``xi/2``).
    """
    h = np.asarray(h, dtype=complex).ravel()
    if xi < 0:
        raise ValueError("xi must be non-negative")
    out = np.tile(h, (int(n_locations), 1))
    if xi == 0 or n_locations == 0:
        return out
    rng = substream(seed, "spectral-noise")
    s = math.sqrt(xi / 2)
    out += s * (rng.standard_normal(out.shape) + 1j * rng.standard_normal(out.shape))
    return out


def _check_inside(scatterers, g: ImagingGeometry):
    for sc in scatterers:
        if not (0 <= sc.x <= g.Lx and 0 <= sc.z <= g.Lz):
            raise ValueError(f"scatterer at ({sc.x}, {sc.z}) lies outside [0, {g.Lx}] x [0, {g.Lz}]")


def scatterer_profiles(scatterers: Sequence[PointScatterer], H, config: SimulationConfig) -> np.ndarray:
    """Per-scatterer susceptibility ``delta * strength * h_s(k0) (+ noise)``.

    Noise for species ``s`` is drawn from the substream ``spectral-noise/s``
    so that adding scatterers of one species leaves the others' draws intact.
    """
    H = np.asarray(H, dtype=complex)
    Nk, Ns = H.shape
    xi = config.noise_for(Ns)
    out = np.zeros((len(scatterers), Nk), dtype=complex)
    for s in range(Ns):
        idx = [i for i, sc in enumerate(scatterers) if sc.species == s]
        if not idx:
            continue
        seed = int(substream(config.seed, f"spectral-noise/{s}").integers(2**63))
        prof = perturb_spectra(H[:, s], xi[s], len(idx), seed)
        for row, i in zip(prof, idx):
            out[i] = row
    for i, sc in enumerate(scatterers):
        if sc.species >= Ns:
            raise IndexError(f"scatterer species {sc.species} outside selection of {Ns}")
        out[i] *= config.delta * sc.strength
    return out


def simulate_point_data(scatterers: Sequence[PointScatterer], H, config: SimulationConfig) -> np.ndarray:
    """Spatial-domain measurements ``[f, x_index, m]`` of a point phantom.

    ``S = c * sum_n alpha_n g_in(r_n) g_out(r_n) psi_n`` with ``psi_n = 1``
    (Born) or the Foldy-Lax exciting field normalized by the illumination
    scale (``foldy``). ``alpha_n = dx dz * eta_n(k0)`` is the polarizability of
    a grid cell and ``c`` the constant of the module normalization; the
    multiple-scattering coupling uses the physical ``k0^2 alpha_n``.
    """
    g = config.geometry
    scatterers = list(scatterers)
    _check_inside(scatterers, g)
    out = np.zeros((g.Nf, g.Nx, g.Nk), dtype=complex)
    if not scatterers:
        return out
    eta = scatterer_profiles(scatterers, H, config)  # (n, Nk)
    pos = np.array([sc.position for sc in scatterers])
    scan = np.arange(g.Nx) * g.dx
    area = g.dx * g.dz
    # periodic scan: bring each scatterer to the scan period nearest the beam
    dxs = (pos[:, 0][:, None] - scan[None, :] + 0.5 * g.Lx) % g.Lx - 0.5 * g.Lx

    def one_k(m):
        k0 = g.wavenumbers[m]
        c = _normalization(g, k0, g.pk2[m])
        alpha = area * eta[:, m]
        res = np.zeros((g.Nf, g.Nx), dtype=complex)
        for f, zf in enumerate(g.focal_planes):
            gin = _beam(dxs, pos[:, 1][:, None], 0.0, zf, k0, g.NA, config.nodes, False)
            gout = _beam(dxs, pos[:, 1][:, None], 0.0, zf, k0, g.NA, config.nodes, True)
            if config.mode == FOLDY:
                psi = foldy_lax_solve(pos, k0 * k0 * alpha, gin, k0)
            else:
                psi = gin
            res[f] = c * (alpha[:, None] * gout * psi).sum(axis=0)
        return res

    ms = range(g.Nk)
    if config.workers and config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            cols = list(pool.map(one_k, ms))
    else:
        cols = [one_k(m) for m in ms]
    for m, col in zip(ms, cols):
        out[:, :, m] = col
    return out


def multiple_scattering_ratio(s, s_born) -> float:
    """``||s - s_born|| / ||s_born||``."""
    s = np.asarray(s)
    s_born = np.asarray(s_born)
    if s.shape != s_born.shape:
        raise ValueError("shapes differ")
    den = np.linalg.norm(s_born)
    if den == 0:
        raise ZeroDivisionError("Born data are identically zero")
    return float(np.linalg.norm(s - s_born) / den)


def _disk_self_term(k0: float, area: float) -> complex:
    """Integral of the 2-D Green's function over a disk of the given area."""
    a = math.sqrt(area / math.pi)
    return complex(1j * math.pi * a / (2 * k0) * hankel1(1, k0 * a) - 1 / k0**2)


def lippmann_schwinger_coarse(grid_eta, geometry: ImagingGeometry, k0: float,
                              m: int | None = None, nodes: int = 129,
                              max_cells: int = LS_MAX_CELLS) -> np.ndarray:
    """Scattered data of a pixelized object from a dense volume-integral solve.

    ``grid_eta[iz, ix]`` holds the susceptibility of cells of size
    ``(Lx/nx) x (Lz/nz)`` covering the field. Solves
    ``(I - G diag(k0^2 eta) ) u = u_inc`` on the cell centres, with the
    singular self term integrated over an equal-area disk, and collects the
    data as in :func:`simulate_point_data`. Returns ``[f, x_index]``.

    ``m`` selects the power-spectrum entry used by the normalization; by
    default the nearest grid wavenumber.
    """
    g = geometry
    eta = np.asarray(grid_eta, dtype=complex)
    if eta.ndim != 2:
        raise ValueError("grid_eta must be 2-D [z, x]")
    nz, nx = eta.shape
    if nz * nx > max_cells:
        raise BudgetExceeded(f"{nz}x{nx} cells exceed the dense budget of {max_cells}")
    out = np.zeros((g.Nf, g.Nx), dtype=complex)
    mask = eta != 0
    if not np.any(mask):
        return out
    cx, cz = g.Lx / nx, g.Lz / nz
    area = cx * cz
    zz, xx = np.meshgrid((np.arange(nz) + 0.5) * cz, (np.arange(nx) + 0.5) * cx, indexing="ij")
    pos = np.column_stack([xx[mask], zz[mask]])
    e = eta[mask]
    n = pos.shape[0]
    d = np.hypot(*(pos[:, None, :] - pos[None, :, :]).transpose(2, 0, 1))
    G = np.empty((n, n), dtype=complex)
    off = ~np.eye(n, dtype=bool)
    G[off] = green_2d(d[off], k0) * area
    G[~off] = _disk_self_term(k0, area)
    A = np.eye(n) - G * (k0 * k0 * e)[None, :]
    if m is None:
        m = int(np.argmin(np.abs(g.wavenumbers - k0)))
    c = _normalization(g, k0, g.pk2[m])
    scan = np.arange(g.Nx) * g.dx
    dxs = (pos[:, 0][:, None] - scan[None, :] + 0.5 * g.Lx) % g.Lx - 0.5 * g.Lx
    try:
        lu = scipy.linalg.lu_factor(A)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise NumericalFailure(f"volume integral system could not be factored: {exc}") from exc
    for f, zf in enumerate(g.focal_planes):
        gin = _beam(dxs, pos[:, 1][:, None], 0.0, zf, k0, g.NA, nodes, False)
        gout = _beam(dxs, pos[:, 1][:, None], 0.0, zf, k0, g.NA, nodes, True)
        u = scipy.linalg.lu_solve(lu, gin)
        if not np.all(np.isfinite(u)):
            raise NumericalFailure("non-finite volume integral solution")
        out[f] = c * ((area * e)[:, None] * gout * u).sum(axis=0)
    return out
