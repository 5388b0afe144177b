"""Spectral profiles: synthesis, file I/O and the spectra matrix.

A spectral profile is the complex susceptibility of one chemical species
sampled on the instrument wavenumber grid ``k_i = kmin + i * dk``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .rng import substream

__all__ = [
    "SpectralProfile",
    "SpectralLibrary",
    "susceptibility_from_index",
    "lorentzian",
    "synth_lorentzian",
    "random_profile",
    "build_H",
    "demo_library",
]

PHYSICAL = "physical"
SYNTHETIC_RANDOM = "synthetic-random"

# Oscillator parameter defaults for the sum-of-Lorentzians model.
SIGMA_RANGE = (0.0, 0.1)
NU_RANGE = (1.2 * np.pi, 4.4 * np.pi)
GAMMA_RANGE = (2 * np.pi * 1e-3, 4 * np.pi * 1e-2)
N_OSCILLATORS = 99


def _frozen(a, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SpectralProfile:
    """Named complex susceptibility profile on a wavenumber grid.

    Profiles of kind ``"physical"`` must have a non-negative imaginary part
    (absorption), which is checked on construction.
    """

    name: str
    values: np.ndarray
    kind: str = PHYSICAL

    def __post_init__(self):
        vals = _frozen(self.values, complex)
        if vals.ndim != 1 or vals.size == 0:
            raise ValueError("profile values must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"profile {self.name!r} has non-finite values")
        if self.kind not in (PHYSICAL, SYNTHETIC_RANDOM):
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.kind == PHYSICAL and np.any(vals.imag < 0):
            raise ValueError(
                f"physical profile {self.name!r} has negative imaginary part"
            )
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.size

    def scaled(self, c: complex) -> "SpectralProfile":
        kind = self.kind
        if kind == PHYSICAL and not (np.isreal(c) and np.real(c) >= 0):
            kind = SYNTHETIC_RANDOM
        return SpectralProfile(self.name, self.values * c, kind)


@dataclass(frozen=True)
class SpectralLibrary:
    """Ordered collection of profiles sharing one uniform wavenumber grid."""

    profiles: tuple
    wavenumbers: np.ndarray = field(repr=False)

    def __post_init__(self):
        k = _frozen(self.wavenumbers, float)
        if k.ndim != 1 or k.size < 1:
            raise ValueError("wavenumber grid must be a non-empty 1-D sequence")
        if k.size > 1:
            dk = np.diff(k)
            if np.any(dk <= 0):
                raise ValueError("wavenumbers must be strictly increasing")
            if not np.allclose(dk, dk[0], rtol=1e-8, atol=0):
                raise ValueError("wavenumbers must be uniformly spaced")
        profiles = tuple(self.profiles)
        for p in profiles:
            if len(p) != k.size:
                raise ValueError(
                    f"profile {p.name!r} has {len(p)} samples, grid has {k.size}"
                )
        names = [p.name for p in profiles]
        if len(set(names)) != len(names):
            raise ValueError("profile names must be unique")
        object.__setattr__(self, "profiles", profiles)
        object.__setattr__(self, "wavenumbers", k)

    def __len__(self) -> int:
        return len(self.profiles)

    def __getitem__(self, i) -> SpectralProfile:
        return self.profiles[i]

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.profiles]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def matrix(self) -> np.ndarray:
        """All profiles as an ``Nk x Ms`` matrix."""
        return build_H(self, range(len(self)))

    def to_csv(self, path) -> None:
        """Write ``k0,<name>_re,<name>_im,...`` with one row per wavenumber."""
        header = ["k0"]
        for p in self.profiles:
            header += [f"{p.name}_re", f"{p.name}_im"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i, k in enumerate(self.wavenumbers):
                row = [repr(float(k))]
                for p in self.profiles:
                    row += [repr(float(p.values[i].real)), repr(float(p.values[i].imag))]
                w.writerow(row)

    @classmethod
    def from_csv(cls, path, wavenumbers=None, kind: str = PHYSICAL) -> "SpectralLibrary":
        """Read a spectra CSV, optionally resampling onto ``wavenumbers``.

        Resampling interpolates real and imaginary parts linearly; requesting a
        wavenumber outside the file's range raises ``ValueError``.
        """
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty spectra file")
        header, body = rows[0], [r for r in rows[1:] if r]
        if header[0].strip() != "k0" or len(header) % 2 != 1:
            raise ValueError(f"{path}: header must be k0 followed by _re/_im pairs")
        names = []
        for re_col, im_col in zip(header[1::2], header[2::2]):
            if not (re_col.endswith("_re") and im_col.endswith("_im")) or re_col[:-3] != im_col[:-3]:
                raise ValueError(f"{path}: mismatched columns {re_col!r}, {im_col!r}")
            names.append(re_col[:-3])
        data = np.array(body, dtype=float)
        if data.ndim != 2 or data.shape[1] != len(header):
            raise ValueError(f"{path}: ragged rows")
        k_file = data[:, 0]
        values = data[:, 1::2] + 1j * data[:, 2::2]
        if wavenumbers is None:
            k_out = k_file
        else:
            k_out = np.asarray(wavenumbers, dtype=float)
            span = 1e-9 * max(1.0, abs(k_file[-1]))
            if k_out.min() < k_file[0] - span or k_out.max() > k_file[-1] + span:
                raise ValueError(
                    f"{path}: grid [{k_out.min()}, {k_out.max()}] extends beyond "
                    f"file range [{k_file[0]}, {k_file[-1]}]"
                )
            if k_out.shape != k_file.shape or not np.allclose(k_out, k_file, rtol=1e-12):
                re = np.column_stack([np.interp(k_out, k_file, v.real) for v in values.T])
                im = np.column_stack([np.interp(k_out, k_file, v.imag) for v in values.T])
                values = re + 1j * im
        profiles = tuple(
            SpectralProfile(n, values[:, j], kind) for j, n in enumerate(names)
        )
        return cls(profiles, k_out)


def susceptibility_from_index(n_r, kappa):
    """Complex susceptibility ``n**2 - 1`` for ``n = n_r + i*kappa``."""
    n_r = np.asarray(n_r, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    out = (n_r**2 - kappa**2 - 1.0) + 2j * n_r * kappa
    return out[()] if out.ndim == 0 else out


def lorentzian(k0, sigma0, sigma, nu, gamma) -> np.ndarray:
    """Evaluate ``sigma0 + sum_n sigma_n / (nu_n**2 - k0**2 - i*gamma_n*k0)``."""
    k0 = np.atleast_1d(np.asarray(k0, dtype=float))
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    nu = np.atleast_1d(np.asarray(nu, dtype=float))
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    denom = nu[None, :] ** 2 - k0[:, None] ** 2 - 1j * gamma[None, :] * k0[:, None]
    return sigma0 + (sigma[None, :] / denom).sum(axis=1)


def synth_lorentzian(
    seed: int,
    wavenumbers,
    n_oscillators: int = N_OSCILLATORS,
    sigma0_range=SIGMA_RANGE,
    sigma_range=SIGMA_RANGE,
    nu_range=NU_RANGE,
    gamma_range=GAMMA_RANGE,
    name: str | None = None,
) -> SpectralProfile:
    """Draw a random sum-of-Lorentzians profile.

    Every parameter is uniform on its range. Non-negative amplitudes and
    damping keep the imaginary part non-negative for ``k0 > 0``.
    """
    k = np.asarray(wavenumbers, dtype=float)
    if k.size == 0:
        raise ValueError("empty wavenumber grid")
    if n_oscillators < 0:
        raise ValueError("n_oscillators must be non-negative")
    rng = substream(seed, "lorentzian")
    sigma0 = rng.uniform(*sigma0_range)
    sigma = rng.uniform(*sigma_range, size=n_oscillators)
    nu = rng.uniform(*nu_range, size=n_oscillators)
    gamma = rng.uniform(*gamma_range, size=n_oscillators)
    values = lorentzian(k, sigma0, sigma, nu, gamma)
    nonneg = sigma0_range[0] >= 0 and sigma_range[0] >= 0 and gamma_range[0] >= 0
    kind = PHYSICAL if nonneg and np.all(k > 0) else SYNTHETIC_RANDOM
    return SpectralProfile(name or f"lorentz{seed}", values, kind)


def random_profile(seed: int, Nk: int, name: str | None = None) -> SpectralProfile:
    """Gaussian real part and Unif[0, 1] imaginary part, i.i.d. per sample."""
    if Nk < 1:
        raise ValueError("Nk must be at least 1")
    rng = substream(seed, "random-profile")
    values = rng.standard_normal(Nk) + 1j * rng.uniform(0.0, 1.0, Nk)
    return SpectralProfile(name or f"random{seed}", values, SYNTHETIC_RANDOM)


def build_H(library: SpectralLibrary, selection: Sequence[int]) -> np.ndarray:
    """Stack the selected profiles as columns of an ``Nk x Ns`` matrix."""
    idx = [int(i) for i in selection]
    if len(set(idx)) != len(idx):
        raise ValueError(f"duplicate indices in selection {idx}")
    for i in idx:
        if not 0 <= i < len(library):
            raise IndexError(f"selection index {i} outside library of {len(library)}")
    if not idx:
        return np.zeros((library.wavenumbers.size, 0), dtype=complex)
    return np.column_stack([library[i].values for i in idx])


def demo_library(wavenumbers, n_species: int = 5, seed: int = 0,
                 n_oscillators: int = 12) -> SpectralLibrary:
    """Library of Lorentzian profiles with resonances inside the band.

    Used where measured spectra are unavailable. Placing the resonances in
    ``[kmin, kmax]`` gives each species visible features on the grid.
    """
    k = np.asarray(wavenumbers, dtype=float)
    kmin, kmax = float(k[0]), float(k[-1])
    span = kmax - kmin
    profiles = []
    for s in range(n_species):
        p = synth_lorentzian(
            seed * 1000 + s,
            k,
            n_oscillators=n_oscillators,
            sigma0_range=(0.0, 0.1),
            sigma_range=(0.0, 0.02 * kmax),
            nu_range=(kmin + 0.02 * span, kmax - 0.02 * span),
            gamma_range=(0.02 * span, 0.08 * span),
            name=f"species{s}",
        )
        profiles.append(p)
    return SpectralLibrary(tuple(profiles), k)
