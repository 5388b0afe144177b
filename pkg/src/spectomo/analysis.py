"""Singular-value studies of the per-block system matrices."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExceeded
from .forward import assemble_block
from .kernel import KernelTable
from .rng import substream
from .spectra import SpectralLibrary, random_profile

__all__ = ["SvScan", "sv_scan", "SvEnvelope", "sv_ensemble", "write_envelopes_csv", "DENSE_BUDGET"]

# complex entries allowed in one dense block (about 256 MB)
DENSE_BUDGET = 16_000_000


@dataclass
class SvScan:
    """Singular values per transverse block, largest first."""

    q: list
    values: list = field(repr=False)
    metadata: dict = field(default_factory=dict)

    def __getitem__(self, q) -> np.ndarray:
        return self.values[self.q.index(q)]

    def to_csv(self, path) -> None:
        """Long format ``q,index,sigma``."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["q", "index", "sigma"])
            for q, s in zip(self.q, self.values):
                for i, v in enumerate(s):
                    w.writerow([q, i, repr(float(v))])


def _check_budget(rows: int, cols: int, budget: int):
    if rows * cols > budget:
        raise BudgetExceeded(f"dense block {rows}x{cols} exceeds {budget} entries")


def sv_scan(H, table: KernelTable, q_list=None, normalize: bool = False,
            budget: int = DENSE_BUDGET, names=None) -> SvScan:
    """Full singular spectra of ``Phi^q`` for each ``q`` in ``q_list``.

    With ``H=None`` the stacked kernel blocks ``Abar^q`` are analysed instead.
    ``normalize`` scales each non-zero spectrum to unit spectral norm.
    """
    g = table.geometry
    Nf, Nx, Nk, Nz = table.shape
    q_list = list(range(Nx)) if q_list is None else [int(q) for q in q_list]
    Ns = 0 if H is None else np.asarray(H).shape[1]
    _check_budget(Nf * Nk, max(Ns, 1) * Nz, budget)
    values = []
    for q in q_list:
        M = table.stacked(q) if H is None else assemble_block(q, H, table)
        s = np.linalg.svd(M, compute_uv=False)
        if normalize and s.size and s[0] > 0:
            s = s / s[0]
        values.append(s)
    meta = {
        "geometry": g.digest(),
        "NA": g.NA,
        "Nf": Nf,
        "Ns": Ns,
        "species": list(names) if names is not None else [],
        "normalized": bool(normalize),
        "operator": "kernel" if H is None else "phi",
    }
    return SvScan(q_list, values, meta)


@dataclass
class SvEnvelope:
    """Best and worst normalized spectra over an ensemble, per plane count."""

    Nf: int
    lower: np.ndarray
    upper: np.ndarray
    trials: int


def sv_ensemble(library: SpectralLibrary | None, Ns: int, Nf_list, trials: int, seed: int,
                table: KernelTable, q: int = 0) -> list:
    """Envelope of normalized singular spectra of ``Phi^q`` over random draws.

    Each trial picks ``Ns`` distinct profiles from ``library`` or, when
    ``library`` is ``None``, ``Ns`` random Gaussian profiles. Plane counts in
    ``Nf_list`` use the first ``Nf`` focal planes of ``table``. All draws come
    from named substreams of ``seed``, one per trial, so envelopes are
    reproducible and independent of evaluation order.
    """
    Nf_tab, Nx, Nk, Nz = table.shape
    if library is not None and len(library) < Ns:
        raise ValueError(f"library has {len(library)} profiles, need {Ns}")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    Hs = []
    for t in range(trials):
        rng = substream(seed, f"ensemble/{t}")
        if library is None:
            base = int(rng.integers(2**62))
            H = np.column_stack([random_profile(base + s, Nk).values for s in range(Ns)])
        else:
            idx = rng.choice(len(library), size=Ns, replace=False)
            H = library.matrix()[:, np.sort(idx)]
        Hs.append(H)
    out = []
    for Nf in Nf_list:
        if not 1 <= Nf <= Nf_tab:
            raise ValueError(f"Nf = {Nf} outside [1, {Nf_tab}]")
        sub = table.select_planes(range(Nf))
        spectra = np.array([sv_scan(H, sub, [q], normalize=True).values[0] for H in Hs])
        out.append(SvEnvelope(int(Nf), spectra.min(axis=0), spectra.max(axis=0), trials))
    return out


def write_envelopes_csv(envelopes, path) -> None:
    """``Nf,index,lower,upper`` rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["Nf", "index", "lower", "upper"])
        for e in envelopes:
            for i, (lo, hi) in enumerate(zip(e.lower, e.upper)):
                w.writerow([e.Nf, i, repr(float(lo)), repr(float(hi))])
