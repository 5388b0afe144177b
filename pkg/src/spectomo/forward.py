"""Matrix-free N-species forward operator and its adjoint.

Array layouts
-------------
densities     ``P[s, q, n]``   transverse-DFT of species densities
measurements  ``S[f, q, m]``   transverse-DFT of data per focal plane
spectra       ``H[m, s]``
kernel        ``A[f, q, m, n]`` (:class:`~spectomo.kernel.KernelTable`)

For one transverse index ``q`` the operator is the block matrix
``Phi^q = Hbar (.) Abar^q`` (row-wise Khatri-Rao product) of shape
``(Nf*Nk) x (Ns*Nz)`` with rows ordered ``f*Nk + m`` and columns ``s*Nz + n``.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .kernel import KernelTable

__all__ = [
    "khatri_rao",
    "apply_forward",
    "apply_adjoint",
    "assemble_block",
    "measurements_to_fourier",
    "fourier_to_measurements",
    "densities_to_fourier",
    "fourier_to_densities",
    "ForwardOperator",
]


def khatri_rao(A, B) -> np.ndarray:
    """Row-wise Khatri-Rao product: row ``i`` is ``kron(A[i], B[i])``."""
    A = np.asarray(A)
    B = np.asarray(B)
    if A.ndim != 2 or B.ndim != 2:
        raise ValueError("khatri_rao expects two matrices")
    if A.shape[0] != B.shape[0]:
        raise ValueError(f"row counts differ: {A.shape[0]} vs {B.shape[0]}")
    return (A[:, :, None] * B[:, None, :]).reshape(A.shape[0], -1)


def _check(P_or_S, H, table: KernelTable, kind: str):
    Nf, Nx, Nk, Nz = table.shape
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != Nk:
        raise ValueError(f"H must be Nk x Ns with Nk = {Nk}, got {H.shape}")
    Ns = H.shape[1]
    expected = (Ns, Nx, Nz) if kind == "P" else (Nf, Nx, Nk)
    if np.shape(P_or_S) != expected:
        raise ValueError(f"{kind} has shape {np.shape(P_or_S)}, expected {expected}")
    return H


def _chunks(n: int, workers: int | None):
    if not workers or workers <= 1:
        return [slice(0, n)]
    edges = np.linspace(0, n, min(workers, n) + 1).astype(int)
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _map_q(fn, n: int, workers: int | None):
    parts = _chunks(n, workers)
    if len(parts) == 1:
        return [fn(parts[0])]
    with ThreadPoolExecutor(max_workers=len(parts)) as pool:
        return list(pool.map(fn, parts))


def apply_forward(P, H, table: KernelTable, workers: int | None = None) -> np.ndarray:
    """``S[f, q, :] = sum_s diag(h_s) A_f^q p_s^q`` for every ``q``."""
    H = _check(P, H, table, "P")
    return ForwardOperator(H, table, workers).forward(P)


def apply_adjoint(S, H, table: KernelTable, workers: int | None = None) -> np.ndarray:
    """``W[s, q, :] = sum_f (A_f^q)^H diag(h_s)^H S[f, q, :]``."""
    H = _check(S, H, table, "S")
    return ForwardOperator(H, table, workers).adjoint(S)


def assemble_block(q: int, H, table: KernelTable) -> np.ndarray:
    """Dense ``Phi^q`` of shape ``(Nf*Nk) x (Ns*Nz)``; for audits and SVDs."""
    Nf, Nx, Nk, Nz = table.shape
    if not 0 <= q < Nx:
        raise IndexError(f"q = {q} outside [0, {Nx})")
    H = np.asarray(H)
    Ns = H.shape[1]
    Abar = table.stacked(q)
    out = np.empty((Nf * Nk, Ns * Nz), dtype=complex)
    for s in range(Ns):
        out[:, s * Nz:(s + 1) * Nz] = np.tile(H[:, s], Nf)[:, None] * Abar
    return out


def measurements_to_fourier(spatial) -> np.ndarray:
    """Unnormalized forward DFT over the scan index of ``spatial[f, x, m]``."""
    spatial = np.asarray(spatial)
    if spatial.ndim != 3:
        raise ValueError("expected a [f, x, m] array")
    return np.fft.fft(spatial, axis=1)


def fourier_to_measurements(S) -> np.ndarray:
    """Inverse of :func:`measurements_to_fourier` (divides by ``Nx``)."""
    return np.fft.ifft(np.asarray(S), axis=1)


def densities_to_fourier(p) -> np.ndarray:
    """Spatial densities ``p[s, x, n]`` to the transverse-DFT domain."""
    return np.fft.fft(np.asarray(p), axis=1)


def fourier_to_densities(P) -> np.ndarray:
    return np.fft.ifft(np.asarray(P), axis=1)


class ForwardOperator:
    """Bundles ``H`` and a kernel table with apply/adjoint/block helpers.

    The table is re-laid out once as ``[q, f*Nk, Nz]`` so each block product is
    a single batched matrix multiply.
    """

    def __init__(self, H, table: KernelTable, workers: int | None = None):
        self.H = np.asarray(H, dtype=complex)
        if self.H.ndim != 2 or self.H.shape[0] != table.shape[2]:
            raise ValueError("H must be Nk x Ns")
        self.table = table
        self.workers = workers
        Nf, Nx, Nk, Nz = table.shape
        self._A = np.ascontiguousarray(
            table.coefficients.transpose(1, 0, 2, 3).reshape(Nx, Nf * Nk, Nz)
        )
        self._AH = np.ascontiguousarray(self._A.conj().transpose(0, 2, 1))
        self._Hbar = np.tile(self.H, (Nf, 1))  # (Nf*Nk, Ns)

    @property
    def Ns(self) -> int:
        return self.H.shape[1]

    @property
    def density_shape(self):
        Nf, Nx, Nk, Nz = self.table.shape
        return (self.Ns, Nx, Nz)

    @property
    def data_shape(self):
        Nf, Nx, Nk, Nz = self.table.shape
        return (Nf, Nx, Nk)

    def forward(self, P) -> np.ndarray:
        Nf, Nx, Nk, Nz = self.table.shape
        P = np.asarray(P)
        if P.shape != self.density_shape:
            raise ValueError(f"P has shape {P.shape}, expected {self.density_shape}")

        def run(sl):
            Y = np.matmul(self._A[sl], P[:, sl].transpose(1, 2, 0))  # (q, Nf*Nk, Ns)
            return np.einsum("qrs,rs->qr", Y, self._Hbar)

        out = np.concatenate(_map_q(run, Nx, self.workers), axis=0)
        return out.reshape(Nx, Nf, Nk).transpose(1, 0, 2)

    def adjoint(self, S) -> np.ndarray:
        Nf, Nx, Nk, Nz = self.table.shape
        S = np.asarray(S)
        if S.shape != self.data_shape:
            raise ValueError(f"S has shape {S.shape}, expected {self.data_shape}")
        Sq = S.transpose(1, 0, 2).reshape(Nx, Nf * Nk)

        def run(sl):
            U = Sq[sl][:, :, None] * self._Hbar.conj()[None]  # (q, Nf*Nk, Ns)
            return np.matmul(self._AH[sl], U)  # (q, Nz, Ns)

        out = np.concatenate(_map_q(run, Nx, self.workers), axis=0)
        return out.transpose(2, 0, 1)

    def block(self, q: int) -> np.ndarray:
        return assemble_block(q, self.H, self.table)

    def block_norms(self) -> np.ndarray:
        """Spectral norm of every ``Phi^q`` (dense SVD per block)."""
        Nx = self.table.shape[1]
        return np.array([np.linalg.norm(self.block(q), 2) for q in range(Nx)])

    def norm_estimate(self, iters: int = 30, seed: int = 0) -> float:
        """Power-iteration estimate of the spectral norm of the full operator."""
        rng = np.random.default_rng(seed)
        shape = self.density_shape
        x = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        x /= np.linalg.norm(x)
        est = 0.0
        for _ in range(max(1, iters)):
            y = self.adjoint(self.forward(x))
            est = np.linalg.norm(y)
            if est == 0:
                return 0.0
            x = y / est
        return float(np.sqrt(est))
