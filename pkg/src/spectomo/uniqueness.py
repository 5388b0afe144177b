"""Identifiability audits for one transverse-frequency block.

Every rank decision uses a relative singular-value threshold (``rtol``,
default ``1e-8``). Reports record the singular values either side of the cut
so marginal verdicts can be spotted.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import qr, subspace_angles

from .errors import BudgetExceeded
from .forward import khatri_rao
from .kernel import KernelTable
from .rng import substream

__all__ = [
    "RTOL",
    "numerical_rank",
    "rank_gap",
    "PassbandBasis",
    "nullspace_basis",
    "restricted_phi",
    "Necessary",
    "check_necessary",
    "Sufficient",
    "check_sufficient",
    "KruskalRank",
    "kruskal_rank",
    "adversarial_spectra",
    "BlockSparse",
    "check_block_sparse",
    "plane_alignment",
    "UniquenessReport",
    "audit_block",
]

RTOL = 1e-8
SUBSET_BUDGET = 100_000


def _sv(X) -> np.ndarray:
    X = np.asarray(X)
    if X.size == 0:
        return np.zeros(0)
    return np.linalg.svd(X, compute_uv=False)


def numerical_rank(X, rtol: float = RTOL) -> int:
    """Number of singular values above ``rtol * sigma_max``."""
    s = _sv(X)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def _batched_rank(X, rtol: float = RTOL) -> np.ndarray:
    """Ranks of a stack of matrices ``X[..., m, n]``."""
    s = np.linalg.svd(X, compute_uv=False)
    smax = s[..., :1]
    return np.sum((s > rtol * smax) & (smax > 0), axis=-1)


def rank_gap(X, rtol: float = RTOL) -> tuple[float, float]:
    """Relative singular values just above and just below the rank cut."""
    s = _sv(X)
    if s.size == 0 or s[0] == 0:
        return (0.0, 0.0)
    rel = s / s[0]
    r = int(np.sum(rel > rtol))
    above = float(rel[r - 1]) if r > 0 else 1.0
    below = float(rel[r]) if r < rel.size else 0.0
    return above, below


@dataclass(frozen=True)
class PassbandBasis:
    """Orthonormal basis ``V`` (``Nz x r``) of the optical passband of one block."""

    V: np.ndarray = field(repr=False)
    r: int
    tol: float
    singular_values: np.ndarray = field(repr=False, default=None)

    @property
    def empty(self) -> bool:
        return self.r == 0

    def projector(self) -> np.ndarray:
        return self.V @ self.V.conj().T


def nullspace_basis(stacked_kernel, tol: float = RTOL) -> PassbandBasis:
    """Leading right singular vectors of the stacked kernel.

    Columns of ``V`` span the orthogonal complement of the shared null space.
    An all-zero input yields ``r = 0`` (check :attr:`PassbandBasis.empty`).
    """
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    A = np.asarray(stacked_kernel, dtype=complex)
    _, s, Vh = np.linalg.svd(A, full_matrices=False)
    r = int(np.sum(s > tol * s[0])) if s.size and s[0] > 0 else 0
    return PassbandBasis(Vh[:r].conj().T.copy(), r, tol, s)


def restricted_phi(H, B_stack) -> np.ndarray:
    """``Phi~ = (1_Nf (x) H) (.) Bbar`` for a stacked restricted kernel ``Bbar``."""
    H = np.asarray(H)
    B_stack = np.asarray(B_stack)
    Nk = H.shape[0]
    if B_stack.shape[0] % Nk:
        raise ValueError(f"B_stack has {B_stack.shape[0]} rows, not a multiple of Nk = {Nk}")
    Nf = B_stack.shape[0] // Nk
    return khatri_rao(np.tile(H, (Nf, 1)), B_stack)


def _split_planes(B_stack, Nf: int) -> np.ndarray:
    """``(Nf*Nk) x r`` -> ``[f, m, :]``."""
    B_stack = np.asarray(B_stack)
    if B_stack.shape[0] % Nf:
        raise ValueError("B_stack rows not divisible by Nf")
    return B_stack.reshape(Nf, B_stack.shape[0] // Nf, B_stack.shape[1])


@dataclass
class Necessary:
    """Outcome of the five necessary conditions (N1-N5)."""

    N1: bool
    N2: bool
    N3: bool
    N4: bool
    N5: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.N1 and self.N2 and self.N3 and self.N4 and self.N5


def _n4_subsets(Nk: int, lo: int, hi: int, budget: int, seed: int):
    """Yield ``(size, index-array)`` batches of subsets for condition N4.

    Exhaustive when the total count fits in ``budget``; otherwise ``budget``
    random subsets with sizes drawn proportionally to ``C(Nk, size)``.
    """
    sizes = list(range(lo, hi + 1))
    counts = [math.comb(Nk, j) for j in sizes]
    total = sum(counts)
    if total <= budget:
        for j in sizes:
            combos = np.array(list(itertools.combinations(range(Nk), j)), dtype=int)
            for start in range(0, len(combos), 4096):
                yield j, combos[start:start + 4096]
        return
    rng = substream(seed, "n4-subsets")
    logw = np.array([math.lgamma(Nk + 1) - math.lgamma(j + 1) - math.lgamma(Nk - j + 1)
                     for j in sizes])
    p = np.exp(logw - logw.max())
    p /= p.sum()
    draws = rng.choice(len(sizes), size=budget, p=p)
    for i, j in enumerate(sizes):
        n = int(np.sum(draws == i))
        if n == 0:
            continue
        combos = np.array([np.sort(rng.choice(Nk, size=j, replace=False)) for _ in range(n)])
        for start in range(0, n, 4096):
            yield j, combos[start:start + 4096]


def check_necessary(H, B_stack, Nf: int, r: int | None = None,
                    subset_budget: int = SUBSET_BUDGET, rtol: float = RTOL,
                    seed: int = 0) -> Necessary:
    """Evaluate the necessary conditions for uniqueness within the passband.

    N1 ``Nk*Nf >= Ns*r``; N2 ``rank(H) = Ns``; N3 no non-zero row of ``Bbar``
    orthogonal to all other rows; N4 spectral diversity over row subsets ``J``
    of ``H``; N5 ``sum_i rank(rows of Bbar at wavenumber i) >= Ns*r``.
    """
    H = np.asarray(H)
    B = np.asarray(B_stack)
    Nk, Ns = H.shape
    if r is None:
        r = B.shape[1]
    if B.shape[0] != Nf * Nk:
        raise ValueError("B_stack must have Nf*Nk rows")
    diag: dict = {}

    n1 = Nk * Nf >= Ns * r
    diag["N1"] = {"NkNf": Nk * Nf, "Ns_r": Ns * r}

    rank_H = numerical_rank(H, rtol)
    n2 = rank_H == Ns
    diag["N2"] = {"rank_H": rank_H, "gap": rank_gap(H, rtol)}

    norms = np.linalg.norm(B, axis=1)
    G = B @ B.conj().T
    np.fill_diagonal(G, 0)
    scale = max(norms.max(initial=0.0), np.finfo(float).tiny)
    offending = [
        int(i) for i in range(B.shape[0])
        if norms[i] > rtol * scale and np.max(np.abs(G[i]), initial=0.0) <= rtol * norms[i] * scale
    ]
    # an isolated row carries one equation for Ns unknowns along its direction
    n3 = not offending or Ns == 1
    diag["N3"] = {"orthogonal_rows": offending}

    lo = Ns
    hi = math.ceil(Ns * r / Nf) - 1
    n4 = True
    n4_diag = {"mode": "exhaustive", "checked": 0, "violation": None}
    if hi >= lo and Nk > lo:
        hi = min(hi, Nk - 1)
        total = sum(math.comb(Nk, j) for j in range(lo, hi + 1))
        if total > subset_budget:
            n4_diag["mode"] = "sampled"
        allrows = np.arange(Nk)
        for j, combos in _n4_subsets(Nk, lo, hi, subset_budget, seed):
            HJ = H[combos]  # (batch, j, Ns)
            mask = np.ones((len(combos), Nk), dtype=bool)
            mask[np.arange(len(combos))[:, None], combos] = False
            comp = np.array([allrows[m] for m in mask])
            HJc = H[comp]
            rJ = _batched_rank(HJ, rtol)
            rJc = _batched_rank(HJc, rtol)
            n4_diag["checked"] += len(combos)
            bad = (rJ == Ns) & (rJc < Ns - (Nf / r) * j)
            if np.any(bad):
                i = int(np.argmax(bad))
                n4 = False
                n4_diag["violation"] = {
                    "J": combos[i].tolist(),
                    "rank_HJc": int(rJc[i]),
                    "required": Ns - (Nf / r) * j,
                }
                break
    diag["N4"] = n4_diag

    planes = _split_planes(B, Nf)  # (Nf, Nk, r)
    per_k = _batched_rank(planes.transpose(1, 0, 2), rtol)  # (Nk,)
    n5 = int(per_k.sum()) >= Ns * r
    diag["N5"] = {"sum_rank": int(per_k.sum()), "Ns_r": Ns * r}

    return Necessary(n1, n2, n3, n4, n5, diag)


@dataclass
class Sufficient:
    """Result of the partition search for the sufficient condition."""

    applicable: bool
    passed: bool
    partition: list | None = None
    reason: str = ""
    verified_rank: int | None = None


def _C(planes: np.ndarray, J) -> np.ndarray:
    """Rows of every focal-plane block at wavenumbers ``J`` stacked."""
    return planes[:, list(J), :].reshape(-1, planes.shape[2])


def _greedy_set(planes, avail: list, size: int, rtol: float):
    """Pick ``size`` wavenumbers whose combined rows stay full rank."""
    r = planes.shape[2]
    chosen: list = []
    Q = np.zeros((r, 0), dtype=complex)
    scale = np.max(np.linalg.norm(planes, axis=2), initial=0.0)
    for _ in range(size):
        best, best_val = None, -1.0
        for m in avail:
            if m in chosen:
                continue
            rows = planes[:, m, :].T  # (r, Nf) columns = row vectors
            resid = rows - Q @ (Q.conj().T @ rows)
            s = _sv(resid)
            val = s[-1] if s.size else 0.0
            if val > best_val:
                best, best_val = m, val
        if best is None or best_val <= rtol * scale:
            return None
        chosen.append(best)
        rows = planes[:, best, :].T
        resid = rows - Q @ (Q.conj().T @ rows)
        q_new, _ = np.linalg.qr(resid)
        Q = np.hstack([Q, q_new])
    return sorted(chosen)


def _exhaustive_partition(planes, Nf: int, size: int, rtol: float, budget: int):
    Nk = planes.shape[1]
    full = {}
    counter = [0]

    def ok(J):
        key = tuple(J)
        if key not in full:
            counter[0] += 1
            if counter[0] > budget:
                raise BudgetExceeded("partition search exceeded its budget")
            full[key] = numerical_rank(_C(planes, J), rtol) == planes.shape[2]
        return full[key]

    def search(remaining, depth, min_first):
        if depth == Nf:
            return []
        for J in itertools.combinations(remaining, size):
            if J[0] < min_first:
                continue
            if not ok(J):
                continue
            rest = [m for m in remaining if m not in J]
            tail = search(rest, depth + 1, J[0] + 1)
            if tail is not None:
                return [list(J)] + tail
        return None

    return search(list(range(Nk)), 0, 0)


def check_sufficient(B_stack, Nf: int, r: int | None = None, strategy: str = "exhaustive",
                     Ns: int | None = None, rtol: float = RTOL,
                     budget: int = SUBSET_BUDGET) -> Sufficient:
    """Search for disjoint wavenumber sets ``J_1..J_Nf`` with full-rank ``C_i``.

    ``C_i`` stacks the rows of every focal-plane block at the wavenumbers in
    ``J_i`` (``|J_i| = r/Nf``). A successful partition certifies uniqueness for
    generic spectra. ``strategy`` is ``"exhaustive"`` or ``"greedy"``.
    """
    B = np.asarray(B_stack)
    if r is None:
        r = B.shape[1]
    planes = _split_planes(B, Nf)
    Nk = planes.shape[1]
    if r % Nf:
        return Sufficient(False, False, reason=f"r = {r} is not divisible by Nf = {Nf}")
    if Nk < r:
        return Sufficient(False, False, reason=f"Nk = {Nk} < r = {r}")
    if Ns is not None and Nf < Ns:
        return Sufficient(False, False, reason=f"Nf = {Nf} < Ns = {Ns}")
    size = r // Nf
    if strategy == "greedy":
        avail = list(range(Nk))
        partition = []
        for _ in range(Nf):
            J = _greedy_set(planes, avail, size, rtol)
            if J is None or numerical_rank(_C(planes, J), rtol) < r:
                return Sufficient(True, False, reason="greedy search found no partition")
            partition.append(J)
            avail = [m for m in avail if m not in J]
    elif strategy == "exhaustive":
        partition = _exhaustive_partition(planes, Nf, size, rtol, budget)
        if partition is None:
            return Sufficient(True, False, reason="no partition exists")
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    return Sufficient(True, True, partition=partition)


class KruskalRank(NamedTuple):
    rank: int
    exact: bool


def kruskal_rank(X, rtol: float = RTOL, budget: int = SUBSET_BUDGET) -> KruskalRank:
    """Largest ``k`` such that every set of ``k`` rows is linearly independent.

    When the next subset size would need more than ``budget`` rank tests the
    current value is returned as a certified lower bound (``exact=False``).
    """
    X = np.asarray(X)
    n, m = X.shape
    k = 0
    for size in range(1, min(n, m) + 1):
        if math.comb(n, size) > budget:
            return KruskalRank(k, False)
        combos = np.array(list(itertools.combinations(range(n), size)), dtype=int)
        for start in range(0, len(combos), 4096):
            ranks = _batched_rank(X[combos[start:start + 4096]], rtol)
            if np.any(ranks < size):
                return KruskalRank(k, True)
        k = size
    return KruskalRank(k, True)


def adversarial_spectra(B, h1, w, v) -> np.ndarray:
    """Second profile making ``[D1 B, D2 B]`` rank deficient.

    Returns ``h2 = (diag(h1) B w) / (B v)`` elementwise, so that
    ``diag(h2) B v = diag(h1) B w``.
    """
    B = np.asarray(B)
    den = B @ np.asarray(v)
    if np.any(den == 0):
        raise ZeroDivisionError("B @ v has a zero entry")
    return (np.asarray(h1) * (B @ np.asarray(w))) / den


@dataclass
class BlockSparse:
    theorem: bool
    brute_force: bool | None
    row_sets: list | None = None
    reason: str = ""
    failing_support: list | None = None


def _disjoint_bases(B, Nf: int, count: int, rtol: float):
    """Greedily peel ``count`` wavenumber-disjoint sets each spanning rank ``r``.

    A set is a list of wavenumber indices; its rows are those of every focal
    plane at those wavenumbers. Returns ``None`` if the greedy pass runs dry.
    """
    r = numerical_rank(B, rtol)
    if r == 0:
        return None
    planes = _split_planes(B, Nf)
    remaining = np.arange(planes.shape[1])
    sets = []
    for _ in range(count):
        if remaining.size == 0:
            return None
        rows = planes[:, remaining, :].transpose(1, 0, 2).reshape(-1, planes.shape[2])
        _, _, piv = qr(rows.T, pivoting=True, mode="economic")
        pick = np.unique(remaining[piv[:r] // Nf])
        if numerical_rank(_C(planes, pick), rtol) < r:
            return None
        sets.append(pick.tolist())
        remaining = np.setdiff1d(remaining, pick)
    return sets


def check_block_sparse(H_library, B_stack, Ns: int, rtol: float = RTOL,
                       brute_budget: int = 2_000) -> BlockSparse:
    """Audit unique recovery of a block-``Ns``-sparse density over a library.

    The theorem route passes when ``Nk > r``, ``Nf >= 2 Ns`` and ``Bbar`` has
    ``2 Ns`` sets of rows, disjoint in wavenumber, each of rank ``r``. Row sets
    that merely differ in focal plane do not count: every plane sees the same
    spectra, so rows sharing a wavenumber cannot separate species. The brute-force
    route checks that every restriction of ``Phi~`` to ``min(2 Ns, Ms)``
    library blocks has full column rank.
    """
    Hl = np.asarray(H_library)
    B = np.asarray(B_stack)
    Nk, Ms = Hl.shape
    if Ms <= Ns:
        raise ValueError("library must contain more than Ns profiles")
    if B.shape[0] % Nk:
        raise ValueError("B_stack rows must be a multiple of Nk")
    Nf = B.shape[0] // Nk
    r = numerical_rank(B, rtol)

    reason = ""
    sets = None
    if not Nk > r:
        reason = f"Nk = {Nk} <= r = {r}"
    elif Nf < 2 * Ns:
        reason = f"Nf = {Nf} < 2 Ns = {2 * Ns}"
    else:
        sets = _disjoint_bases(B, Nf, 2 * Ns, rtol)
        if sets is None:
            reason = f"could not find {2 * Ns} wavenumber-disjoint rank-{r} row sets"
    theorem = sets is not None

    K = min(2 * Ns, Ms)
    supports = list(itertools.combinations(range(Ms), K))
    brute = None
    failing = None
    if len(supports) <= brute_budget:
        brute = True
        for J in supports:
            Phi = restricted_phi(Hl[:, list(J)], B)
            if numerical_rank(Phi, rtol) < K * B.shape[1]:
                brute = False
                failing = list(J)
                break
    return BlockSparse(theorem, brute, sets, reason, failing)


def plane_alignment(table: KernelTable, q: int, tol: float = RTOL) -> dict:
    """Principal angles between each plane's passband and the stacked one.

    Quantifies how far the per-plane null spaces are from being shared.
    """
    stacked = nullspace_basis(table.stacked(q), tol)
    out = {"r_stacked": stacked.r, "ranks": [], "max_angle": 0.0}
    for f in range(table.shape[0]):
        b = nullspace_basis(table.block(f, q), tol) if np.any(table.block(f, q)) else None
        r_f = 0 if b is None else b.r
        out["ranks"].append(r_f)
        if b is not None and r_f and stacked.r:
            ang = subspace_angles(b.V, stacked.V)
            out["max_angle"] = max(out["max_angle"], float(np.max(ang)))
    return out


@dataclass
class UniquenessReport:
    """Audit outcome for one transverse-frequency block ``q``."""

    q: int
    kx: float
    r: int
    necessary: dict
    sufficient: dict
    kruskal: dict
    block_sparse: dict | None
    plane_alignment: dict
    rank_phi_tilde: int
    Ns: int

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self), default=_jsonable))

    def to_text(self) -> str:
        n = self.necessary
        lines = [
            f"block q={self.q} (kx = {self.kx:.6g} rad/um)",
            f"  passband rank r           : {self.r}",
            f"  rank(Phi~) / Ns*r         : {self.rank_phi_tilde} / {self.Ns * self.r}",
        ]
        for key in ("N1", "N2", "N3", "N4", "N5"):
            lines.append(f"  {key:<26s}: {'pass' if n[key] else 'FAIL'}  {n['diagnostics'].get(key, '')}")
        s = self.sufficient
        verdict = "n/a" if not s["applicable"] else ("pass" if s["passed"] else "FAIL")
        lines.append(f"  sufficient (partition)    : {verdict}  {s.get('partition') or s.get('reason', '')}")
        k = self.kruskal
        lines.append(f"  Kruskal rank of Bbar      : {k['rank']}{'' if k['exact'] else ' (lower bound)'}")
        if self.block_sparse is not None:
            b = self.block_sparse
            lines.append(f"  block-sparse theorem      : {'pass' if b['theorem'] else 'FAIL'} {b.get('reason', '')}")
            lines.append(f"  block-sparse brute force  : {b['brute_force']}")
        lines.append(f"  max principal angle (rad) : {self.plane_alignment['max_angle']:.3e}")
        return "\n".join(lines)


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(type(o))


def audit_block(q: int, H, table: KernelTable, library_H=None, rtol: float = RTOL,
                subset_budget: int = SUBSET_BUDGET, strategy: str = "greedy",
                kruskal_budget: int = 20_000, seed: int = 0) -> UniquenessReport:
    """Run every audit for block ``q`` and collect a :class:`UniquenessReport`."""
    H = np.asarray(H)
    Nf = table.shape[0]
    Ns = H.shape[1]
    Abar = table.stacked(q)
    basis = nullspace_basis(Abar, rtol) if np.any(Abar) else PassbandBasis(
        np.zeros((Abar.shape[1], 0), complex), 0, rtol, np.zeros(0))
    B = Abar @ basis.V
    nec = check_necessary(H, B, Nf, basis.r, subset_budget, rtol, seed)
    if basis.r:
        suf = check_sufficient(B, Nf, basis.r, strategy=strategy, Ns=Ns, rtol=rtol,
                               budget=subset_budget)
        krank = kruskal_rank(B, rtol, kruskal_budget)
        rank_pt = numerical_rank(restricted_phi(H, B), rtol)
    else:
        suf = Sufficient(False, False, reason="empty passband")
        krank = KruskalRank(0, True)
        rank_pt = 0
    if suf.passed:
        suf.verified_rank = rank_pt
    bs = None
    if library_H is not None and np.asarray(library_H).shape[1] > Ns and basis.r:
        bs = asdict(check_block_sparse(library_H, B, Ns, rtol))
    g = table.geometry
    return UniquenessReport(
        q=q,
        kx=float(g.kx[q]),
        r=basis.r,
        necessary={**{k: getattr(nec, k) for k in ("N1", "N2", "N3", "N4", "N5")},
                   "diagnostics": nec.diagnostics},
        sufficient=asdict(suf),
        kruskal=krank._asdict(),
        block_sparse=bs,
        plane_alignment=plane_alignment(table, q, rtol),
        rank_phi_tilde=rank_pt,
        Ns=Ns,
    )
