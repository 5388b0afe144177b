import numpy as np


def crandn(rng, *shape):
    """Standard circular complex Gaussian array."""
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def rel(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    den = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / den) if den else float(np.linalg.norm(a))


def random_unitary_columns(rng, n, r):
    q, _ = np.linalg.qr(crandn(rng, n, r))
    return q


def identifiability_instance(rng, Nk, Nz, Nf, Ns, r, kind="generic"):
    """Planes ``A_f = X_f V^H`` sharing the passband ``span(V)``.

    ``kind`` selects how the instance is built: ``generic`` (Gaussian), ``dependent``
    (collinear spectra), ``repeated`` (every plane identical) or ``sparse-k``
    (half the wavenumbers blank in every plane).
    """
    V = random_unitary_columns(rng, Nz, r)
    X = crandn(rng, Nf, Nk, r)
    H = crandn(rng, Nk, Ns)
    if kind == "dependent" and Ns > 1:
        H[:, 1] = (1.5 - 0.5j) * H[:, 0]
    elif kind == "repeated":
        X[:] = X[0]
    elif kind == "sparse-k":
        X[:, Nk // 2:] = 0
    A = X @ V.conj().T  # (Nf, Nk, Nz)
    return H, A, V


def dense_phi(H, A):
    """Dense block for one q: rows ``f*Nk + m``, columns ``s*Nz + n``."""
    Nf, Nk, Nz = A.shape
    Abar = A.reshape(Nf * Nk, Nz)
    Hbar = np.tile(H, (Nf, 1))
    return (Hbar[:, :, None] * Abar[:, None, :]).reshape(Nf * Nk, -1)


def identifiability_verdicts(rng, H, A, V, rtol=1e-8, trials=3):
    """Return ``(C1, C2, C3)`` computed by three unrelated routes.

    C1: minimum-norm least squares recovers random passband densities exactly.
    C2: the dense null space has exactly the dimension of the shared one.
    C3: the restricted block has full column rank ``Ns*r``.
    """
    Nf, Nk, Nz = A.shape
    Ns = H.shape[1]
    r = V.shape[1]
    Phi = dense_phi(H, A)

    c1 = True
    for _ in range(trials):
        p = (V @ crandn(rng, r, Ns)).T.reshape(-1)
        x = np.linalg.lstsq(Phi, Phi @ p, rcond=None)[0]
        if rel(x, p) > 1e-6:
            c1 = False

    s = np.linalg.svd(Phi, compute_uv=False)
    rank = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
    c2 = (Ns * Nz - rank) == Ns * (Nz - r)

    B = A.reshape(Nf * Nk, Nz) @ V
    Pt = (np.tile(H, (Nf, 1))[:, :, None] * B[:, None, :]).reshape(Nf * Nk, -1)
    st = np.linalg.svd(Pt, compute_uv=False)
    c3 = int(np.sum(st > rtol * st[0])) == Ns * r if st.size and st[0] > 0 else False
    return c1, c2, c3


def identifiability_shape(rng, bounds=(8, 6, 3, 2, 4)):
    """Random ``(Nk, Nz, Nf, Ns, r)`` within the given upper bounds."""
    bk, bz, bf, bs, br = bounds
    r = int(rng.integers(1, br + 1))
    Nz = int(rng.integers(r, bz + 1))
    return (int(rng.integers(1, bk + 1)), Nz, int(rng.integers(1, bf + 1)),
            int(rng.integers(1, bs + 1)), r)
