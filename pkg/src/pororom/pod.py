"""Proper orthogonal decomposition of snapshot sets.

Two routes: standard POD runs one decomposition over all trajectories
stacked side by side; nested POD first compresses each trajectory in time
to N_int modes (scaled by their singular values) and then compresses the
stacked result over the parameter axis. With N_int equal to the column
count per trajectory the two agree.

Snapshot columns vastly outnumber... no, the reverse: dof counts vastly
outnumber columns, so the decomposition goes through the eigenvalue
problem of the small Gram matrix S^T M S instead of a direct SVD.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

log = logging.getLogger(__name__)

RANK_RTOL = 1e-14   # singular values below sigma_1 * RANK_RTOL count as zero


@dataclass
class SnapshotSet:
    """Per-trajectory dof matrices for one field, plus the inner product."""

    field_id: str                  # "u" or "p"
    matrices: list                 # M arrays of shape (N_h, n_cols)
    mus: np.ndarray                # (M, P)
    times: np.ndarray              # (n_cols,)
    inner_product: str = "mass"    # "mass" or "euclid"
    mass_matrix: object = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.matrices) < 1:
            raise ValueError("need at least one trajectory")
        n_h = self.matrices[0].shape[0]
        n_cols = self.matrices[0].shape[1]
        for s in self.matrices:
            if s.shape != (n_h, n_cols):
                raise ValueError("trajectories must share N_h and the time grid")
            if not np.all(np.isfinite(s)):
                raise ValueError("snapshot columns must be finite")
        self.mus = np.atleast_2d(np.asarray(self.mus, dtype=float))
        if self.mus.shape[0] != len(self.matrices):
            raise ValueError("one parameter vector per trajectory")
        if self.inner_product == "mass" and self.mass_matrix is None:
            raise ValueError("mass inner product requested without a mass matrix")
        if self.inner_product not in ("mass", "euclid"):
            raise ValueError(f"unknown inner product {self.inner_product!r}")

    @property
    def n_h(self):
        return self.matrices[0].shape[0]

    @property
    def n_cols(self):
        return self.matrices[0].shape[1]

    @property
    def m(self):
        return len(self.matrices)

    def stacked(self):
        return np.hstack(self.matrices)

    def weight(self, X):
        if self.inner_product == "euclid":
            return X
        return self.mass_matrix @ X


@dataclass
class ReducedBasis:
    field_id: str
    modes: np.ndarray              # (N_h, N), orthonormal in the inner product
    singular_values: np.ndarray    # full spectrum down to numerical rank
    n_int: int | None              # None marks standard POD
    inner_product: str
    mass_matrix: object = field(default=None, repr=False)

    @property
    def n(self):
        return self.modes.shape[1]

    def weight(self, X):
        if self.inner_product == "euclid":
            return X
        if self.mass_matrix is None:
            raise ValueError("basis declares a mass inner product but carries "
                             "no mass matrix")
        return self.mass_matrix @ X


def _gram_eig_pod(S, weight, N, what):
    """Left singular data of S in the given inner product via the Gram matrix."""
    G = S.T @ weight(S)
    G = 0.5 * (G + G.T)
    lam, Z = scipy.linalg.eigh(G)
    lam = lam[::-1]
    Z = Z[:, ::-1]
    lam = np.clip(lam, 0.0, None)
    sigma = np.sqrt(lam)
    rank = int(np.sum(sigma > sigma[0] * RANK_RTOL)) if sigma[0] > 0.0 else 0
    if rank == 0:
        raise ValueError("snapshot matrix is numerically zero")
    if N > rank:
        log.warning("%s: requested %d modes but numerical rank is %d; truncating",
                    what, N, rank)
        N = rank
    W = S @ (Z[:, :N] / sigma[:N])
    # Gram route loses orthonormality for trailing modes with small sigma;
    # one Cholesky pass in the same inner product restores it without
    # leaving the span.
    L = np.linalg.cholesky(W.T @ weight(W))
    W = scipy.linalg.solve_triangular(L, W.T, lower=True).T
    return W, sigma[:rank]


def standard_pod(snapshots, N):
    """First N modes of all snapshots compressed in a single pass."""
    if N < 1:
        raise ValueError("need at least one mode")
    W, sigma = _gram_eig_pod(snapshots.stacked(), snapshots.weight, N,
                             f"standard POD ({snapshots.field_id})")
    return ReducedBasis(field_id=snapshots.field_id, modes=W,
                        singular_values=sigma, n_int=None,
                        inner_product=snapshots.inner_product,
                        mass_matrix=snapshots.mass_matrix)


def nested_pod(snapshots, n_int, N):
    """Temporal compression to n_int modes per trajectory, then standard POD
    of the stacked scaled modes."""
    if not 1 <= n_int <= snapshots.n_cols:
        raise ValueError(f"n_int must lie in [1, {snapshots.n_cols}]")
    if not 1 <= N <= n_int * snapshots.m:
        raise ValueError(f"N must lie in [1, {n_int * snapshots.m}]")
    compressed = []
    for S in snapshots.matrices:
        G = S.T @ snapshots.weight(S)
        G = 0.5 * (G + G.T)
        _, Z = scipy.linalg.eigh(G)
        Z = Z[:, ::-1]
        # S @ z_k is already the k-th mode scaled by its singular value
        compressed.append(S @ Z[:, :n_int])
    stacked = np.hstack(compressed)
    W, sigma = _gram_eig_pod(stacked, snapshots.weight, N,
                             f"nested POD ({snapshots.field_id}, N_int={n_int})")
    return ReducedBasis(field_id=snapshots.field_id, modes=W,
                        singular_values=sigma, n_int=n_int,
                        inner_product=snapshots.inner_product,
                        mass_matrix=snapshots.mass_matrix)


def normalized_eigenvalues(basis):
    """sigma_k^2 / sigma_1^2, the decay curve used to pick basis sizes."""
    s = basis.singular_values
    return (s / s[0]) ** 2
