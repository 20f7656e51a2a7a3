"""Projection of snapshots onto a reduced basis and the regression table.

The basis is orthonormal in its inner product only up to roundoff, so the
coefficients come from the projected normal equations G theta = W' M f with
G computed explicitly rather than assumed identity.

The table stores raw (t, mu, theta) rows together with per-column affine
ranges; the regressor trains on the [0, 1]-normalized view.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

log = logging.getLogger(__name__)


def gram_matrix(basis):
    G = basis.modes.T @ basis.weight(basis.modes)
    return 0.5 * (G + G.T)


def project(basis, f, cho=None):
    """Coefficients of the best approximation of f in span(basis).

    f may be a single dof vector (N_h,) or a matrix of columns (N_h, k).
    """
    if cho is None:
        cho = cholesky_gram(basis)
    rhs = basis.modes.T @ basis.weight(f)
    return scipy.linalg.cho_solve(cho, rhs)


def cholesky_gram(basis):
    G = gram_matrix(basis)
    try:
        return scipy.linalg.cho_factor(G)
    except scipy.linalg.LinAlgError as exc:
        raise ValueError("basis Gram matrix is not positive definite; "
                         "the modes are degenerate") from exc


def affine_normalize(x, lo, hi):
    """Map [lo, hi] to [0, 1]; a collapsed range maps everything to 0.5."""
    x = np.asarray(x, dtype=float)
    if hi == lo:
        return np.full_like(x, 0.5)
    return (x - lo) / (hi - lo)


def transform_inputs(X, in_log):
    """Replace log-flagged input columns by their decade value.

    Parameters sampled logarithmically (multi-decade permeabilities)
    collapse onto one end of an affine [0, 1] map; regressing on
    log10 of such a column spreads the training points evenly instead.
    """
    X = np.array(X, dtype=float)
    for j, flag in enumerate(in_log):
        if not flag:
            continue
        if np.any(X[:, j] <= 0.0):
            raise ValueError(f"input column {j} is log-scaled but has "
                             "non-positive entries")
        X[:, j] = np.log10(X[:, j])
    return X


def affine_denormalize(y, lo, hi):
    y = np.asarray(y, dtype=float)
    if hi == lo:
        return np.full_like(y, lo)
    return lo + y * (hi - lo)


@dataclass
class CoefficientTable:
    """Rows (t, mu, theta) for every trajectory and time level, i-major."""

    field_id: str
    t_col: np.ndarray        # (rows,)
    mu_cols: np.ndarray      # (rows, P)
    theta: np.ndarray        # (rows, N)
    mus: np.ndarray          # (M, P) distinct training points, i-th block order
    times: np.ndarray        # (n_cols,)
    in_ranges: np.ndarray    # (1 + P, 2) columns (lo, hi), t first
    out_ranges: np.ndarray   # (N, 2)
    in_log: np.ndarray       # (1 + P,) bool, log10 applied before normalizing

    @property
    def n_rows(self):
        return self.t_col.shape[0]

    @property
    def n(self):
        return self.theta.shape[1]

    @property
    def p(self):
        return self.mu_cols.shape[1]

    def inputs(self):
        return np.column_stack([self.t_col, self.mu_cols])

    def normalized_inputs(self):
        X = transform_inputs(self.inputs(), self.in_log)
        out = np.empty_like(X)
        for j in range(X.shape[1]):
            out[:, j] = affine_normalize(X[:, j], *self.in_ranges[j])
        return out

    def normalized_outputs(self):
        out = np.empty_like(self.theta)
        for j in range(self.theta.shape[1]):
            out[:, j] = affine_normalize(self.theta[:, j], *self.out_ranges[j])
        return out

    def denormalize_outputs(self, Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        out = np.empty_like(Y)
        for j in range(Y.shape[1]):
            out[:, j] = affine_denormalize(Y[:, j], *self.out_ranges[j])
        return out


def _column_ranges(cols, what):
    ranges = np.column_stack([cols.min(axis=0), cols.max(axis=0)])
    for j, (lo, hi) in enumerate(ranges):
        if lo == hi:
            log.warning("%s column %d is constant (%g); it will normalize "
                        "to 0.5", what, j, lo)
    return ranges


def build_table(snapshots, basis, in_log=None):
    """Project every snapshot column and assemble the regression table.

    in_log flags the (t, mu...) input columns whose log10 feeds the
    regressor; None keeps every input on its raw scale.
    """
    cho = cholesky_gram(basis)
    blocks = [project(basis, S, cho=cho).T for S in snapshots.matrices]
    theta = np.vstack(blocks)                      # (M * n_cols, N)
    t_col = np.tile(snapshots.times, snapshots.m)
    mu_cols = np.repeat(snapshots.mus, snapshots.n_cols, axis=0)
    n_in = 1 + mu_cols.shape[1]
    if in_log is None:
        in_log = np.zeros(n_in, dtype=bool)
    else:
        in_log = np.asarray(in_log, dtype=bool)
        if in_log.shape != (n_in,):
            raise ValueError(f"in_log needs one flag per input column "
                             f"({n_in}), got shape {in_log.shape}")
    X = transform_inputs(np.column_stack([t_col, mu_cols]), in_log)
    in_ranges = _column_ranges(X, "input")
    out_ranges = _column_ranges(theta, "coefficient")
    return CoefficientTable(field_id=snapshots.field_id, t_col=t_col,
                            mu_cols=mu_cols, theta=theta,
                            mus=snapshots.mus.copy(),
                            times=snapshots.times.copy(),
                            in_ranges=in_ranges, out_ranges=out_ranges,
                            in_log=in_log)
