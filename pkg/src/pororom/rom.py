"""Online reduced-order model: reconstruction, error metrics, studies.

A RomArtifact bundles, per field, the reduced basis and the trained
coefficient regressor together with the normalization ranges. Online
queries are a forward pass plus one matrix-vector product per field.

Errors against full-order references use the mass-weighted mean squared
error MSE = d^T M d and the maximum dof error ME = max |d|.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import mlp
from .projection import cholesky_gram, project

log = logging.getLogger(__name__)


@dataclass
class FieldRom:
    basis: object                 # ReducedBasis
    net: object                   # MlpParams
    in_ranges: np.ndarray         # (1 + P, 2)
    out_ranges: np.ndarray        # (N, 2)
    in_log: np.ndarray            # (1 + P,) bool input transform flags


@dataclass
class RomArtifact:
    case_id: int
    param_names: tuple
    param_box: np.ndarray         # (P, 2)
    times: np.ndarray             # training time grid
    fields: dict                  # {"u": FieldRom, "p": FieldRom}
    config: dict                  # flat key -> string, the offline settings
    config_hash: str

    @property
    def n_params(self):
        return self.param_box.shape[0]


def reconstruct_from_coefficients(basis, theta):
    return basis.modes @ np.asarray(theta, dtype=float)


def predict_field(field_rom, t, mu):
    theta = mlp.predict_coefficients(field_rom.net, field_rom.in_ranges,
                                     field_rom.out_ranges, t, mu,
                                     in_log=field_rom.in_log)
    return reconstruct_from_coefficients(field_rom.basis, theta)


def reconstruct(artifact, t, mu):
    """Displacement and pressure dof vectors at one (t, mu) query."""
    u = predict_field(artifact.fields["u"], t, mu)
    p = predict_field(artifact.fields["p"], t, mu)
    return u, p


def rom_trajectory(artifact, mu, times=None):
    """Dof matrices over a time grid (training grid by default)."""
    if times is None:
        times = artifact.times
    cols_u = [predict_field(artifact.fields["u"], t, mu) for t in times]
    cols_p = [predict_field(artifact.fields["p"], t, mu) for t in times]
    return np.column_stack(cols_u), np.column_stack(cols_p), np.asarray(times)


def mse_metric(approx, ref, mass_matrix=None):
    d = np.asarray(approx, dtype=float) - np.asarray(ref, dtype=float)
    if mass_matrix is None:
        return float(d @ d)
    return float(d @ (mass_matrix @ d))


def me_metric(approx, ref):
    return float(np.max(np.abs(np.asarray(approx) - np.asarray(ref))))


@dataclass
class ErrorSeries:
    times: np.ndarray
    mse: np.ndarray
    me: np.ndarray

    @property
    def time_avg_mse(self):
        return float(np.mean(self.mse))

    @property
    def max_me(self):
        return float(np.max(self.me))


def error_series(approx, ref, times, mass_matrix=None):
    """Per-time-level MSE and ME between two dof matrices."""
    if approx.shape != ref.shape:
        raise ValueError("matrices must agree in shape")
    n = approx.shape[1]
    mse = np.empty(n)
    me = np.empty(n)
    for k in range(n):
        mse[k] = mse_metric(approx[:, k], ref[:, k], mass_matrix)
        me[k] = me_metric(approx[:, k], ref[:, k])
    return ErrorSeries(times=np.asarray(times, dtype=float), mse=mse, me=me)


def relative_max_error(approx, ref):
    """max |d| over all dofs and steps, scaled by max |ref|."""
    scale = float(np.max(np.abs(ref)))
    if scale == 0.0:
        raise ValueError("reference is identically zero")
    return float(np.max(np.abs(approx - ref))) / scale


def projection_trajectory(basis, ref):
    """Best-approximation of every reference column in span(basis)."""
    cho = cholesky_gram(basis)
    theta = project(basis, ref, cho=cho)
    return basis.modes @ theta


@dataclass
class RegimeErrors:
    """Error split of the two approximation stages.

    projection: best-possible coefficients at a training parameter
    ann_train:  regressed coefficients at the same training parameter
    ann_test:   regressed coefficients at parameters unseen in training
    """
    projection: dict   # field -> ErrorSeries
    ann_train: dict
    ann_test: dict


def _match_training_mu(mus, mu):
    d = np.max(np.abs(mus - np.asarray(mu)[None, :]), axis=1)
    i = int(np.argmin(d))
    scale = max(1.0, float(np.max(np.abs(mus))))
    if d[i] > 1e-12 * scale:
        raise ValueError(f"{mu} is not a training parameter")
    return i


def error_decomposition_study(artifact, snapshots_by_field, mu_train, test_refs,
                              mass_by_field=None):
    """Three-regime errors for one training parameter and unseen test points.

    snapshots_by_field: {"u": SnapshotSet, "p": SnapshotSet} training data.
    test_refs: list of (mu, {"u": dof matrix, "p": dof matrix}) references.
    """
    mass_by_field = mass_by_field or {}
    some = next(iter(snapshots_by_field.values()))
    i_train = _match_training_mu(some.mus, mu_train)
    times = some.times

    proj, ann_tr, ann_te = {}, {}, {}
    for fid, snaps in snapshots_by_field.items():
        ref = snaps.matrices[i_train]
        M = mass_by_field.get(fid)
        basis = artifact.fields[fid].basis
        proj[fid] = error_series(projection_trajectory(basis, ref), ref,
                                 times, M)
        rom_u, rom_p, _ = rom_trajectory(artifact, snaps.mus[i_train], times)
        rom = rom_u if fid == "u" else rom_p
        ann_tr[fid] = error_series(rom, ref, times, M)

    test_series = {fid: [] for fid in snapshots_by_field}
    for mu, refs in test_refs:
        rom_u, rom_p, _ = rom_trajectory(artifact, mu, times)
        rom = {"u": rom_u, "p": rom_p}
        for fid in snapshots_by_field:
            M = mass_by_field.get(fid)
            test_series[fid].append(error_series(rom[fid], refs[fid], times, M))
    for fid, series in test_series.items():
        # worst unseen parameter, the honest headline number
        ann_te[fid] = max(series, key=lambda s: s.time_avg_mse)
    return RegimeErrors(projection=proj, ann_train=ann_tr, ann_test=ann_te)


@dataclass
class BoxStats:
    """Quartile summary with 1.5 IQR whiskers, one entry per time level."""
    times: np.ndarray
    q1: np.ndarray
    median: np.ndarray
    q3: np.ndarray
    whisker_lo: np.ndarray
    whisker_hi: np.ndarray
    n_outliers: np.ndarray


def box_stats(times, values):
    """values has one row per sample and one column per time level."""
    q1 = np.percentile(values, 25, axis=0)
    q2 = np.percentile(values, 50, axis=0)
    q3 = np.percentile(values, 75, axis=0)
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    inside = (values >= lo_fence[None, :]) & (values <= hi_fence[None, :])
    whisker_lo = np.where(inside, values, np.inf).min(axis=0)
    whisker_hi = np.where(inside, values, -np.inf).max(axis=0)
    n_out = (~inside).sum(axis=0)
    return BoxStats(times=np.asarray(times, dtype=float), q1=q1, median=q2,
                    q3=q3, whisker_lo=whisker_lo, whisker_hi=whisker_hi,
                    n_outliers=n_out)


@dataclass
class SweepResult:
    mus: np.ndarray
    stats: dict                # field -> BoxStats over per-step MSE
    rom_seconds_per_query: float
    fom_seconds_per_query: float | None
    series: dict = field(default_factory=dict)   # field -> list[ErrorSeries]


def sensitivity_sweep(artifact, test_mus, fom_runner, mass_by_field=None,
                      fom_seconds_per_query=None):
    """Error distribution over a test set, plus online timing.

    fom_runner(mu) must return {"u": dof matrix, "p": dof matrix} on the
    training time grid.
    """
    mass_by_field = mass_by_field or {}
    test_mus = np.atleast_2d(np.asarray(test_mus, dtype=float))
    series = {"u": [], "p": []}
    rom_t = 0.0
    fom_t = 0.0
    for mu in test_mus:
        t0 = time.perf_counter()
        rom_u, rom_p, times = rom_trajectory(artifact, mu)
        rom_t += time.perf_counter() - t0
        t0 = time.perf_counter()
        refs = fom_runner(mu)
        fom_t += time.perf_counter() - t0
        for fid, rom in (("u", rom_u), ("p", rom_p)):
            series[fid].append(error_series(rom, refs[fid], times,
                                            mass_by_field.get(fid)))
    stats = {fid: box_stats(artifact.times,
                            np.vstack([s.mse for s in lst]))
             for fid, lst in series.items()}
    if fom_seconds_per_query is None:
        fom_seconds_per_query = fom_t / len(test_mus)
    return SweepResult(mus=test_mus, stats=stats,
                       rom_seconds_per_query=rom_t / len(test_mus),
                       fom_seconds_per_query=fom_seconds_per_query,
                       series=series)


def breakeven_queries(offline_seconds, fom_seconds_per_query,
                      rom_seconds_per_query):
    """Queries after which offline cost plus ROM beats repeated FOM runs."""
    gain = fom_seconds_per_query - rom_seconds_per_query
    if gain <= 0.0:
        return np.inf
    return int(np.ceil(offline_seconds / gain))
