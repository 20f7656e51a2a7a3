import numpy as np
import pytest

from pororom.mesh import build_unit_square_mesh
from pororom.mlp import MlpParams
from pororom.pod import ReducedBasis, SnapshotSet, standard_pod
from pororom.rom import (FieldRom, RomArtifact, box_stats, breakeven_queries,
                         error_series, _match_training_mu, me_metric,
                         mse_metric, projection_trajectory, reconstruct,
                         reconstruct_from_coefficients, relative_max_error,
                         rom_trajectory, sensitivity_sweep)
from pororom.spaces import build_dg1_dofmap, dg1_mass

RNG = np.random.default_rng(17)


@pytest.fixture(scope="module")
def dg1():
    mesh = build_unit_square_mesh(4)
    dofmap = build_dg1_dofmap(mesh)
    return mesh, dofmap, dg1_mass(mesh, dofmap)


def test_reconstruction_is_linear_in_the_coefficients():
    W = RNG.normal(size=(10, 3))
    basis = ReducedBasis("p", W, np.ones(3), None, "euclid")
    a = RNG.normal(size=3)
    b = RNG.normal(size=3)
    lhs = reconstruct_from_coefficients(basis, 2.0 * a + b)
    rhs = 2.0 * reconstruct_from_coefficients(basis, a) \
        + reconstruct_from_coefficients(basis, b)
    assert np.abs(lhs - rhs).max() < 1e-13


def test_metrics_vanish_on_identical_fields(dg1):
    _, _, M = dg1
    x = RNG.normal(size=M.shape[0])
    assert mse_metric(x, x, M) == 0.0
    assert me_metric(x, x) == 0.0


def test_mse_of_an_orthonormal_mode_is_one(dg1):
    _, _, M = dg1
    S = RNG.normal(size=(M.shape[0], 5))
    snap = SnapshotSet("p", [S], np.zeros((1, 1)), np.arange(5.0),
                       mass_matrix=M)
    basis = standard_pod(snap, 3)
    x = RNG.normal(size=M.shape[0])
    assert mse_metric(x + basis.modes[:, 1], x, M) == pytest.approx(1.0,
                                                                    rel=1e-10)


def test_mass_weighted_mse_is_the_l2_integral(dg1):
    mesh, _, M = dg1
    # dof i of cell c sits at the c-th cell's i-th vertex, so interpolating
    # a linear function is exact and the integral is hand arithmetic
    coords = mesh.vertices[mesh.cells.ravel()]
    zero = np.zeros(M.shape[0])
    const = np.full(M.shape[0], 3.0)
    assert mse_metric(const, zero, M) == pytest.approx(9.0, rel=1e-12)
    linear = coords[:, 0]
    assert mse_metric(linear, zero, M) == pytest.approx(1.0 / 3.0, rel=1e-12)


def test_projection_error_is_the_tail_energy(dg1):
    _, _, M = dg1
    S = RNG.normal(size=(M.shape[0], 8))
    snap = SnapshotSet("p", [S], np.zeros((1, 1)), np.arange(8.0),
                       mass_matrix=M)
    basis = standard_pod(snap, 3)
    proj = projection_trajectory(basis, S)
    series = error_series(proj, S, snap.times, M)
    tail = float(np.sum(basis.singular_values[3:] ** 2))
    assert series.mse.sum() == pytest.approx(tail, rel=1e-10)
    assert series.time_avg_mse == pytest.approx(series.mse.mean())
    assert series.max_me == series.me.max()


def test_projection_beats_any_other_coefficients(dg1):
    _, _, M = dg1
    S = RNG.normal(size=(M.shape[0], 6))
    snap = SnapshotSet("p", [S], np.zeros((1, 1)), np.arange(6.0),
                       mass_matrix=M)
    basis = standard_pod(snap, 3)
    col = S[:, 2]
    best = mse_metric(projection_trajectory(basis, col[:, None])[:, 0], col, M)
    for _ in range(5):
        other = basis.modes @ RNG.normal(size=3)
        assert mse_metric(other, col, M) >= best - 1e-14


def test_box_stats_hand_example():
    values = np.array([[1.0], [2.0], [3.0], [100.0]])
    stats = box_stats([0.0], values)
    assert stats.q1[0] == pytest.approx(1.75)
    assert stats.median[0] == pytest.approx(2.5)
    assert stats.q3[0] == pytest.approx(27.25)
    assert stats.whisker_lo[0] == 1.0
    assert stats.whisker_hi[0] == 3.0
    assert stats.n_outliers[0] == 1


def test_breakeven_query_count():
    assert breakeven_queries(100.0, 1.0, 0.1) == 112
    assert breakeven_queries(100.0, 0.1, 0.1) == np.inf
    assert breakeven_queries(100.0, 0.05, 0.1) == np.inf


def test_training_parameter_lookup():
    mus = np.array([[0.1, 1e-15], [0.4, 1e-11]])
    assert _match_training_mu(mus, [0.4, 1e-11]) == 1
    with pytest.raises(ValueError, match="not a training parameter"):
        _match_training_mu(mus, [0.25, 1e-13])


def test_relative_max_error_definition():
    ref = np.array([[2.0, -1.0], [0.5, 1.0]])
    assert relative_max_error(ref + 0.5, ref) == pytest.approx(0.25)
    with pytest.raises(ValueError, match="identically zero"):
        relative_max_error(ref, np.zeros_like(ref))


def test_error_series_rejects_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        error_series(np.zeros((4, 3)), np.zeros((4, 2)), np.arange(3.0))


def identity_field_rom(n_h):
    # relu identity on [0, 1]^2 (see test_mlp); coefficients equal the
    # normalized (t, mu) pair, so the reconstruction is hand arithmetic
    net = MlpParams(weights=[np.eye(2), np.eye(2)],
                    biases=[np.full(2, 10.0), np.full(2, -10.0)],
                    activation="relu")
    modes = np.eye(n_h)[:, :2]
    basis = ReducedBasis("u", modes, np.ones(2), None, "euclid")
    ranges = np.array([[0.0, 1.0], [0.0, 1.0]])
    return FieldRom(basis=basis, net=net, in_ranges=ranges,
                    out_ranges=ranges, in_log=np.array([False, False]))


@pytest.fixture()
def toy_artifact():
    times = np.array([0.0, 0.5, 1.0])
    return RomArtifact(case_id=1, param_names=("a",),
                       param_box=np.array([[0.0, 1.0]]), times=times,
                       fields={"u": identity_field_rom(5),
                               "p": identity_field_rom(4)},
                       config={}, config_hash="0" * 16)


def exact_fields(times, mu, n_u=5, n_p=4):
    u = np.zeros((n_u, len(times)))
    p = np.zeros((n_p, len(times)))
    u[0], u[1] = times, mu
    p[0], p[1] = times, mu
    return {"u": u, "p": p}


def test_reconstruct_and_trajectory_agree(toy_artifact):
    u, p = reconstruct(toy_artifact, 0.5, [0.25])
    assert np.allclose(u[:2], [0.5, 0.25], atol=1e-12)
    assert np.all(u[2:] == 0.0)
    assert np.allclose(p[:2], [0.5, 0.25], atol=1e-12)
    cols_u, cols_p, times = rom_trajectory(toy_artifact, [0.25])
    assert np.array_equal(times, toy_artifact.times)
    assert cols_u.shape == (5, 3) and cols_p.shape == (4, 3)
    assert np.allclose(cols_u[:, 1], u, atol=1e-12)
    exact = exact_fields(times, 0.25)
    assert np.abs(cols_u - exact["u"]).max() < 1e-12
    assert np.abs(cols_p - exact["p"]).max() < 1e-12


def test_sensitivity_sweep_on_exact_model(toy_artifact):
    test_mus = np.array([[0.2], [0.8]])
    result = sensitivity_sweep(
        toy_artifact, test_mus,
        fom_runner=lambda mu: exact_fields(toy_artifact.times, mu[0]),
        fom_seconds_per_query=2.0)
    assert result.mus.shape == (2, 1)
    for fid in ("u", "p"):
        assert len(result.series[fid]) == 2
        assert result.stats[fid].median.shape == toy_artifact.times.shape
        assert result.stats[fid].median.max() < 1e-24
    assert result.rom_seconds_per_query > 0.0
    assert result.fom_seconds_per_query == 2.0
