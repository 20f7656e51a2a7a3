"""End-to-end acceptance checks, one test per shipped claim.

Slow by design: the fixtures run the offline pipeline at desk scale (this
file alone takes a few minutes serial). Run with -v to get one pass/fail
line per claim.

Two claims fail honestly at desk scale and their tests report the
measured numbers: the pressure band across the sharp-contrast interface
(criterion 3) and the full regression path's order-of-magnitude error
target (criterion 7). The analysis lives in the repository notes.
"""

import dataclasses
import time
from types import SimpleNamespace

import numpy as np
import pytest

from oracles import (consolidation_coefficient, finite_difference_gradients,
                     skempton_initial_pressure, terzaghi_pressure)
from pororom import benchmarks, io, mlp, pipeline, rom
from pororom.config import PipelineConfig
from pororom.fom import (build_biot_operators, build_time_schedule,
                         cell_mass_residuals, default_consolidation_bcs,
                         run_fom)
from pororom.mesh import build_unit_square_mesh
from pororom.pod import SnapshotSet, nested_pod, normalized_eigenvalues, standard_pod
from pororom.projection import build_table
from pororom.spaces import dg1_mass

DESK = dict(mesh_nx=20, dt0=20.0, dt_mult=1.0, dt_max=20.0, t_final=1000.0,
            m_train=25, pod_n=5, pod_n_int=5, epochs=2000, hidden_layers=3,
            neurons=7, seed=0, batch_size=32, learning_rate=1e-3,
            sample_spacing="linear")
LINEAR = ("linear", "linear")


def scored_steps(mat):
    # the initial level is data, not a prediction; score the computed steps
    return mat[:, 1:]


def grid_indices(sub_mus, all_mus):
    idx = []
    for mu in sub_mus:
        d = np.max(np.abs(all_mus - mu), axis=1)
        i = int(np.argmin(d))
        assert d[i] < 1e-12, "subset point missing from the fine grid"
        idx.append(i)
    return idx


def median_seconds(fn, repeats=3):
    ts = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return float(np.median(ts))


@pytest.fixture(scope="module")
def case1(tmp_path_factory):
    """Desk-scale homogeneous benchmark: full offline run plus references."""
    cfg = PipelineConfig(case=1, **DESK)
    out = tmp_path_factory.mktemp("case1")
    result = pipeline.run_offline(cfg, out)
    mesh = pipeline.build_mesh(cfg)
    masses = pipeline.mass_matrices(mesh)
    sets = pipeline.load_snapshot_sets(cfg, mesh, result.mus,
                                       out / "snapshots")
    # one decomposition per field serves the optimality, equivalence and
    # projection-accuracy checks (modes are nested in N)
    std20 = {fid: standard_pod(s, 20) for fid, s in sets.items()}
    box = benchmarks.CASES[1].box_array
    test_mus = benchmarks.random_parameters(box, 5, seed=123, spacings=LINEAR)
    runner = pipeline.fom_runner_for(result.artifact, cfg, mesh)
    t0 = time.perf_counter()
    refs = [runner(mu) for mu in test_mus]
    fom_seconds = (time.perf_counter() - t0) / len(test_mus)
    return SimpleNamespace(cfg=cfg, out=out, result=result,
                           artifact=result.artifact, mesh=mesh, masses=masses,
                           sets=sets, std20=std20, test_mus=test_mus,
                           refs=refs, fom_seconds=fom_seconds)


@pytest.fixture(scope="module")
def case4(tmp_path_factory):
    """Desk-scale heterogeneous benchmark on the finest training grid.

    The 3x3 and 5x5 equispaced grids are subsets of the 9x9 one, so 81
    solves cover every training-set size.
    """
    cfg = PipelineConfig(case=4, **{**DESK, "m_train": 81})
    out = tmp_path_factory.mktemp("case4")
    box = benchmarks.CASES[4].box_array
    mus81 = benchmarks.sample_training_set(box, 81, spacings=LINEAR)
    mesh = pipeline.build_mesh(cfg)
    cell_values = pipeline.case_cell_values(cfg, mesh)
    pipeline.compute_snapshots(cfg, mus81, out / "snapshots",
                               cell_values=cell_values)
    sets81 = pipeline.load_snapshot_sets(cfg, mesh, mus81, out / "snapshots")
    masses = pipeline.mass_matrices(mesh)

    def subset(m):
        mus = benchmarks.sample_training_set(box, m, spacings=LINEAR)
        idx = grid_indices(mus, mus81)
        return {fid: SnapshotSet(
            field_id=fid, matrices=[s.matrices[i] for i in idx], mus=mus,
            times=s.times, inner_product=s.inner_product,
            mass_matrix=s.mass_matrix) for fid, s in sets81.items()}

    test_mus = benchmarks.random_parameters(box, 5, seed=123, spacings=LINEAR)
    refs = []
    for mu in test_mus:
        traj = pipeline.run_case_fom(cfg, mesh, mu, cell_values=cell_values)
        refs.append((mu, {"u": traj.u, "p": traj.p}))
    return SimpleNamespace(cfg=cfg, mesh=mesh, masses=masses, sets81=sets81,
                           sets25=subset(25), sets9=subset(9),
                           times=sets81["p"].times, test_mus=test_mus,
                           refs=refs)


def test_criterion_01_pressure_matches_consolidation_series():
    # uniaxial load on the unit column against the analytic dissipation
    # series, checked early, mid and late in the consolidation
    t_start = time.perf_counter()
    mesh = build_unit_square_mesh(20)
    mats = benchmarks.materials_for(1, [0.25, 1e-12], mesh)
    c_v = consolidation_coefficient(mats)
    p0 = skempton_initial_pressure(mats, 1000.0)
    sched = build_time_schedule(0.5, 1.2, 1.0, 600.0)
    traj = run_fom(mesh, mats, default_consolidation_bcs(), sched)
    M = dg1_mass(mesh)
    y = mesh.vertices[mesh.cells.ravel()][:, 1]
    errs = {}
    for t_dimless in (0.1, 0.4, 0.9):
        n = int(np.argmin(np.abs(traj.times - t_dimless / c_v)))
        p_ex = terzaghi_pressure(y, traj.times[n], p0, c_v, n_terms=80)
        d = traj.p[:, n] - p_ex
        errs[t_dimless] = float(np.sqrt(d @ (M @ d)) / np.sqrt(p_ex @ (M @ p_ex)))
    elapsed = time.perf_counter() - t_start
    assert max(errs.values()) <= 0.02, errs
    assert elapsed < 60.0


def test_criterion_02_local_mass_conservation():
    mesh = build_unit_square_mesh(20)
    mats = benchmarks.materials_for(1, [0.25, 1e-12], mesh)
    bcs = default_consolidation_bcs()
    ops = build_biot_operators(mesh, mats, bcs)
    sched = build_time_schedule(20.0, 1.0, 20.0, 1000.0)
    traj = run_fom(mesh, mats, bcs, sched, ops=ops)
    worst = 0.0
    for n in range(1, sched.n_steps + 1):
        res, scale = cell_mass_residuals(ops, float(sched.dts[n - 1]),
                                         traj.state(n), traj.state(n - 1))
        worst = max(worst, float(np.abs(res).max()) / scale)
    assert worst < 1e-10, f"worst per-cell residual ratio {worst:.3e}"


def test_criterion_03_no_oscillations_across_the_permeability_jump():
    # the exact solution obeys a maximum principle: p in [0, p0] always
    mesh = build_unit_square_mesh(20)
    mats = benchmarks.materials_for(3, [0.25, 1e-16], mesh)
    p0 = skempton_initial_pressure(mats, 1000.0)
    sched = build_time_schedule(20.0, 1.0, 20.0, 1000.0)
    traj = run_fom(mesh, mats, default_consolidation_bcs(), sched)
    lo, hi = float(traj.p.min()), float(traj.p.max())
    y = mesh.vertices[mesh.cells.ravel()][:, 1]
    i = int(np.unravel_index(traj.p.argmax(), traj.p.shape)[0])
    assert lo >= 0.0 and hi <= p0 * (1.0 + 1e-6), (
        f"pressure leaves [0, p0*(1+1e-6)]: min {lo:.3e}, "
        f"max {hi:.2f} vs p0 {p0:.2f} (peak at y={y[i]:.3f}; the "
        f"interface boundary layer is unresolved at this mesh, see notes)")


def test_criterion_04_pod_optimality_and_equivalence(case1, case4):
    for fid in ("u", "p"):
        snaps = case1.sets[fid]
        basis = case1.std20[fid]
        # (a) projecting onto the leading modes loses exactly the energy in
        # the discarded spectrum. At N=5 the u tail is ~1e-8 of the total
        # energy, below what float64 residuals can resolve tail-relative,
        # so N=1 carries the tail-relative check and N=5 is checked on the
        # total-energy scale.
        sv2 = basis.singular_values ** 2
        total = float(sv2.sum())
        stacked = snaps.stacked()
        cols = np.arange(stacked.shape[1])
        for n_keep in (1, 5):
            cut = dataclasses.replace(basis, modes=basis.modes[:, :n_keep])
            proj = rom.projection_trajectory(cut, stacked)
            err = rom.error_series(proj, stacked, cols, case1.masses[fid])
            tail = float(sv2[n_keep:].sum())
            denom = tail if n_keep == 1 else total
            assert abs(err.mse.sum() - tail) / denom < 1e-8, (fid, n_keep)

        # (b) trajectory-wise compression that keeps every time mode agrees
        # with the single-pass decomposition: energies match across the
        # leading 50, values match wherever they sit above the eigensolver
        # noise floor eps*lambda_1/(2*sigma_k)
        nst = nested_pod(snaps, snaps.n_cols, 5)
        k = min(50, len(basis.singular_values), len(nst.singular_values))
        s_std = basis.singular_values[:k]
        s_nst = nst.singular_values[:k]
        lam_gap = float(np.abs(s_std ** 2 - s_nst ** 2).max()) / s_std[0] ** 2
        assert lam_gap < 1e-10, (fid, lam_gap)
        big = s_std >= 1e-5 * s_std[0]
        sig_gap = float(np.abs(s_std[big] - s_nst[big]).max()) / s_std[0]
        assert sig_gap < 1e-10, (fid, sig_gap)

    for fid in ("u", "p"):
        # (c) heterogeneous-case spectrum collapses within 50 modes
        vals = normalized_eigenvalues(standard_pod(case4.sets25[fid], 5))
        assert len(vals) < 50 or vals[49] < 1e-12, \
            f"{fid}: eigenvalue 50 still {vals[49]:.3e}"


def test_criterion_05_error_regimes_separate(case4):
    sets = case4.sets25
    mu_train = np.array([0.25, 0.7])
    i_train = grid_indices([mu_train], sets["p"].mus)[0]
    bases = {fid: standard_pod(s, 20) for fid, s in sets.items()}

    # projection-path error falls as the basis grows
    for fid in ("u", "p"):
        ref = sets[fid].matrices[i_train]
        errs = []
        for n in (5, 10, 20):
            cut = dataclasses.replace(bases[fid], modes=bases[fid].modes[:, :n])
            proj = rom.projection_trajectory(cut, ref)
            errs.append(rom.error_series(proj, ref, case4.times,
                                         case4.masses[fid]).time_avg_mse)
        assert errs[0] > errs[1] > errs[2], (fid, errs)

    # the trained-regressor path sits orders of magnitude above it
    fields = {}
    for k, fid in enumerate(("u", "p")):
        table = build_table(sets[fid], bases[fid])
        net = mlp.init_mlp(3, 7, in_dim=3, out_dim=table.n, seed=k)
        net, _ = mlp.train_on_table(net, table, epochs=2000, seed=k)
        fields[fid] = rom.FieldRom(basis=bases[fid], net=net,
                                   in_ranges=table.in_ranges,
                                   out_ranges=table.out_ranges,
                                   in_log=table.in_log)
    case = benchmarks.CASES[4]
    artifact = rom.RomArtifact(case_id=4, param_names=case.param_names,
                               param_box=case.box_array, times=case4.times,
                               fields=fields, config={},
                               config_hash="0" * 16)
    regimes = rom.error_decomposition_study(artifact, sets, mu_train,
                                            case4.refs,
                                            mass_by_field=case4.masses)
    for fid in ("u", "p"):
        a = regimes.projection[fid].time_avg_mse
        b = regimes.ann_train[fid].time_avg_mse
        c = regimes.ann_test[fid].time_avg_mse
        assert b >= 100.0 * a, (fid, a, b)
        assert c >= 100.0 * a, (fid, a, c)


def test_criterion_06_projection_path_accuracy(case1):
    mu_train = case1.result.mus[12]          # grid center
    i_train = 12
    unseen_ref = case1.refs[0]
    for fid in ("u", "p"):
        basis = case1.std20[fid]
        for tag, ref in (("training", case1.sets[fid].matrices[i_train]),
                         ("unseen", unseen_ref[fid])):
            proj = rom.projection_trajectory(basis, ref)
            rel = rom.relative_max_error(scored_steps(proj),
                                         scored_steps(ref))
            assert rel <= 1e-5, f"{fid} at {tag} mu: relative ME {rel:.3e}"


def test_criterion_07_full_regression_path_accuracy(case1):
    lines = []
    worst = 0.0
    for mu, refs in zip(case1.test_mus, case1.refs):
        rom_u, rom_p, _ = rom.rom_trajectory(case1.artifact, mu)
        eu = rom.relative_max_error(scored_steps(rom_u),
                                    scored_steps(refs["u"]))
        ep = rom.relative_max_error(scored_steps(rom_p),
                                    scored_steps(refs["p"]))
        worst = max(worst, eu, ep)
        lines.append(f"  mu=({mu[0]:.4f}, {mu[1]:.3e}): "
                     f"u {eu:.3e}, p {ep:.3e}")
    assert worst <= 1e-2, \
        "regression path misses 1e-2 relative ME on unseen parameters " \
        "(representation floor of 5 global modes, see notes):\n" \
        + "\n".join(lines)


def test_criterion_08_timing_orderings(case1):
    # two-stage compression cost grows with the per-trajectory cut and the
    # single-pass decomposition over all columns is slowest
    rng = np.random.default_rng(0)
    mats = [rng.normal(size=(6000, 60)) for _ in range(16)]
    snaps = SnapshotSet(field_id="p", matrices=mats,
                        mus=np.arange(16.0)[:, None], times=np.arange(60.0),
                        inner_product="euclid")
    t_nested = [median_seconds(lambda ni=ni: nested_pod(snaps, ni, 5))
                for ni in (5, 10, 20)]
    t_std = median_seconds(lambda: standard_pod(snaps, 5))
    assert t_nested[0] < t_nested[1] < t_nested[2] < t_std, \
        (t_nested, t_std)

    # online queries amortize: one reconstruction sweep is far cheaper
    # than one full-order solve
    mu = case1.test_mus[0]
    t_rom = median_seconds(lambda: rom.rom_trajectory(case1.artifact, mu))
    assert case1.fom_seconds >= 5.0 * t_rom, (case1.fom_seconds, t_rom)

    # training cost rises with depth and width but not with how the basis
    # was compressed (the table shape is what matters)
    table, _ = io.read_table(case1.out / "table_p.tab")
    X, Y = table.normalized_inputs(), table.normalized_outputs()

    def train_time(hidden, neurons, epochs=200):
        net = mlp.init_mlp(hidden, neurons, in_dim=X.shape[1],
                           out_dim=Y.shape[1], seed=0)
        return median_seconds(lambda: mlp.train(net, X, Y, epochs, seed=0))

    t_depth = [train_time(h, 7) for h in (1, 3, 5)]
    assert t_depth[0] < t_depth[1] < t_depth[2], t_depth
    t_width = [train_time(3, n) for n in (7, 14, 28)]
    assert t_width[0] < t_width[1] < t_width[2], t_width

    times_by_n_int = []
    for n_int in (5, 10):
        basis = nested_pod(case1.sets["p"], n_int, 5)
        t2 = build_table(case1.sets["p"], basis)
        X2, Y2 = t2.normalized_inputs(), t2.normalized_outputs()
        net = mlp.init_mlp(3, 7, in_dim=X2.shape[1], out_dim=Y2.shape[1],
                           seed=0)
        times_by_n_int.append(
            median_seconds(lambda: mlp.train(net, X2, Y2, 300, seed=0)))
    lo, hi = sorted(times_by_n_int)
    assert hi / lo <= 1.10, times_by_n_int


def test_criterion_09_gradients_and_determinism(case1):
    rng = np.random.default_rng(5)
    X = rng.normal(size=(6, 2))
    Y = rng.normal(size=(6, 3))
    for hidden in (1, 3, 5):
        params = mlp.init_mlp(hidden, 4, in_dim=2, out_dim=3, seed=hidden)
        gw, gb = mlp.backward(params, X, Y)
        fw, fb = finite_difference_gradients(
            lambda p: mlp.loss_mse(p, X, Y), params)
        scale = max(np.abs(g).max() for g in fw)
        for g, f in zip(gw + gb, fw + fb):
            assert np.abs(g - f).max() / scale < 1e-5, hidden

    table, _ = io.read_table(case1.out / "table_p.tab")
    runs = []
    for _ in range(2):
        net = mlp.init_mlp(3, 7, in_dim=3, out_dim=table.n, seed=0)
        best, report = mlp.train_on_table(net, table, epochs=60, seed=0)
        runs.append((best, report))
    for Wa, Wb in zip(runs[0][0].weights, runs[1][0].weights):
        assert np.array_equal(Wa, Wb)
    assert np.array_equal(runs[0][1].val_loss, runs[1][1].val_loss)


def test_criterion_10_more_training_data_helps(case4):
    medians = []
    for sets in (case4.sets9, case4.sets25, case4.sets81):
        snaps = sets["p"]
        basis = nested_pod(snaps, 5, 5)
        table = build_table(snaps, basis)
        per_seed = []
        for seed in (0, 1, 2):
            net = mlp.init_mlp(3, 7, in_dim=3, out_dim=table.n, seed=seed)
            net, _ = mlp.train_on_table(net, table, epochs=2000, seed=seed)
            field = rom.FieldRom(basis=basis, net=net,
                                 in_ranges=table.in_ranges,
                                 out_ranges=table.out_ranges,
                                 in_log=table.in_log)
            mse = []
            for mu, refs in case4.refs:
                pred = np.column_stack([rom.predict_field(field, t, mu)
                                        for t in case4.times])
                mse.append(rom.error_series(pred, refs["p"], case4.times,
                                            case4.masses["p"]).time_avg_mse)
            per_seed.append(float(np.mean(mse)))
        medians.append(float(np.median(per_seed)))
    assert medians[0] >= medians[1] >= medians[2], medians
