"""Offline training pipeline and online evaluation drivers.

The offline run samples the training grid, computes one full-order
trajectory per point (resumable: existing snapshot files with the right
config hash are reused), compresses with POD, projects, trains the two
coefficient nets and bundles everything into a .rom artifact next to a
phase-timing table.

Full-order solves fan out over processes when workers > 1; everything
downstream is cheap and stays serial.
"""

import csv
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import benchmarks, io, mlp, pod, rom
from .config import config_from_dict, config_hash, config_to_dict
from .fom import build_time_schedule, default_consolidation_bcs, run_fom
from .mesh import build_unit_square_mesh
from .materials import write_cell_field
from .projection import build_table
from .spaces import cg2_vector_mass, dg1_mass

log = logging.getLogger(__name__)


def build_mesh(cfg):
    return build_unit_square_mesh(cfg.mesh_nx, pattern=cfg.mesh_pattern)


def build_schedule(cfg):
    return build_time_schedule(cfg.dt0, cfg.dt_mult, cfg.dt_max, cfg.t_final)


def case_cell_values(cfg, mesh):
    """The frozen heterogeneous field for case 4, None otherwise."""
    if cfg.case != 4:
        return None
    return benchmarks.heterogeneous_values(mesh, seed=cfg.case4_seed,
                                           connectivity=cfg.case4_connectivity)


def run_case_fom(cfg, mesh, mu, cell_values=None):
    materials = benchmarks.materials_for(cfg.case, mu, mesh,
                                         cell_values=cell_values)
    return run_fom(mesh, materials, default_consolidation_bcs(),
                   build_schedule(cfg), beta=cfg.beta, tol_fs=cfg.tol_fs,
                   max_iter=cfg.max_fs_iter)


def _snapshot_paths(snap_dir, i):
    return (Path(snap_dir) / f"u_{i:03d}.snap",
            Path(snap_dir) / f"p_{i:03d}.snap")


def _have_snapshot(path, mu, h):
    if not path.exists():
        return False
    try:
        _, mu_got, _, _, h_got = io.read_snapshot(path)
    except ValueError:
        return False
    return h_got == h and mu_got.shape == np.shape(mu) and np.allclose(
        mu_got, mu, rtol=0.0, atol=0.0)


def _fom_task(cfg, i, mu, snap_dir, cell_values, h):
    t0 = time.perf_counter()
    mesh = build_mesh(cfg)
    traj = run_case_fom(cfg, mesh, mu, cell_values=cell_values)
    path_u, path_p = _snapshot_paths(snap_dir, i)
    io.write_snapshot(path_u, "u", mu, traj.times, traj.u, h)
    io.write_snapshot(path_p, "p", mu, traj.times, traj.p, h)
    return i, time.perf_counter() - t0, int(np.sum(traj.iterations))


def compute_snapshots(cfg, mus, snap_dir, workers=1, cell_values=None):
    """Full-order trajectories for every training point, reusing files."""
    snap_dir = Path(snap_dir)
    snap_dir.mkdir(parents=True, exist_ok=True)
    h = config_hash(cfg)
    todo = []
    for i, mu in enumerate(mus):
        path_u, path_p = _snapshot_paths(snap_dir, i)
        if _have_snapshot(path_u, mu, h) and _have_snapshot(path_p, mu, h):
            log.info("snapshot %d already on disk, skipping", i)
            continue
        todo.append((i, mu))
    if todo and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_fom_task, cfg, i, mu, snap_dir,
                                   cell_values, h) for i, mu in todo]
            for fut in futures:
                i, seconds, iters = fut.result()
                log.info("fom %d done in %.1fs (%d inner iterations)",
                         i, seconds, iters)
    else:
        for i, mu in todo:
            _, seconds, iters = _fom_task(cfg, i, mu, snap_dir, cell_values, h)
            log.info("fom %d done in %.1fs (%d inner iterations)",
                     i, seconds, iters)


def mass_matrices(mesh):
    return {"u": cg2_vector_mass(mesh), "p": dg1_mass(mesh)}


def input_log_flags(spacings):
    """Regressor input flags for (t, mu...): log-sampled axes train on log10."""
    return np.array([False] + [s == "log" for s in spacings])


def load_snapshot_sets(cfg, mesh, mus, snap_dir):
    """Snapshot files back into per-field SnapshotSet objects."""
    h = config_hash(cfg)
    masses = mass_matrices(mesh)
    sets = {}
    times = None
    for fid in ("u", "p"):
        mats = []
        for i, mu in enumerate(mus):
            path = Path(snap_dir) / f"{fid}_{i:03d}.snap"
            fid_got, mu_got, t_got, data, h_got = io.read_snapshot(path)
            if fid_got != fid or h_got != h:
                raise ValueError(f"{path}: wrong field or config hash")
            if not np.array_equal(mu_got, np.asarray(mu, dtype=float)):
                raise ValueError(f"{path}: parameter mismatch")
            mats.append(data)
            times = t_got
        mass = masses[fid] if cfg.pod_inner_product == "mass" else None
        sets[fid] = pod.SnapshotSet(field_id=fid, matrices=mats,
                                    mus=np.asarray(mus, dtype=float),
                                    times=times,
                                    inner_product=cfg.pod_inner_product,
                                    mass_matrix=mass)
    return sets


def compress(cfg, snapshots):
    if cfg.pod_n_int is None:
        return pod.standard_pod(snapshots, cfg.pod_n)
    return pod.nested_pod(snapshots, cfg.pod_n_int, cfg.pod_n)


@dataclass
class OfflineResult:
    artifact_path: Path
    artifact: object
    timings: dict
    mus: np.ndarray
    out_dir: Path


def write_timings(path, timings):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["phase", "seconds"])
        for k, v in timings.items():
            w.writerow([k, f"{v:.6f}"])


def read_timings(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return {k: float(v) for k, v in rows[1:]}


def write_parameters_csv(path, names, mus):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["i", *names])
        for i, mu in enumerate(mus):
            w.writerow([i, *(repr(float(x)) for x in mu)])


def run_offline(cfg, out_dir, workers=1):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    h = config_hash(cfg)
    case = benchmarks.CASES[cfg.case]
    spacings = benchmarks.axis_spacings(case.box_array, cfg.sample_spacing)
    mus = benchmarks.sample_training_set(case.box_array, cfg.m_train,
                                         spacings=spacings)
    write_parameters_csv(out_dir / "training_parameters.csv",
                         case.param_names, mus)

    mesh = build_mesh(cfg)
    cell_values = case_cell_values(cfg, mesh)
    if cell_values is not None:
        write_cell_field(out_dir / "permeability.txt", cell_values)

    t_start = time.perf_counter()
    compute_snapshots(cfg, mus, out_dir / "snapshots", workers=workers,
                      cell_values=cell_values)
    t_fom = time.perf_counter()

    sets = load_snapshot_sets(cfg, mesh, mus, out_dir / "snapshots")
    bases = {fid: compress(cfg, s) for fid, s in sets.items()}
    for fid, basis in bases.items():
        io.write_basis(out_dir / f"basis_{fid}.pod", basis, h)
    t_pod = time.perf_counter()

    in_log = input_log_flags(spacings)
    fields = {}
    for k, fid in enumerate(("u", "p")):
        table = build_table(sets[fid], bases[fid], in_log=in_log)
        io.write_table(out_dir / f"table_{fid}.tab", table, h)
        net = mlp.init_mlp(cfg.hidden_layers, cfg.neurons,
                           in_dim=1 + mus.shape[1], out_dim=table.n,
                           seed=cfg.seed + k)
        net, report = mlp.train_on_table(net, table, cfg.epochs,
                                         seed=cfg.seed + k,
                                         batch_size=cfg.batch_size,
                                         learning_rate=cfg.learning_rate,
                                         val_fraction=cfg.val_fraction)
        log.info("net %s: best val loss %.3e at epoch %d", fid,
                 report.best_val_loss, report.best_epoch)
        fields[fid] = rom.FieldRom(basis=bases[fid], net=net,
                                   in_ranges=table.in_ranges,
                                   out_ranges=table.out_ranges,
                                   in_log=table.in_log)
    t_ann = time.perf_counter()

    artifact = rom.RomArtifact(case_id=cfg.case, param_names=case.param_names,
                               param_box=case.box_array,
                               times=sets["p"].times, fields=fields,
                               config=config_to_dict(cfg), config_hash=h)
    artifact_path = out_dir / "model.rom"
    io.write_artifact(artifact_path, artifact)

    timings = {
        "train_fom_snapshots": t_fom - t_start,
        "perform_pod": t_pod - t_fom,
        "train_ann": t_ann - t_pod,
        "total": t_ann - t_start,
    }
    write_timings(out_dir / "timings.csv", timings)
    return OfflineResult(artifact_path=artifact_path, artifact=artifact,
                         timings=timings, mus=mus, out_dir=out_dir)


def check_artifact(artifact):
    """Refuse artifacts whose embedded config does not match their hash."""
    cfg = config_from_dict(artifact.config)
    if config_hash(cfg) != artifact.config_hash:
        raise ValueError("artifact config hash mismatch; the bundle was "
                         "built under different settings than it claims")
    return cfg


def fom_runner_for(artifact, cfg=None, mesh=None):
    """FOM reference solver reconstructed from the artifact's settings."""
    if cfg is None:
        cfg = check_artifact(artifact)
    if mesh is None:
        mesh = build_mesh(cfg)
    cell_values = case_cell_values(cfg, mesh)

    def runner(mu):
        traj = run_case_fom(cfg, mesh, mu, cell_values=cell_values)
        return {"u": traj.u, "p": traj.p}

    return runner


def evaluate_queries(artifact, mus, out_dir, with_reference=True):
    """Reconstruct each query; against the FOM when references are on.

    Writes one error CSV per query plus a summary, or prediction snapshot
    files when running without references.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = check_artifact(artifact)
    mesh = build_mesh(cfg)
    masses = mass_matrices(mesh)
    runner = fom_runner_for(artifact, cfg, mesh) if with_reference else None

    summary = []
    for i, mu in enumerate(np.atleast_2d(np.asarray(mus, dtype=float))):
        t0 = time.perf_counter()
        rom_u, rom_p, times = rom.rom_trajectory(artifact, mu)
        rom_seconds = time.perf_counter() - t0
        if not with_reference:
            io.write_snapshot(out_dir / f"pred_u_{i:03d}.snap", "u", mu,
                              times, rom_u, artifact.config_hash)
            io.write_snapshot(out_dir / f"pred_p_{i:03d}.snap", "p", mu,
                              times, rom_p, artifact.config_hash)
            summary.append([i, *mu, rom_seconds])
            continue
        t0 = time.perf_counter()
        refs = runner(mu)
        fom_seconds = time.perf_counter() - t0
        series = {fid: rom.error_series(pred, refs[fid], times, masses[fid])
                  for fid, pred in (("u", rom_u), ("p", rom_p))}
        with open(out_dir / f"query_{i:03d}.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "mse_u", "me_u", "mse_p", "me_p"])
            for k, t in enumerate(times):
                w.writerow([t, series["u"].mse[k], series["u"].me[k],
                            series["p"].mse[k], series["p"].me[k]])
        summary.append([i, *mu, rom_seconds, fom_seconds,
                        series["u"].time_avg_mse, series["p"].time_avg_mse])

    with open(out_dir / "summary.csv", "w", newline="") as f:
        w = csv.writer(f)
        names = list(artifact.param_names)
        if with_reference:
            w.writerow(["i", *names, "rom_seconds", "fom_seconds",
                        "avg_mse_u", "avg_mse_p"])
        else:
            w.writerow(["i", *names, "rom_seconds"])
        w.writerows(summary)
    return summary


def run_sweep(artifact, n_queries, seed, out_dir, offline_seconds=None):
    """Random-query error distribution plus the speedup bookkeeping."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = check_artifact(artifact)
    mesh = build_mesh(cfg)
    case = benchmarks.CASES[artifact.case_id]
    spacings = benchmarks.axis_spacings(case.box_array, cfg.sample_spacing)
    test_mus = benchmarks.random_parameters(case.box_array, n_queries, seed,
                                            spacings=spacings)
    result = rom.sensitivity_sweep(artifact, test_mus,
                                   fom_runner_for(artifact, cfg, mesh),
                                   mass_by_field=mass_matrices(mesh))
    for fid, stats in result.stats.items():
        with open(out_dir / f"sweep_{fid}.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "q1", "median", "q3", "whisker_lo",
                        "whisker_hi", "n_outliers"])
            for k in range(stats.times.shape[0]):
                w.writerow([stats.times[k], stats.q1[k], stats.median[k],
                            stats.q3[k], stats.whisker_lo[k],
                            stats.whisker_hi[k], stats.n_outliers[k]])
    timing = {
        "rom_seconds_per_query": result.rom_seconds_per_query,
        "fom_seconds_per_query": result.fom_seconds_per_query,
    }
    if offline_seconds is not None:
        timing["offline_seconds"] = offline_seconds
        timing["breakeven_queries"] = rom.breakeven_queries(
            offline_seconds, result.fom_seconds_per_query,
            result.rom_seconds_per_query)
    write_timings(out_dir / "sweep_timing.csv", timing)
    return result


def workers_from_env(serial=False):
    if serial:
        return 1
    raw = os.environ.get("POROROM_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"POROROM_WORKERS={raw!r} is not an integer")
    return max(1, n)
