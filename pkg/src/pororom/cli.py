"""Command-line entry points for the offline and online stages.

Subcommands mirror the pipeline phases so long runs can be split up and
resumed; `offline` chains everything. Parallel full-order solves come
from POROROM_WORKERS or stay serial with --serial.
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import benchmarks, io, mlp, pipeline, pod
from .config import (config_hash, make_config, parse_config_file,
                     write_config_file)
from .projection import build_table

log = logging.getLogger(__name__)


def _parse_mu(text):
    try:
        return np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats, "
                                         f"got {text!r}")


def _add_config_args(p):
    p.add_argument("--case", type=int, choices=(1, 2, 3, 4))
    p.add_argument("--profile", choices=("desk", "paper"), default="desk")
    p.add_argument("--config", type=Path,
                   help="flat key = value file overriding the profile")
    p.add_argument("--seed", type=int, help="training seed override")


def _config_from_args(args):
    overrides = parse_config_file(args.config) if args.config else {}
    if args.seed is not None:
        overrides["train.seed"] = str(args.seed)
    return make_config(profile=args.profile, case=args.case,
                       overrides=overrides)


def _cmd_sample(args):
    cfg = _config_from_args(args)
    case = benchmarks.CASES[cfg.case]
    spacings = benchmarks.axis_spacings(case.box_array, cfg.sample_spacing)
    mus = benchmarks.sample_training_set(case.box_array, cfg.m_train,
                                         spacings=spacings)
    args.out.mkdir(parents=True, exist_ok=True)
    pipeline.write_parameters_csv(args.out / "training_parameters.csv",
                                  case.param_names, mus)
    print(f"wrote {mus.shape[0]} training points for case {cfg.case}")
    return 0


def _cmd_fom(args):
    cfg = _config_from_args(args)
    mesh = pipeline.build_mesh(cfg)
    cell_values = pipeline.case_cell_values(cfg, mesh)
    traj = pipeline.run_case_fom(cfg, mesh, args.mu, cell_values=cell_values)
    args.out.mkdir(parents=True, exist_ok=True)
    h = config_hash(cfg)
    io.write_snapshot(args.out / "u_000.snap", "u", args.mu, traj.times,
                      traj.u, h)
    io.write_snapshot(args.out / "p_000.snap", "p", args.mu, traj.times,
                      traj.p, h)
    print(f"solved {traj.times.shape[0] - 1} steps, "
          f"{int(np.sum(traj.iterations))} inner iterations")
    return 0


def _cmd_pod(args):
    cfg = _config_from_args(args)
    mesh = pipeline.build_mesh(cfg)
    mus = np.loadtxt(args.snapshots / "training_parameters.csv", delimiter=",",
                     skiprows=1, ndmin=2)[:, 1:]
    sets = pipeline.load_snapshot_sets(cfg, mesh, mus,
                                       args.snapshots / "snapshots")
    h = config_hash(cfg)
    for fid, snaps in sets.items():
        basis = pipeline.compress(cfg, snaps)
        io.write_basis(args.snapshots / f"basis_{fid}.pod", basis, h)
        lam = pod.normalized_eigenvalues(basis)
        print(f"{fid}: kept {basis.n} modes, eigenvalue decay to "
              f"{lam[min(basis.n, lam.shape[0]) - 1]:.3e}")
    return 0


def _project_tables(cfg, args_dir):
    mesh = pipeline.build_mesh(cfg)
    mus = np.loadtxt(args_dir / "training_parameters.csv", delimiter=",",
                     skiprows=1, ndmin=2)[:, 1:]
    sets = pipeline.load_snapshot_sets(cfg, mesh, mus, args_dir / "snapshots")
    h = config_hash(cfg)
    case = benchmarks.CASES[cfg.case]
    spacings = benchmarks.axis_spacings(case.box_array, cfg.sample_spacing)
    in_log = pipeline.input_log_flags(spacings)
    tables = {}
    for fid in ("u", "p"):
        basis, h_got = io.read_basis(args_dir / f"basis_{fid}.pod")
        if h_got != h:
            raise ValueError(f"basis_{fid}.pod was built under a different "
                             f"config")
        basis.mass_matrix = sets[fid].mass_matrix
        basis.inner_product = sets[fid].inner_product
        tables[fid] = build_table(sets[fid], basis, in_log=in_log)
        io.write_table(args_dir / f"table_{fid}.tab", tables[fid], h)
    return tables, mus


def _cmd_project(args):
    cfg = _config_from_args(args)
    tables, _ = _project_tables(cfg, args.dir)
    for fid, table in tables.items():
        print(f"{fid}: {table.n_rows} rows, {table.n} coefficients")
    return 0


def _cmd_train(args):
    cfg = _config_from_args(args)
    h = config_hash(cfg)
    tables, mus = _project_tables(cfg, args.dir)
    for k, fid in enumerate(("u", "p")):
        table = tables[fid]
        net = mlp.init_mlp(cfg.hidden_layers, cfg.neurons,
                           in_dim=1 + mus.shape[1], out_dim=table.n,
                           seed=cfg.seed + k)
        net, report = mlp.train_on_table(net, table, cfg.epochs,
                                         seed=cfg.seed + k,
                                         batch_size=cfg.batch_size,
                                         learning_rate=cfg.learning_rate,
                                         val_fraction=cfg.val_fraction)
        io.write_net(args.dir / f"net_{fid}.ann", fid, net, table.in_ranges,
                     table.out_ranges, table.in_log, h)
        print(f"{fid}: best val loss {report.best_val_loss:.3e} "
              f"at epoch {report.best_epoch}")
    return 0


def _cmd_offline(args):
    cfg = _config_from_args(args)
    workers = pipeline.workers_from_env(serial=args.serial)
    result = pipeline.run_offline(cfg, args.out, workers=workers)
    write_config_file(args.out / "config.txt", cfg)
    for phase, seconds in result.timings.items():
        print(f"{phase}: {seconds:.1f}s")
    print(f"artifact: {result.artifact_path}")
    return 0


def _cmd_predict(args):
    artifact = io.read_artifact(args.artifact)
    pipeline.evaluate_queries(artifact, [args.mu], args.out,
                              with_reference=False)
    print(f"predictions in {args.out}")
    return 0


def _cmd_evaluate(args):
    artifact = io.read_artifact(args.artifact)
    if args.config:
        cfg = make_config(profile=args.profile,
                          overrides=parse_config_file(args.config))
        if config_hash(cfg) != artifact.config_hash:
            print("config hash mismatch: the artifact was not built from "
                  "this configuration", file=sys.stderr)
            return 2
    summary = pipeline.evaluate_queries(artifact, [args.mu], args.out,
                                        with_reference=True)
    _, *_, avg_u, avg_p = summary[0]
    print(f"time-averaged mse: u {avg_u:.3e}, p {avg_p:.3e}")
    return 0


def _cmd_sweep(args):
    artifact = io.read_artifact(args.artifact)
    offline_seconds = None
    timings_path = Path(args.artifact).parent / "timings.csv"
    if timings_path.exists():
        offline_seconds = pipeline.read_timings(timings_path)["total"]
    result = pipeline.run_sweep(artifact, args.num, args.seed, args.out,
                                offline_seconds=offline_seconds)
    print(f"rom {result.rom_seconds_per_query:.3f}s/query, "
          f"fom {result.fom_seconds_per_query:.3f}s/query")
    return 0


def main(argv=None):
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    ap = argparse.ArgumentParser(prog="pororom",
                                 description="reduced-order models for "
                                             "linear poroelasticity")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="write the training parameter grid")
    _add_config_args(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("fom", help="one full-order trajectory")
    _add_config_args(p)
    p.add_argument("--mu", type=_parse_mu, required=True,
                   help="comma-separated parameter values")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_fom)

    p = sub.add_parser("pod", help="compress existing snapshots")
    _add_config_args(p)
    p.add_argument("--snapshots", type=Path, required=True,
                   help="offline output directory")
    p.set_defaults(func=_cmd_pod)

    p = sub.add_parser("project", help="project snapshots onto the bases")
    _add_config_args(p)
    p.add_argument("--dir", type=Path, required=True,
                   help="offline output directory")
    p.set_defaults(func=_cmd_project)

    p = sub.add_parser("train", help="project and train the nets")
    _add_config_args(p)
    p.add_argument("--dir", type=Path, required=True,
                   help="offline output directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("offline", help="full offline pipeline")
    _add_config_args(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--serial", action="store_true",
                   help="ignore POROROM_WORKERS")
    p.set_defaults(func=_cmd_offline)

    p = sub.add_parser("predict", help="reconstruct one query, no reference")
    p.add_argument("--artifact", type=Path, required=True)
    p.add_argument("--mu", type=_parse_mu, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="compare one query against the FOM")
    p.add_argument("--artifact", type=Path, required=True)
    p.add_argument("--mu", type=_parse_mu, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--profile", choices=("desk", "paper"), default="desk")
    p.add_argument("--config", type=Path,
                   help="refuse to run if this config does not hash to the "
                        "artifact's")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="error distribution over random queries")
    p.add_argument("--artifact", type=Path, required=True)
    p.add_argument("--num", type=int, default=16)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_sweep)

    args = ap.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
