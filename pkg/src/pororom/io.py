"""Binary file formats for snapshots, bases, tables, nets and the bundle.

Everything is little-endian with an 8-byte magic, a one-byte field id and
the 16-hex-character hash of the offline configuration, so a later stage
can refuse inputs produced under different settings. Dof matrices are
stored column-major because columns (time levels) are the unit of access.

The .rom artifact is a zip of the per-field basis and net blobs plus a
small text meta block; entry timestamps are pinned so byte-identical
inputs give byte-identical bundles.
"""

import io as _io
import struct
import zipfile

import numpy as np

from .mlp import MlpParams
from .pod import ReducedBasis
from .projection import CoefficientTable
from .rom import FieldRom, RomArtifact

MAGIC_SNAPSHOT = b"PRSNAP01"
MAGIC_BASIS = b"PRBASE01"
MAGIC_TABLE = b"PRTABL01"
MAGIC_NET = b"PRANNW01"

_NO_NINT = 2**64 - 1            # n_int sentinel for standard POD
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _check_hash(config_hash):
    if len(config_hash) != 16 or any(c not in "0123456789abcdef"
                                     for c in config_hash):
        raise ValueError("config hash must be 16 lowercase hex characters")
    return config_hash.encode()


def _check_magic(got, want, path):
    if got != want:
        raise ValueError(f"{path}: bad magic {got!r}, expected {want!r}")


def _read(f, n):
    b = f.read(n)
    if len(b) != n:
        raise ValueError("truncated file")
    return b


def _read_f64(f, count):
    return np.frombuffer(_read(f, 8 * count), dtype="<f8").copy()


# -- snapshots --------------------------------------------------------------

def snapshot_bytes(field_id, mu, times, data, config_hash):
    mu = np.asarray(mu, dtype=float).ravel()
    times = np.asarray(times, dtype=float)
    data = np.asarray(data, dtype=float)
    buf = _io.BytesIO()
    buf.write(MAGIC_SNAPSHOT)
    buf.write(field_id.encode())
    buf.write(_check_hash(config_hash))
    buf.write(struct.pack("<QQI", data.shape[0], data.shape[1], mu.shape[0]))
    buf.write(mu.astype("<f8").tobytes())
    buf.write(times.astype("<f8").tobytes())
    buf.write(np.asfortranarray(data, dtype="<f8").tobytes(order="F"))
    return buf.getvalue()


def write_snapshot(path, field_id, mu, times, data, config_hash):
    with open(path, "wb") as f:
        f.write(snapshot_bytes(field_id, mu, times, data, config_hash))


def read_snapshot(path):
    """Returns (field_id, mu, times, data, config_hash)."""
    with open(path, "rb") as f:
        _check_magic(_read(f, 8), MAGIC_SNAPSHOT, path)
        fid = _read(f, 1).decode()
        h = _read(f, 16).decode()
        n_h, n_cols, p = struct.unpack("<QQI", _read(f, 20))
        mu = _read_f64(f, p)
        times = _read_f64(f, n_cols)
        data = np.frombuffer(_read(f, 8 * n_h * n_cols),
                             dtype="<f8").reshape((n_h, n_cols), order="F")
    return fid, mu, times, data.copy(), h


# -- reduced bases ----------------------------------------------------------

_IP_CODE = {"mass": b"m", "euclid": b"e"}
_IP_NAME = {v: k for k, v in _IP_CODE.items()}


def basis_bytes(basis, config_hash):
    buf = _io.BytesIO()
    buf.write(MAGIC_BASIS)
    buf.write(basis.field_id.encode())
    buf.write(_check_hash(config_hash))
    buf.write(_IP_CODE[basis.inner_product])
    n_int = _NO_NINT if basis.n_int is None else basis.n_int
    r = basis.singular_values.shape[0]
    buf.write(struct.pack("<QQQQ", basis.modes.shape[0], basis.n, n_int, r))
    buf.write(basis.singular_values.astype("<f8").tobytes())
    buf.write(np.asfortranarray(basis.modes, dtype="<f8").tobytes(order="F"))
    return buf.getvalue()


def write_basis(path, basis, config_hash):
    with open(path, "wb") as f:
        f.write(basis_bytes(basis, config_hash))


def _basis_from_stream(f, path):
    _check_magic(_read(f, 8), MAGIC_BASIS, path)
    fid = _read(f, 1).decode()
    h = _read(f, 16).decode()
    ip = _IP_NAME[_read(f, 1)]
    n_h, n, n_int, r = struct.unpack("<QQQQ", _read(f, 32))
    sigma = _read_f64(f, r)
    modes = np.frombuffer(_read(f, 8 * n_h * n),
                          dtype="<f8").reshape((n_h, n), order="F").copy()
    basis = ReducedBasis(field_id=fid, modes=modes, singular_values=sigma,
                         n_int=None if n_int == _NO_NINT else int(n_int),
                         inner_product=ip)
    return basis, h


def read_basis(path):
    """Returns (ReducedBasis, config_hash); the mass matrix is not stored."""
    with open(path, "rb") as f:
        return _basis_from_stream(f, path)


# -- coefficient tables -----------------------------------------------------

def table_bytes(table, config_hash):
    buf = _io.BytesIO()
    buf.write(MAGIC_TABLE)
    buf.write(table.field_id.encode())
    buf.write(_check_hash(config_hash))
    m = table.mus.shape[0]
    n_cols = table.times.shape[0]
    buf.write(struct.pack("<QQII", m, n_cols, table.p, table.n))
    buf.write(np.asarray(table.in_log, dtype="<u1").tobytes())
    buf.write(table.mus.astype("<f8").tobytes())
    buf.write(table.times.astype("<f8").tobytes())
    buf.write(table.in_ranges.astype("<f8").tobytes())
    buf.write(table.out_ranges.astype("<f8").tobytes())
    buf.write(table.t_col.astype("<f8").tobytes())
    buf.write(table.mu_cols.astype("<f8").tobytes())
    buf.write(table.theta.astype("<f8").tobytes())
    return buf.getvalue()


def write_table(path, table, config_hash):
    with open(path, "wb") as f:
        f.write(table_bytes(table, config_hash))


def read_table(path):
    with open(path, "rb") as f:
        _check_magic(_read(f, 8), MAGIC_TABLE, path)
        fid = _read(f, 1).decode()
        h = _read(f, 16).decode()
        m, n_cols, p, n = struct.unpack("<QQII", _read(f, 24))
        rows = m * n_cols
        in_log = np.frombuffer(_read(f, 1 + p), dtype="<u1").astype(bool)
        mus = _read_f64(f, m * p).reshape(m, p)
        times = _read_f64(f, n_cols)
        in_ranges = _read_f64(f, 2 * (1 + p)).reshape(1 + p, 2)
        out_ranges = _read_f64(f, 2 * n).reshape(n, 2)
        t_col = _read_f64(f, rows)
        mu_cols = _read_f64(f, rows * p).reshape(rows, p)
        theta = _read_f64(f, rows * n).reshape(rows, n)
    table = CoefficientTable(field_id=fid, t_col=t_col, mu_cols=mu_cols,
                             theta=theta, mus=mus, times=times,
                             in_ranges=in_ranges, out_ranges=out_ranges,
                             in_log=in_log)
    return table, h


# -- trained nets -----------------------------------------------------------

_ACT_CODE = {"tanh": b"t", "relu": b"r"}
_ACT_NAME = {v: k for k, v in _ACT_CODE.items()}


def net_bytes(field_id, params, in_ranges, out_ranges, in_log, config_hash):
    sizes = params.layer_sizes
    buf = _io.BytesIO()
    buf.write(MAGIC_NET)
    buf.write(field_id.encode())
    buf.write(_check_hash(config_hash))
    buf.write(_ACT_CODE[params.activation])
    buf.write(struct.pack("<I", len(params.weights)))
    buf.write(struct.pack(f"<{len(sizes)}Q", *sizes))
    buf.write(np.asarray(in_log, dtype="<u1").tobytes())
    buf.write(np.asarray(in_ranges, dtype="<f8").tobytes())
    buf.write(np.asarray(out_ranges, dtype="<f8").tobytes())
    for W, b in zip(params.weights, params.biases):
        buf.write(W.astype("<f8").tobytes())
        buf.write(b.astype("<f8").tobytes())
    return buf.getvalue()


def write_net(path, field_id, params, in_ranges, out_ranges, in_log,
              config_hash):
    with open(path, "wb") as f:
        f.write(net_bytes(field_id, params, in_ranges, out_ranges, in_log,
                          config_hash))


def _net_from_stream(f, path):
    _check_magic(_read(f, 8), MAGIC_NET, path)
    fid = _read(f, 1).decode()
    h = _read(f, 16).decode()
    act = _ACT_NAME[_read(f, 1)]
    (n_layers,) = struct.unpack("<I", _read(f, 4))
    sizes = struct.unpack(f"<{n_layers + 1}Q", _read(f, 8 * (n_layers + 1)))
    in_log = np.frombuffer(_read(f, sizes[0]), dtype="<u1").astype(bool)
    in_ranges = _read_f64(f, 2 * sizes[0]).reshape(sizes[0], 2)
    out_ranges = _read_f64(f, 2 * sizes[-1]).reshape(sizes[-1], 2)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(_read_f64(f, fan_out * fan_in).reshape(fan_out, fan_in))
        biases.append(_read_f64(f, fan_out))
    params = MlpParams(weights=weights, biases=biases, activation=act)
    return fid, params, in_ranges, out_ranges, in_log, h


def read_net(path):
    """Returns (field_id, MlpParams, in_ranges, out_ranges, in_log,
    config_hash)."""
    with open(path, "rb") as f:
        return _net_from_stream(f, path)


# -- rom bundles ------------------------------------------------------------

def write_artifact(path, artifact):
    meta = {
        "case_id": str(artifact.case_id),
        "config_hash": artifact.config_hash,
        "param_names": ",".join(artifact.param_names),
    }
    for k, v in artifact.config.items():
        meta[f"config.{k}"] = str(v)
    meta_text = "".join(f"{k} = {meta[k]}\n" for k in sorted(meta))
    entries = [
        ("meta.txt", meta_text.encode()),
        ("box.f64", artifact.param_box.astype("<f8").tobytes()),
        ("times.f64", artifact.times.astype("<f8").tobytes()),
    ]
    for fid, fr in sorted(artifact.fields.items()):
        entries.append((f"basis_{fid}.pod",
                        basis_bytes(fr.basis, artifact.config_hash)))
        entries.append((f"net_{fid}.ann",
                        net_bytes(fid, fr.net, fr.in_ranges, fr.out_ranges,
                                  fr.in_log, artifact.config_hash)))
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as z:
        for name, blob in entries:
            z.writestr(zipfile.ZipInfo(name, date_time=_ZIP_DATE), blob)


def read_artifact(path):
    with zipfile.ZipFile(path, "r") as z:
        meta = {}
        for line in z.read("meta.txt").decode().splitlines():
            k, _, v = line.partition(" = ")
            meta[k] = v
        box = np.frombuffer(z.read("box.f64"), dtype="<f8").reshape(-1, 2).copy()
        times = np.frombuffer(z.read("times.f64"), dtype="<f8").copy()
        config_hash = meta["config_hash"]
        config = {k[len("config."):]: v for k, v in meta.items()
                  if k.startswith("config.")}
        fields = {}
        for fid in ("u", "p"):
            basis, h_b = _basis_from_stream(
                _io.BytesIO(z.read(f"basis_{fid}.pod")), path)
            fid2, params, in_r, out_r, in_log, h_n = _net_from_stream(
                _io.BytesIO(z.read(f"net_{fid}.ann")), path)
            if h_b != config_hash or h_n != config_hash or fid2 != fid:
                raise ValueError(f"{path}: inconsistent bundle entries")
            fields[fid] = FieldRom(basis=basis, net=params, in_ranges=in_r,
                                   out_ranges=out_r, in_log=in_log)
    return RomArtifact(case_id=int(meta["case_id"]),
                       param_names=tuple(meta["param_names"].split(",")),
                       param_box=box, times=times, fields=fields,
                       config=config, config_hash=config_hash)
