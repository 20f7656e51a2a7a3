"""Offline pipeline settings, their file format and their hash.

Config files are flat "key = value" lines with '#' comments. The hash of
the canonical serialization is embedded in every file a pipeline stage
writes, so stages refuse to mix data produced under different settings.

Two profiles: "desk" finishes a full offline run in minutes on a laptop,
"paper" matches the reference study sizes (finer mesh, 100 training
points, 20000 epochs) and runs for hours.
"""

import hashlib
from dataclasses import dataclass, fields

_INF_MARK = "inf"


@dataclass
class PipelineConfig:
    case: int = 1
    mesh_nx: int = 20
    mesh_pattern: str = "right"
    dt0: float = 20.0
    dt_mult: float = 1.0
    dt_max: float = 20.0
    t_final: float = 1000.0
    beta: float = 10.0
    tol_fs: float = 1e-8
    max_fs_iter: int = 500
    m_train: int = 25
    sample_spacing: str = "auto"
    pod_n: int = 5
    pod_n_int: int | None = 5      # None runs standard (single-pass) POD
    pod_inner_product: str = "mass"
    epochs: int = 2000
    hidden_layers: int = 3
    neurons: int = 7
    seed: int = 0
    batch_size: int = 32
    learning_rate: float = 1e-3
    val_fraction: float = 0.2
    case4_seed: int = 0
    case4_connectivity: str = "high"

    def __post_init__(self):
        if self.case not in (1, 2, 3, 4):
            raise ValueError(f"unknown benchmark case {self.case}")
        if self.pod_inner_product not in ("mass", "euclid"):
            raise ValueError("pod_inner_product must be 'mass' or 'euclid'")
        if self.mesh_pattern not in ("right", "crossed"):
            raise ValueError("mesh_pattern must be 'right' or 'crossed'")
        if self.sample_spacing not in ("auto", "linear", "log"):
            raise ValueError("sample_spacing must be 'auto', 'linear' "
                             "or 'log'")


# config-file key -> (dataclass field, parser)
_KEYS = {
    "case": ("case", int),
    "mesh.nx": ("mesh_nx", int),
    "mesh.pattern": ("mesh_pattern", str),
    "time.dt0": ("dt0", float),
    "time.mult": ("dt_mult", float),
    "time.dt_max": ("dt_max", float),
    "time.t_final": ("t_final", float),
    "fom.beta": ("beta", float),
    "fom.tol_fs": ("tol_fs", float),
    "fom.max_iter": ("max_fs_iter", int),
    "sample.m": ("m_train", int),
    "sample.spacing": ("sample_spacing", str),
    "pod.n": ("pod_n", int),
    "pod.n_int": ("pod_n_int",
                  lambda s: None if s == _INF_MARK else int(s)),
    "pod.inner_product": ("pod_inner_product", str),
    "train.epochs": ("epochs", int),
    "train.hidden_layers": ("hidden_layers", int),
    "train.neurons": ("neurons", int),
    "train.seed": ("seed", int),
    "train.batch": ("batch_size", int),
    "train.lr": ("learning_rate", float),
    "train.val_fraction": ("val_fraction", float),
    "case4.seed": ("case4_seed", int),
    "case4.connectivity": ("case4_connectivity", str),
}

_FIELD_TO_KEY = {attr: key for key, (attr, _) in _KEYS.items()}

PROFILES = {
    "desk": {},
    "paper": {
        "mesh.nx": "30",
        "time.t_final": "4000.0",
        "sample.m": "100",
        "pod.n": "10",
        "pod.n_int": "20",
        "train.epochs": "20000",
    },
}


def _canonical(value):
    if value is None:
        return _INF_MARK
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_to_dict(cfg):
    """Canonical flat string dict, the unit of hashing and serialization."""
    out = {}
    for f in fields(cfg):
        out[_FIELD_TO_KEY[f.name]] = _canonical(getattr(cfg, f.name))
    return out


def config_from_dict(d):
    kwargs = {}
    for key, raw in d.items():
        if key not in _KEYS:
            raise ValueError(f"unknown config key {key!r}")
        attr, parse = _KEYS[key]
        kwargs[attr] = parse(raw)
    return PipelineConfig(**kwargs)


def parse_config_file(path):
    """Flat 'key = value' lines; '#' starts a comment."""
    d = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            d[key.strip()] = value.strip()
    return d


def write_config_file(path, cfg):
    d = config_to_dict(cfg)
    with open(path, "w") as f:
        for k in sorted(d):
            f.write(f"{k} = {d[k]}\n")


def make_config(profile="desk", case=None, overrides=None):
    """Profile defaults, then file overrides, then explicit case."""
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}")
    d = config_to_dict(PipelineConfig())
    d.update(PROFILES[profile])
    if overrides:
        d.update(overrides)
    if case is not None:
        d["case"] = str(case)
    return config_from_dict(d)


def config_hash(cfg):
    """First 16 hex characters of the sha256 of the canonical serialization."""
    d = config_to_dict(cfg)
    text = "".join(f"{k} = {d[k]}\n" for k in sorted(d))
    return hashlib.sha256(text.encode()).hexdigest()[:16]
