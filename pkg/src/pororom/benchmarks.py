"""The four consolidation benchmark cases and parameter sampling.

All cases load the unit square from the top with 1 kPa, drain through the
top edge and roll on the other three sides. The two sweep parameters per
case span

    1: Poisson ratio and isotropic permeability
    2: Poisson ratio and an anisotropic permeability family
    3: Poisson ratio and the lower-layer permeability under a fixed
       more-permeable upper half
    4: Poisson ratio and the Biot coefficient over one frozen
       heterogeneous permeability field

Training points sit on a tensor grid. By default an axis spanning at
least two decades is sampled logarithmically; the spacing mode is
config-exposed because equispaced sampling keeps the narrow-range cases
comparable with published consolidation studies.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .materials import (MaterialConfig, PermeabilityField, anisotropic_tensor,
                        lognormal_cell_field, two_layer_field)

BULK_MODULUS = 1e6          # Pa
SOLID_BULK_MODULUS = np.inf
POROSITY = 0.3
FLUID_COMPRESSIBILITY = 1e-9    # 1/Pa
FLUID_VISCOSITY = 1e-3          # Pa s

HETERO_MEAN = 1.77e-12      # m^2, case-4 field statistics
HETERO_VARIANCE = 5.53e-24


@dataclass(frozen=True)
class BenchmarkCase:
    case_id: int
    param_names: tuple
    box: tuple                  # ((lo, hi), ...) per parameter
    description: str

    @property
    def box_array(self):
        return np.asarray(self.box, dtype=float)


CASES = {
    1: BenchmarkCase(1, ("poisson", "k_xx"),
                     ((0.1, 0.4), (1e-15, 1e-11)),
                     "homogeneous isotropic permeability"),
    2: BenchmarkCase(2, ("poisson", "k_xx"),
                     ((0.1, 0.4), (1e-15, 1e-11)),
                     "homogeneous anisotropic permeability"),
    3: BenchmarkCase(3, ("poisson", "k_xx_lower"),
                     ((0.1, 0.4), (1e-16, 1e-15)),
                     "two layers, fixed permeable upper half"),
    4: BenchmarkCase(4, ("poisson", "biot_alpha"),
                     ((0.1, 0.4), (0.4, 1.0)),
                     "frozen heterogeneous permeability, varying alpha"),
}


def validate_mu(case, mu):
    mu = np.asarray(mu, dtype=float).ravel()
    box = case.box_array
    if mu.shape[0] != box.shape[0]:
        raise ValueError(f"case {case.case_id} takes {box.shape[0]} "
                         f"parameters, got {mu.shape[0]}")
    return mu


def heterogeneous_values(mesh, seed=0, connectivity="high"):
    """The frozen case-4 cellwise permeability (isotropic, m^2)."""
    return lognormal_cell_field(mesh, HETERO_MEAN, HETERO_VARIANCE,
                                seed=seed, zinn_harvey=connectivity)


def materials_for(case_id, mu, mesh, cell_values=None):
    case = CASES[case_id]
    mu = validate_mu(case, mu)
    common = dict(bulk_modulus=BULK_MODULUS, poisson=mu[0],
                  solid_bulk_modulus=SOLID_BULK_MODULUS, porosity=POROSITY,
                  fluid_compressibility=FLUID_COMPRESSIBILITY,
                  fluid_viscosity=FLUID_VISCOSITY)
    if case_id == 1:
        perm = PermeabilityField.isotropic(mesh.n_cells, mu[1])
    elif case_id == 2:
        perm = PermeabilityField.uniform(mesh.n_cells, anisotropic_tensor(mu[1]))
    elif case_id == 3:
        perm = two_layer_field(mesh, k_xx_lower=mu[1])
    else:
        if cell_values is None:
            raise ValueError("case 4 needs the frozen cell permeability "
                             "values; build them with heterogeneous_values")
        perm = PermeabilityField.from_cell_values(cell_values)
        return MaterialConfig(permeability=perm, alpha_override=mu[1], **common)
    return MaterialConfig(permeability=perm, **common)


def axis_spacings(box, mode="auto"):
    """Per-axis 'linear' or 'log'.

    mode 'auto' picks 'log' for a positive axis spanning at least two
    decades, 'linear' forces equispaced sampling everywhere, 'log'
    forces log spacing on every axis (all axes must be positive).
    """
    box = np.asarray(box, dtype=float)
    if mode not in ("auto", "linear", "log"):
        raise ValueError(f"unknown spacing mode {mode!r}")
    out = []
    for lo, hi in box:
        if mode == "linear":
            out.append("linear")
        elif mode == "log":
            if lo <= 0.0:
                raise ValueError("log spacing needs a positive axis, "
                                 f"got [{lo}, {hi}]")
            out.append("log")
        elif lo > 0.0 and hi / lo >= 100.0:
            out.append("log")
        else:
            out.append("linear")
    return tuple(out)


def sample_training_set(box, m, spacings=None):
    """Tensor grid of m points over the box, axis 0 varying slowest."""
    box = np.asarray(box, dtype=float)
    p = box.shape[0]
    if spacings is None:
        spacings = axis_spacings(box)
    per_axis = round(m ** (1.0 / p))
    if per_axis ** p != m or per_axis < 2:
        raise ValueError(f"m={m} is not a tensor-grid size for {p} "
                         f"parameters (need k^{p} with k >= 2)")
    axes = []
    for (lo, hi), spacing in zip(box, spacings):
        if spacing == "log":
            axes.append(np.geomspace(lo, hi, per_axis))
        else:
            axes.append(np.linspace(lo, hi, per_axis))
    return np.array(list(itertools.product(*axes)))


def random_parameters(box, n, seed, spacings=None):
    """Uniform test points in the box; log axes sample uniformly in log."""
    box = np.asarray(box, dtype=float)
    if spacings is None:
        spacings = axis_spacings(box)
    rng = np.random.default_rng(seed)
    cols = []
    for (lo, hi), spacing in zip(box, spacings):
        if spacing == "log":
            cols.append(np.exp(rng.uniform(np.log(lo), np.log(hi), size=n)))
        else:
            cols.append(rng.uniform(lo, hi, size=n))
    return np.column_stack(cols)
