"""Poroelastic material data and permeability fields.

Bulk quantities follow the usual linear relations: Lame parameters from
(K, nu), Biot coefficient alpha = 1 - K/K_s, inverse Biot modulus
1/M = phi c_f + (alpha - phi)/K_s, conductivity kappa = k / mu_f. A solid
grain modulus of math.inf is the supported way to state an incompressible
grain: alpha becomes exactly 1 and the grain storage term exactly 0.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

log = logging.getLogger(__name__)


def lame_from_bulk_poisson(K, nu):
    """(lambda, mu) from bulk modulus and Poisson ratio."""
    if K <= 0.0:
        raise ValueError("bulk modulus must be positive")
    if not 0.0 < nu < 0.5:
        raise ValueError("Poisson ratio must lie in (0, 0.5)")
    lam = 3.0 * K * nu / (1.0 + nu)
    mu = 3.0 * K * (1.0 - 2.0 * nu) / (2.0 * (1.0 + nu))
    return lam, mu


def biot_coefficient(K, K_s):
    """alpha = 1 - K/K_s; K_s may be math.inf."""
    if not 0.0 < K <= K_s:
        raise ValueError("need 0 < K <= K_s")
    return 1.0 - K / K_s


def biot_modulus_inverse(phi, c_f, alpha, K_s):
    """1/M = phi c_f + (alpha - phi)/K_s; the grain term vanishes for K_s=inf."""
    if not 0.0 < phi < 1.0:
        raise ValueError("porosity must lie in (0, 1)")
    if c_f < 0.0 or K_s <= 0.0:
        raise ValueError("c_f must be nonnegative and K_s positive")
    if alpha < phi:
        raise ValueError("alpha < phi gives a negative grain storage term")
    if math.isinf(K_s):
        return phi * c_f
    return phi * c_f + (alpha - phi) / K_s


def conductivity(k, mu_f):
    """Hydraulic conductivity tensor kappa = k / mu_f."""
    if mu_f <= 0.0:
        raise ValueError("fluid viscosity must be positive")
    return np.asarray(k, dtype=float) / mu_f


def _check_spd_2x2(tensors, what):
    t = np.asarray(tensors, dtype=float)
    if not np.allclose(t[..., 0, 1], t[..., 1, 0], rtol=0.0, atol=1e-30 + 1e-12 * np.abs(t).max()):
        raise ValueError(f"{what} must be symmetric")
    tr = t[..., 0, 0] + t[..., 1, 1]
    det = t[..., 0, 0] * t[..., 1, 1] - t[..., 0, 1] * t[..., 1, 0]
    if np.any(tr <= 0.0) or np.any(det <= 0.0):
        raise ValueError(f"{what} must be symmetric positive definite")


@dataclass
class PermeabilityField:
    """Cellwise 2x2 permeability tensors in m^2."""

    tensors: np.ndarray    # (nc, 2, 2)

    def __post_init__(self):
        self.tensors = np.asarray(self.tensors, dtype=float)
        if self.tensors.ndim != 3 or self.tensors.shape[1:] != (2, 2):
            raise ValueError("tensors must have shape (nc, 2, 2)")
        _check_spd_2x2(self.tensors, "permeability")

    @classmethod
    def isotropic(cls, n_cells, k_xx):
        t = np.zeros((n_cells, 2, 2))
        t[:, 0, 0] = k_xx
        t[:, 1, 1] = k_xx
        return cls(t)

    @classmethod
    def uniform(cls, n_cells, tensor):
        return cls(np.broadcast_to(np.asarray(tensor, dtype=float),
                                   (n_cells, 2, 2)).copy())

    @classmethod
    def from_cell_values(cls, k_xx_values):
        k = np.asarray(k_xx_values, dtype=float)
        t = np.zeros((k.shape[0], 2, 2))
        t[:, 0, 0] = k
        t[:, 1, 1] = k
        return cls(t)


def anisotropic_tensor(k_xx):
    """Tensor with k_yy = k_xy = k_yx = 0.1 k_xx."""
    return np.array([[k_xx, 0.1 * k_xx], [0.1 * k_xx, 0.1 * k_xx]])


def two_layer_field(mesh, k_xx_lower, k_upper=1e-12):
    """Isotropic k_upper above y=0.5 and isotropic k_xx_lower below."""
    from . import mesh as _mesh
    t = np.zeros((mesh.n_cells, 2, 2))
    lower = mesh.subdomain == _mesh.LOWER
    for d in range(2):
        t[lower, d, d] = k_xx_lower
        t[~lower, d, d] = k_upper
    return PermeabilityField(t)


def write_cell_field(path, values):
    """Text format: one line per cell, 'cell_index k_xx'."""
    with open(path, "w") as f:
        for i, v in enumerate(np.asarray(values, dtype=float)):
            f.write(f"{i} {float(v)!r}\n")


def read_cell_field(path, n_cells):
    vals = np.full(n_cells, np.nan)
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            idx, v = line.split()
            i = int(idx)
            if not 0 <= i < n_cells:
                raise ValueError(f"cell index {i} out of range for {n_cells} cells")
            vals[i] = float(v)
    if np.any(np.isnan(vals)):
        raise ValueError("cell field file does not cover every cell")
    if np.any(vals <= 0.0):
        raise ValueError("cell permeabilities must be positive")
    return vals


def lognormal_cell_field(mesh, mean, variance, corr_length=0.1, seed=0,
                         zinn_harvey=None):
    """Log-normal k_xx field on cell centroids with exponential covariance.

    mean/variance refer to k itself, not log k. zinn_harvey may be None,
    "low" or "high": the rank-preserving transform of the underlying
    Gaussian field that connects either the low-k or the high-k zones.
    """
    if mean <= 0.0 or variance < 0.0:
        raise ValueError("mean must be positive and variance nonnegative")
    c = mesh.cell_centroids
    d = np.linalg.norm(c[:, None, :] - c[None, :, :], axis=2)
    cov = np.exp(-d / corr_length)
    cov[np.diag_indices_from(cov)] += 1e-10
    chol = np.linalg.cholesky(cov)
    rng = np.random.default_rng(seed)
    g = chol @ rng.standard_normal(mesh.n_cells)
    g = (g - g.mean()) / g.std()
    if zinn_harvey is not None:
        # |g| has cdf 2*Phi-1; mapping back through Phi^-1 is again standard
        # normal but with connected extreme zones
        u = np.clip(2.0 * ndtr(np.abs(g)) - 1.0, 1e-15, 1.0 - 1e-15)
        g = ndtri(u)
        if zinn_harvey == "high":
            g = -g
        elif zinn_harvey != "low":
            raise ValueError("zinn_harvey must be None, 'low' or 'high'")
        g = (g - g.mean()) / g.std()
    sigma2 = math.log(1.0 + variance / mean ** 2)
    mu_ln = math.log(mean) - 0.5 * sigma2
    return np.exp(mu_ln + math.sqrt(sigma2) * g)


@dataclass
class MaterialConfig:
    """Homogeneous bulk constants plus a cellwise permeability field.

    alpha_override replaces 1 - K/K_s as the Biot coefficient while K_s
    keeps controlling the storage term (with K_s=inf the storage stays
    phi*c_f regardless of alpha).
    """

    bulk_modulus: float
    poisson: float
    solid_bulk_modulus: float
    porosity: float
    fluid_compressibility: float
    fluid_viscosity: float
    permeability: PermeabilityField
    alpha_override: float | None = None
    lame_lambda: float = field(init=False)
    lame_mu: float = field(init=False)
    alpha: float = field(init=False)
    inv_biot_modulus: float = field(init=False)

    def __post_init__(self):
        self.lame_lambda, self.lame_mu = lame_from_bulk_poisson(
            self.bulk_modulus, self.poisson)
        if self.alpha_override is not None:
            self.alpha = float(self.alpha_override)
        else:
            self.alpha = biot_coefficient(self.bulk_modulus, self.solid_bulk_modulus)
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("Biot coefficient must lie in (0, 1]")
        self.inv_biot_modulus = biot_modulus_inverse(
            self.porosity, self.fluid_compressibility, self.alpha,
            self.solid_bulk_modulus)

    def conductivity_tensors(self):
        return conductivity(self.permeability.tensors, self.fluid_viscosity)

    @property
    def constrained_modulus(self):
        """Uniaxial (oedometer) modulus lambda + 2 mu."""
        return self.lame_lambda + 2.0 * self.lame_mu
