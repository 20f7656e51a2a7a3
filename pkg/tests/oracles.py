"""Independent reference computations the tests compare against.

Each function here deliberately avoids the code paths under test: dense
algebra instead of sparse solvers, analytic series instead of time
stepping, finite differences instead of backprop.
"""

import math

import numpy as np


def terzaghi_pressure(y, t, p0, c_v, n_terms=80):
    """Analytic 1D consolidation pressure, drained at y=1, sealed at y=0.

    p(y, t) = p0 * sum_n (2 / M_n) sin(M_n (1 - y)) exp(-M_n^2 c_v t)
    with M_n = pi (2n + 1) / 2 over a unit drainage length.
    """
    y = np.asarray(y, dtype=float)
    z = 1.0 - y
    acc = np.zeros_like(z)
    for n in range(n_terms):
        m = 0.5 * math.pi * (2 * n + 1)
        acc += (2.0 / m) * np.sin(m * z) * math.exp(-m * m * c_v * t)
    return p0 * acc


def consolidation_coefficient(materials):
    """c_v = kappa K_v M / (K_v + alpha^2 M) for uniform isotropic kappa."""
    kappa = materials.conductivity_tensors()[0, 0, 0]
    k_v = materials.constrained_modulus
    m_biot = 1.0 / materials.inv_biot_modulus
    return kappa * k_v * m_biot / (k_v + materials.alpha ** 2 * m_biot)


def skempton_initial_pressure(materials, traction_magnitude):
    """Uniform undrained response to an instantaneous uniaxial load."""
    k_v = materials.constrained_modulus
    m_biot = 1.0 / materials.inv_biot_modulus
    a = materials.alpha
    return a * m_biot * traction_magnitude / (k_v + a * a * m_biot)


def monolithic_biot_step(ops, dt, prev):
    """Dense coupled solve of the same discrete equations the split
    iterates on: momentum with constraints folded in, plus backward-Euler
    flow with the exact storage and coupling terms."""
    A_u = ops.A_u.toarray()
    C = ops.C.toarray()
    S_p = ops.S_p.toarray()
    M_p = ops.M_p.toarray()
    Div = ops.Div.toarray()
    n_u = A_u.shape[0]
    n_p = S_p.shape[0]
    alpha = ops.alpha
    inv_m = ops.inv_M
    top = np.hstack([A_u, -C])
    bottom = np.hstack([(alpha / dt) * (M_p @ Div),
                        S_p + (inv_m / dt) * M_p])
    lhs = np.vstack([top, bottom])
    rhs = np.concatenate([
        ops.F_u,
        ops.b_p + (inv_m / dt) * (M_p @ prev.p)
        + (alpha / dt) * (M_p @ (Div @ prev.u)),
    ])
    sol = np.linalg.solve(lhs, rhs)
    return sol[:n_u], sol[n_u:]


def dense_weighted_svd(S, mass=None):
    """Singular values and left modes of S in the (optionally mass-
    weighted) inner product, via dense Cholesky + SVD."""
    if mass is None:
        U, sigma, _ = np.linalg.svd(S, full_matrices=False)
        return sigma, U
    L = np.linalg.cholesky(np.asarray(mass.todense()) if hasattr(mass, "todense")
                           else np.asarray(mass))
    U, sigma, _ = np.linalg.svd(L.T @ S, full_matrices=False)
    modes = np.linalg.solve(L.T, U)
    return sigma, modes


def least_squares_projection(W, f, mass=None):
    """Best-approximation coefficients via a QR least-squares solve on the
    Cholesky-weighted system (no normal equations)."""
    if mass is None:
        theta, *_ = np.linalg.lstsq(W, f, rcond=None)
        return theta
    L = np.linalg.cholesky(np.asarray(mass.todense()) if hasattr(mass, "todense")
                           else np.asarray(mass))
    theta, *_ = np.linalg.lstsq(L.T @ W, L.T @ f, rcond=None)
    return theta


def finite_difference_gradients(loss, params, step=1e-6):
    """Central differences of loss(params) in every weight and bias."""
    grads_w, grads_b = [], []
    for W in params.weights:
        g = np.zeros_like(W)
        it = np.nditer(W, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = W[idx]
            W[idx] = orig + step
            up = loss(params)
            W[idx] = orig - step
            down = loss(params)
            W[idx] = orig
            g[idx] = (up - down) / (2.0 * step)
        grads_w.append(g)
    for b in params.biases:
        g = np.zeros_like(b)
        for i in range(b.shape[0]):
            orig = b[i]
            b[i] = orig + step
            up = loss(params)
            b[i] = orig - step
            down = loss(params)
            b[i] = orig
            g[i] = (up - down) / (2.0 * step)
        grads_b.append(g)
    return grads_w, grads_b


def reference_triangle_monomial(a, b):
    """Exact integral of x^a y^b over the triangle (0,0), (1,0), (0,1)."""
    return (math.factorial(a) * math.factorial(b)
            / math.factorial(a + b + 2))
