"""Full-order Biot solver: vector P2 elasticity coupled to DG1 flow.

The two balance equations are advanced with backward Euler and solved per
step by the fixed-stress split: the flow equation sees the volumetric
stress frozen at the previous iterate, the momentum equation sees the
fresh pressure, and the pair is iterated until both relative increments
drop below tolerance. Pressure uses an interior-penalty DG form with
permeability-weighted averages and harmonic facet permeabilities so that
strong contrasts do not produce over/undershoots.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import mesh as meshmod
from .mesh import LEFT, TOP, RIGHT, BOTTOM, boundary_length_scales, interior_length_scales
from .spaces import (CellGeometry, TRI_QP_BARY, TRI_QW, EDGE_QP, EDGE_QW,
                     barycentric_coords, build_cg2_vector_dofmap, build_dg1_dofmap,
                     dg1_mass, p1_values, p2_values)

log = logging.getLogger(__name__)

_VERTEX_BARY = np.eye(3)


class RigidBodyModeError(RuntimeError):
    """Momentum operator is singular: constraints leave rigid-body modes."""


class FixedStressConvergenceError(RuntimeError):
    def __init__(self, n_iter, residual):
        super().__init__(
            f"fixed-stress split did not converge in {n_iter} iterations "
            f"(relative increment {residual:.3e})")
        self.n_iter = n_iter
        self.residual = residual


def bdf1(phi, phi_prev, dt):
    """First-order backward difference (phi - phi_prev) / dt."""
    if dt <= 0.0:
        raise ValueError("time step must be positive")
    phi = np.asarray(phi, dtype=float)
    phi_prev = np.asarray(phi_prev, dtype=float)
    if phi.shape != phi_prev.shape:
        raise ValueError("mismatched shapes in time difference")
    return (phi - phi_prev) / dt


@dataclass(frozen=True)
class TimeSchedule:
    times: np.ndarray   # (n_steps+1,), times[0] = 0

    @property
    def dts(self):
        return np.diff(self.times)

    @property
    def n_steps(self):
        return self.times.shape[0] - 1

    @property
    def t_final(self):
        return float(self.times[-1])


def build_time_schedule(dt0, mult, dt_max, t_final):
    """Steps grow by dt <- min(mult*dt, dt_max); the last step is clipped
    so the schedule lands exactly on t_final."""
    if dt0 <= 0.0 or dt_max <= 0.0 or mult <= 0.0:
        raise ValueError("dt0, mult and dt_max must be positive")
    if t_final <= dt0:
        raise ValueError("t_final must exceed the initial step")
    floor = 1e-6 * t_final
    times = [0.0]
    dt = dt0
    while times[-1] < t_final * (1.0 - 1e-14):
        if dt < floor:
            raise ValueError(
                f"time step {dt:.3e} fell below the floor {floor:.3e}; "
                "a multiplier below one shrinks steps toward zero")
        times.append(min(times[-1] + dt, t_final))
        dt = min(dt * mult, dt_max)
    return TimeSchedule(times=np.asarray(times))


def weighted_average_weights(k_plus, k_minus):
    """Weight on the plus-side trace: delta_e = k- / (k+ + k-)."""
    k_plus = np.asarray(k_plus, dtype=float)
    k_minus = np.asarray(k_minus, dtype=float)
    if np.any(k_plus <= 0.0) or np.any(k_minus <= 0.0):
        raise ValueError("facet permeabilities must be positive")
    return k_minus / (k_plus + k_minus)


def harmonic_permeability(k_plus, k_minus):
    """Harmonic facet permeability 2 k+ k- / (k+ + k-)."""
    k_plus = np.asarray(k_plus, dtype=float)
    k_minus = np.asarray(k_minus, dtype=float)
    if np.any(k_plus <= 0.0) or np.any(k_minus <= 0.0):
        raise ValueError("facet permeabilities must be positive")
    return 2.0 * k_plus * k_minus / (k_plus + k_minus)


# boundary side -> constrained component for a u.n = value condition
_NORMAL_COMPONENT = {LEFT: 0, RIGHT: 0, TOP: 1, BOTTOM: 1}


@dataclass
class BoundaryConditions:
    """Per-side data, keyed by mesh.LEFT/TOP/RIGHT/BOTTOM.

    displacement values are ("normal", value) for a roller or
    ("fixed", (ux, uy)); traction is a force density vector. pressure sets
    a Dirichlet value enforced weakly through the DG form, flux a Neumann
    datum entering the load functional with positive sign. Every side
    needs exactly one momentum condition and one flow condition.
    """

    displacement: dict
    traction: dict
    pressure: dict
    flux: dict
    source: float = 0.0

    def __post_init__(self):
        for side in range(4):
            if (side in self.displacement) == (side in self.traction):
                raise ValueError(
                    f"side {meshmod.BOUNDARY_LABELS[side]} needs exactly one of "
                    "displacement/traction")
            if (side in self.pressure) == (side in self.flux):
                raise ValueError(
                    f"side {meshmod.BOUNDARY_LABELS[side]} needs exactly one of "
                    "pressure/flux")


def default_consolidation_bcs(traction=(0.0, -1000.0)):
    """Rollers and no-flow on Left/Right/Bottom, load and drainage on Top."""
    return BoundaryConditions(
        displacement={LEFT: ("normal", 0.0), RIGHT: ("normal", 0.0),
                      BOTTOM: ("normal", 0.0)},
        traction={TOP: tuple(traction)},
        pressure={TOP: 0.0},
        flux={LEFT: 0.0, RIGHT: 0.0, BOTTOM: 0.0},
    )


@dataclass
class FomState:
    u: np.ndarray
    p: np.ndarray
    sigma_v: np.ndarray
    t: float
    # volumetric stress the final flow sweep saw; the converged pressure
    # satisfies the flow equation with THIS field, not with sigma_v
    sigma_v_frozen: np.ndarray = None


@dataclass
class FomTrajectory:
    times: np.ndarray        # (n_steps+1,)
    u: np.ndarray            # (n_u, n_steps+1)
    p: np.ndarray            # (n_p, n_steps+1)
    sigma_v: np.ndarray      # (n_p, n_steps+1)
    iterations: np.ndarray   # (n_steps,) fixed-stress counts
    sigma_v_frozen: np.ndarray = None   # (n_p, n_steps), per converged step

    def state(self, n):
        frozen = None
        if n >= 1 and self.sigma_v_frozen is not None:
            frozen = self.sigma_v_frozen[:, n - 1]
        return FomState(self.u[:, n], self.p[:, n], self.sigma_v[:, n],
                        float(self.times[n]), sigma_v_frozen=frozen)


def _collect_displacement_constraints(mesh, bcs):
    nv = mesh.n_vertices
    entries = {}
    for f in range(mesh.bf_edges.shape[0]):
        side = mesh.bf_labels[f]
        if side not in bcs.displacement:
            continue
        kind, value = bcs.displacement[side]
        e = mesh.bf_edges[f]
        v0, v1 = mesh.edges[e]
        nodes = (v0, v1, nv + e)
        if kind == "normal":
            comp = _NORMAL_COMPONENT[side]
            for g in nodes:
                entries[2 * g + comp] = float(value)
        elif kind == "fixed":
            for g in nodes:
                entries[2 * g + 0] = float(value[0])
                entries[2 * g + 1] = float(value[1])
        else:
            raise ValueError(f"unknown displacement condition {kind!r}")
    dofs = np.fromiter(sorted(entries), dtype=np.int64)
    vals = np.asarray([entries[d] for d in dofs])
    return dofs, vals


def assemble_momentum(mesh, geom, dofmap_u, lam, mu):
    """Stiffness of int sigma'(u) : grad_s(psi) without constraints."""
    grads = geom.p2_physical_gradients(TRI_QP_BARY)      # (nc,q,6,2)
    t1 = np.einsum("q,nqac,nqbd->nacbd", TRI_QW, grads, grads)
    tdot = np.einsum("q,nqak,nqbk->nab", TRI_QW, grads, grads)
    eye = np.eye(2)
    loc = lam * t1 + mu * (t1.transpose(0, 1, 4, 3, 2)
                           + np.einsum("nab,cd->nacbd", tdot, eye))
    loc = loc.reshape(mesh.n_cells, 12, 12) * geom.areas[:, None, None]
    rows = np.repeat(dofmap_u.cell_dofs, 12, axis=1)
    cols = np.tile(dofmap_u.cell_dofs, (1, 12))
    A = sp.coo_matrix((loc.ravel(), (rows.ravel(), cols.ravel())),
                      shape=(dofmap_u.n_dofs, dofmap_u.n_dofs)).tocsr()
    return A


def assemble_coupling(mesh, geom, dofmap_u, dofmap_p, alpha):
    """C[i,j] = alpha * int N_j^p div(psi_i); momentum rhs gains C @ p."""
    grads = geom.p2_physical_gradients(TRI_QP_BARY)
    n1 = p1_values(TRI_QP_BARY)                          # (q,3)
    loc = alpha * np.einsum("q,qj,nqac->nacj", TRI_QW, n1, grads)
    loc = loc.reshape(mesh.n_cells, 12, 3) * geom.areas[:, None, None]
    rows = np.repeat(dofmap_u.cell_dofs, 3, axis=1)
    cols = np.tile(dofmap_p.cell_dofs, (1, 12))
    return sp.coo_matrix((loc.ravel(), (rows.ravel(), cols.ravel())),
                         shape=(dofmap_u.n_dofs, dofmap_p.n_dofs)).tocsr()


def assemble_traction_rhs(mesh, geom, dofmap_u, bcs):
    b = np.zeros(dofmap_u.n_dofs)
    for f in range(mesh.bf_edges.shape[0]):
        side = mesh.bf_labels[f]
        if side not in bcs.traction:
            continue
        t_d = np.asarray(bcs.traction[side], dtype=float)
        c = mesh.bf_cells[f]
        v0, v1 = mesh.vertices[mesh.edges[mesh.bf_edges[f]]]
        pts = v0[None, :] + EDGE_QP[:, None] * (v1 - v0)[None, :]
        bary = barycentric_coords(mesh, geom, np.full(3, c), pts)
        vals = p2_values(bary)                           # (q,6)
        contrib = mesh.bf_lengths[f] * np.einsum("q,qa->a", EDGE_QW, vals)
        dofs = dofmap_u.cell_dofs[c]
        b[dofs[0::2]] += contrib * t_d[0]
        b[dofs[1::2]] += contrib * t_d[1]
    return b


def _facet_trace(mesh, geom, cell, v0, v1):
    """P1 trace values of a cell's nodal basis at the edge quadrature points."""
    pts = v0[None, :] + EDGE_QP[:, None] * (v1 - v0)[None, :]
    bary = barycentric_coords(mesh, geom, np.full(EDGE_QP.shape[0], cell), pts)
    return p1_values(bary)


def assemble_pressure(mesh, geom, dofmap_p, kappa, bcs, beta):
    """Diffusion part of the flow equation: volume term, interior-penalty
    facet terms with weighted averages, and weak Dirichlet boundary terms.

    Returns (S, b): the bilinear form matrix without any storage term and
    the static load vector (source, flux and Dirichlet data).
    """
    nc = mesh.n_cells
    glam = geom.grad_lambda
    rows_v = np.repeat(dofmap_p.cell_dofs, 3, axis=1)
    cols_v = np.tile(dofmap_p.cell_dofs, (1, 3))
    loc = np.einsum("nid,nde,nje->nij", glam, kappa, glam) \
        * geom.areas[:, None, None]
    parts_r = [rows_v.ravel()]
    parts_c = [cols_v.ravel()]
    parts_v = [loc.ravel()]

    b = np.zeros(dofmap_p.n_dofs)
    if bcs.source != 0.0:
        # source is constant; int g N_i = g A / 3 for nodal P1
        b[dofmap_p.cell_dofs.ravel()] += np.repeat(
            bcs.source * geom.areas / 3.0, 3)

    he_int = interior_length_scales(mesh)
    for f in range(mesh.if_edges.shape[0]):
        cp, cm = mesh.if_cells[f]
        n = mesh.if_normals[f]
        length = mesh.if_lengths[f]
        kp = kappa[cp]
        km = kappa[cm]
        kn_p = n @ kp @ n
        kn_m = n @ km @ n
        delta = weighted_average_weights(kn_p, kn_m)
        k_e = harmonic_permeability(kn_p, kn_m)
        flux_p = (glam[cp] @ kp) @ n                     # (3,)
        flux_m = (glam[cm] @ km) @ n
        v0, v1 = mesh.vertices[mesh.edges[mesh.if_edges[f]]]
        tr_p = _facet_trace(mesh, geom, cp, v0, v1)      # (q,3)
        tr_m = _facet_trace(mesh, geom, cm, v0, v1)
        jmp = np.hstack([tr_p, -tr_m])                   # (q,6)
        avg = np.concatenate([delta * flux_p, (1.0 - delta) * flux_m])
        jbar = EDGE_QW @ jmp
        pen = beta / he_int[f] * k_e
        block = -length * np.outer(jbar, avg)
        block += block.T
        block += pen * length * np.einsum("q,qi,qj->ij", EDGE_QW, jmp, jmp)
        dofs = np.concatenate([dofmap_p.cell_dofs[cp], dofmap_p.cell_dofs[cm]])
        parts_r.append(np.repeat(dofs, 6))
        parts_c.append(np.tile(dofs, 6))
        parts_v.append(block.ravel())

    he_bnd = boundary_length_scales(mesh)
    for f in range(mesh.bf_edges.shape[0]):
        side = mesh.bf_labels[f]
        c = mesh.bf_cells[f]
        length = mesh.bf_lengths[f]
        v0, v1 = mesh.vertices[mesh.edges[mesh.bf_edges[f]]]
        if side in bcs.flux:
            q_d = bcs.flux[side]
            if q_d != 0.0:
                tr = _facet_trace(mesh, geom, c, v0, v1)
                b[dofmap_p.cell_dofs[c]] += length * q_d * (EDGE_QW @ tr)
            continue
        p_d = bcs.pressure[side]
        n = mesh.bf_normals[f]
        kc = kappa[c]
        kn = n @ kc @ n
        flux = (glam[c] @ kc) @ n
        tr = _facet_trace(mesh, geom, c, v0, v1)
        nbar = EDGE_QW @ tr
        pen = beta / he_bnd[f] * kn
        block = -length * np.outer(nbar, flux)
        block += block.T
        block += pen * length * np.einsum("q,qi,qj->ij", EDGE_QW, tr, tr)
        dofs = dofmap_p.cell_dofs[c]
        parts_r.append(np.repeat(dofs, 3))
        parts_c.append(np.tile(dofs, 3))
        parts_v.append(block.ravel())
        if p_d != 0.0:
            b[dofs] += -length * flux * p_d + pen * length * nbar * p_d

    S = sp.coo_matrix((np.concatenate(parts_v),
                       (np.concatenate(parts_r), np.concatenate(parts_c))),
                      shape=(dofmap_p.n_dofs, dofmap_p.n_dofs)).tocsr()
    return S, b


def check_sipg_coercivity(mesh, geom, kappa, beta, n_sample=24):
    """Sampled local coercivity check of the interior-penalty form.

    Each sampled facet gets one third of the adjacent cell diffusion
    blocks (a cell has three facets) plus its own facet terms; the
    smallest eigenvalue must not be meaningfully negative, otherwise the
    penalty parameter is too small for this permeability field.
    """
    glam = geom.grad_lambda
    vol = np.einsum("nid,nde,nje->nij", glam, kappa, glam) \
        * geom.areas[:, None, None]
    nif = mesh.if_edges.shape[0]
    ke_all = np.empty(nif)
    for f in range(nif):
        cp, cm = mesh.if_cells[f]
        n = mesh.if_normals[f]
        ke_all[f] = harmonic_permeability(n @ kappa[cp] @ n, n @ kappa[cm] @ n)
    sample = np.unique(np.concatenate([
        np.linspace(0, nif - 1, min(n_sample, nif)).astype(int),
        [int(np.argmin(ke_all)), int(np.argmax(ke_all))]]))
    he_int = interior_length_scales(mesh)
    for f in sample:
        cp, cm = mesh.if_cells[f]
        n = mesh.if_normals[f]
        length = mesh.if_lengths[f]
        kp, km = kappa[cp], kappa[cm]
        kn_p, kn_m = n @ kp @ n, n @ km @ n
        delta = weighted_average_weights(kn_p, kn_m)
        k_e = harmonic_permeability(kn_p, kn_m)
        flux_p = (glam[cp] @ kp) @ n
        flux_m = (glam[cm] @ km) @ n
        v0, v1 = mesh.vertices[mesh.edges[mesh.if_edges[f]]]
        jmp = np.hstack([_facet_trace(mesh, geom, cp, v0, v1),
                         -_facet_trace(mesh, geom, cm, v0, v1)])
        avg = np.concatenate([delta * flux_p, (1.0 - delta) * flux_m])
        jbar = EDGE_QW @ jmp
        block = -length * np.outer(jbar, avg)
        block += block.T
        block += beta / he_int[f] * k_e * length \
            * np.einsum("q,qi,qj->ij", EDGE_QW, jmp, jmp)
        block[:3, :3] += vol[cp] / 3.0
        block[3:, 3:] += vol[cm] / 3.0
        w = np.linalg.eigvalsh(block)
        if w[0] < -1e-12 * max(abs(w[-1]), 1e-300):
            raise ValueError(
                f"interior-penalty form not coercive at facet {f} "
                f"(min eigenvalue {w[0]:.3e}); increase beta (currently {beta})")


@dataclass
class BiotOperators:
    """Everything run_fom needs, assembled once per parameter value."""

    mesh: object
    geom: object
    dofmap_u: object
    dofmap_p: object
    A_u: sp.csr_matrix          # constrained elastic stiffness
    C: sp.csr_matrix            # pressure-to-momentum coupling, bc rows zeroed
    F_u: np.ndarray             # static momentum load with bc values set
    S_p: sp.csr_matrix          # flow diffusion + facet terms
    M_p: sp.csr_matrix          # DG1 mass
    b_p: np.ndarray             # static flow load
    Div: sp.csr_matrix          # nodal DG1 image of div(u)
    lu_u: object
    alpha: float
    bulk_K: float
    inv_M: float
    constrained_dofs: np.ndarray

    @property
    def c_storage(self):
        return self.inv_M + self.alpha ** 2 / self.bulk_K

    @property
    def c_fixed_stress(self):
        return self.alpha / self.bulk_K

    def pressure_matrix(self, dt):
        return self.S_p + (self.c_storage / dt) * self.M_p


def assemble_divergence(mesh, geom, dofmap_u, dofmap_p):
    """div(u) of a P2 field is cellwise P1; evaluate it at the cell
    vertices to get its exact DG1 coefficients."""
    gv = geom.p2_physical_gradients(_VERTEX_BARY)        # (nc,3,6,2)
    loc = gv.reshape(mesh.n_cells, 3, 12)
    rows = np.repeat(dofmap_p.cell_dofs, 12, axis=1)
    cols = np.tile(dofmap_u.cell_dofs, (1, 3))
    return sp.coo_matrix((loc.ravel(), (rows.ravel(), cols.ravel())),
                         shape=(dofmap_p.n_dofs, dofmap_u.n_dofs)).tocsr()


def build_biot_operators(mesh, materials, bcs, beta=10.0):
    geom = CellGeometry.from_mesh(mesh)
    dofmap_u = build_cg2_vector_dofmap(mesh)
    dofmap_p = build_dg1_dofmap(mesh)
    kappa = materials.conductivity_tensors()
    check_sipg_coercivity(mesh, geom, kappa, beta)

    A = assemble_momentum(mesh, geom, dofmap_u, materials.lame_lambda,
                          materials.lame_mu)
    C = assemble_coupling(mesh, geom, dofmap_u, dofmap_p, materials.alpha)
    F = assemble_traction_rhs(mesh, geom, dofmap_u, bcs)

    dofs, vals = _collect_displacement_constraints(mesh, bcs)
    if dofs.size == 0:
        raise RigidBodyModeError(
            "no displacement constraints: the momentum problem has "
            "rigid-body modes")
    if np.any(vals != 0.0):
        F -= A[:, dofs] @ vals
    keep = np.ones(dofmap_u.n_dofs)
    keep[dofs] = 0.0
    D = sp.diags(keep)
    pin = sp.diags(1.0 - keep)
    A = (D @ A @ D + pin).tocsc()
    C = (D @ C).tocsr()
    F[dofs] = vals

    try:
        lu_u = spla.splu(A)
    except RuntimeError as exc:
        raise RigidBodyModeError(
            f"momentum operator factorization failed: {exc}") from exc

    S_p, b_p = assemble_pressure(mesh, geom, dofmap_p, kappa, bcs, beta)
    M_p = dg1_mass(mesh, dofmap_p)
    Div = assemble_divergence(mesh, geom, dofmap_u, dofmap_p)

    return BiotOperators(
        mesh=mesh, geom=geom, dofmap_u=dofmap_u, dofmap_p=dofmap_p,
        A_u=A, C=C, F_u=F, S_p=S_p, M_p=M_p, b_p=b_p, Div=Div, lu_u=lu_u,
        alpha=materials.alpha, bulk_K=materials.bulk_modulus,
        inv_M=materials.inv_biot_modulus, constrained_dofs=dofs)


def volumetric_stress(ops, u, p):
    """sigma_v = tr(sigma)/3 = K div(u) - alpha p, exactly representable
    in DG1 (plane strain, lambda + 2mu/3 = K)."""
    return ops.bulk_K * (ops.Div @ u) - ops.alpha * p


def undrained_initialize(ops):
    """Instantaneous response to the loaded configuration with no drainage.

    Conductivity is taken to zero, so the flow equation collapses to
    (1/M) p + alpha div(u) = 0 and the coupled block system is solved
    monolithically. Needs 1/M > 0; pressure Dirichlet data does not apply
    because every flux path is switched off.
    """
    if ops.inv_M <= 0.0:
        raise ValueError(
            "undrained initialization requires compressible storage (1/M > 0)")
    n_p = ops.dofmap_p.n_dofs
    B_pu = ops.alpha * (ops.M_p @ ops.Div)
    block = sp.bmat([[ops.A_u, -ops.C], [B_pu, ops.inv_M * ops.M_p]],
                    format="csc")
    rhs = np.concatenate([ops.F_u, np.zeros(n_p)])
    sol = spla.splu(block).solve(rhs)
    u0 = sol[:ops.dofmap_u.n_dofs]
    p0 = sol[ops.dofmap_u.n_dofs:]
    return FomState(u=u0, p=p0, sigma_v=volumetric_stress(ops, u0, p0), t=0.0)


def fixed_stress_step(ops, lu_p, dt, prev, tol=1e-8, max_iter=500,
                      p_scale=0.0, u_scale=0.0):
    """One backward-Euler step solved by fixed-stress iteration.

    Returns (state, n_iterations). The flow solve freezes the volumetric
    stress from the latest iterate; convergence is declared when the
    increments of both fields drop below tol relative to the larger of
    the current iterate norm and the given field scale. The scales keep
    the criterion meaningful once a field has drained to roundoff of its
    initial magnitude (a pure relative test would chase 0/0 there).
    """
    c0 = ops.c_storage / dt
    c1 = ops.c_fixed_stress / dt
    base = ops.b_p + c0 * (ops.M_p @ prev.p) + c1 * (ops.M_p @ prev.sigma_v)
    u, p, sv = prev.u, prev.p, prev.sigma_v
    residual = np.inf
    for it in range(1, max_iter + 1):
        sv_frozen = sv
        p_new = lu_p.solve(base - c1 * (ops.M_p @ sv_frozen))
        u_new = ops.lu_u.solve(ops.F_u + ops.C @ p_new)
        sv_new = volumetric_stress(ops, u_new, p_new)
        dp = np.linalg.norm(p_new - p)
        du = np.linalg.norm(u_new - u)
        den_p = max(np.linalg.norm(p_new), p_scale)
        den_u = max(np.linalg.norm(u_new), u_scale)
        rp = dp / den_p if den_p > 0.0 else dp
        ru = du / den_u if den_u > 0.0 else du
        u, p, sv = u_new, p_new, sv_new
        residual = max(rp, ru)
        if residual < tol:
            return FomState(u=u, p=p, sigma_v=sv, t=prev.t + dt,
                            sigma_v_frozen=sv_frozen), it
    raise FixedStressConvergenceError(max_iter, residual)


def run_fom(mesh, materials, bcs, schedule, beta=10.0, tol_fs=1e-8,
            max_iter=500, ops=None):
    """Full trajectory: undrained initial state plus one fixed-stress solve
    per schedule step. Matrix factorizations are cached per distinct dt."""
    if ops is None:
        ops = build_biot_operators(mesh, materials, bcs, beta=beta)
    state = undrained_initialize(ops)
    p_scale = np.linalg.norm(state.p)
    u_scale = np.linalg.norm(state.u)
    n1 = schedule.n_steps + 1
    traj = FomTrajectory(
        times=schedule.times.copy(),
        u=np.empty((ops.dofmap_u.n_dofs, n1)),
        p=np.empty((ops.dofmap_p.n_dofs, n1)),
        sigma_v=np.empty((ops.dofmap_p.n_dofs, n1)),
        iterations=np.zeros(schedule.n_steps, dtype=np.int64),
        sigma_v_frozen=np.empty((ops.dofmap_p.n_dofs, schedule.n_steps)))
    traj.u[:, 0] = state.u
    traj.p[:, 0] = state.p
    traj.sigma_v[:, 0] = state.sigma_v
    lu_cache = {}
    for n, dt in enumerate(schedule.dts):
        dt = float(dt)
        if dt not in lu_cache:
            lu_cache[dt] = spla.splu(ops.pressure_matrix(dt).tocsc())
        state, it = fixed_stress_step(ops, lu_cache[dt], dt, state,
                                      tol=tol_fs, max_iter=max_iter,
                                      p_scale=p_scale, u_scale=u_scale)
        traj.u[:, n + 1] = state.u
        traj.p[:, n + 1] = state.p
        traj.sigma_v[:, n + 1] = state.sigma_v
        traj.iterations[n] = it
        traj.sigma_v_frozen[:, n] = state.sigma_v_frozen
    return traj


def cell_mass_residuals(ops, dt, state, prev):
    """Per-cell residual of the discrete flow equation at a converged step.

    The DG1 space contains cellwise constants, so summing the three nodal
    equations of one cell gives that cell's discrete mass balance; direct
    solves leave it at round-off. The equation is evaluated with the
    volumetric stress the final flow sweep actually used (sigma_v_frozen)
    when the state carries it; against the fully updated sigma_v the sums
    instead pick up the terminal splitting increment (~tol_fs). Returns
    (residuals, scale): the signed per-cell sums and the largest equation
    magnitude to measure against.
    """
    A_p = ops.pressure_matrix(dt)
    c0 = ops.c_storage / dt
    c1 = ops.c_fixed_stress / dt
    sv = state.sigma_v if state.sigma_v_frozen is None else state.sigma_v_frozen
    rhs = ops.b_p + c0 * (ops.M_p @ prev.p) \
        + c1 * (ops.M_p @ (prev.sigma_v - sv))
    r = A_p @ state.p - rhs
    lhs = np.abs(A_p @ state.p)
    scale = max(float(lhs.max()), float(np.abs(rhs).max()), 1e-300)
    return r.reshape(-1, 3).sum(axis=1), scale
