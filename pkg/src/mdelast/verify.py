"""Verification harness: manufactured solutions, rates, and stability checks.

Exact fields are symbolic expression trees; all derived data (stresses from
the constitutive law, body forces from momentum balance, boundary traces)
come from symbolic differentiation, so there is a single oracle and no
hand-coded derivatives.  Randomness uses a fixed-seed linear congruential
generator (Numerical Recipes constants) for cross-platform reproducibility.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import sympy as sp

from mdelast import expressions as ex
from mdelast.assembly import (
    MaterialLaw,
    assemble_system,
    norm_matrices,
    u_mass_matrix,
)
from mdelast.elements import (
    FamilyChoice,
    SpaceSet,
    bdm_eval_many,
    build_spaces,
    project_u,
    seg_shape,
    w_shape,
)
from mdelast.geometry import (
    Manifold,
    MixedDimGeometry,
    decompose,
    epsilon_max,
)
from mdelast.mdops import curl_matrix, divergence_matrix
from mdelast.meshing import MixedMesh, build_mesh, refine
from mdelast.quadrature import gauss01, tri_points
from mdelast.solver import SolutionFields, solve

X, Y = ex.X, ex.Y


class LCG:
    """Deterministic 32-bit linear congruential generator.

    state <- (1664525 * state + 1013904223) mod 2^32; uniform() returns
    state / 2^32.  Used for every random draw in the harness.
    """

    def __init__(self, seed: int = 20240817):
        self.state = seed % 2**32

    def uniform(self) -> float:
        self.state = (1664525 * self.state + 1013904223) % 2**32
        return self.state / 2**32

    def vector(self, n: int, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
        return np.array([lo + (hi - lo) * self.uniform() for _ in range(n)])


# ----------------------------------------------------------------------------
# manufactured cases
# ----------------------------------------------------------------------------


@dataclass
class ManufacturedCase:
    id: str
    geometry: MixedDimGeometry
    material: MaterialLaw
    exact_u: dict | None
    exact_sigma: dict | None
    exact_r: dict | None
    tractions: dict | None
    f: dict
    g_u: dict
    note: str = ""
    _fns: dict = field(default_factory=dict, repr=False)

    @property
    def has_exact(self) -> bool:
        return self.exact_u is not None

    def fn(self, which: str, mid: int):
        key = (which, mid)
        if key not in self._fns:
            table = getattr(self, which)
            self._fns[key] = ex.lambdify(table[mid]) if mid in table else None
        return self._fns[key]

    def u_at(self, mid, x, y):
        return np.asarray(self.fn("exact_u", mid)(x, y), dtype=float).reshape(2, -1)

    def sigma_at(self, mid, x, y):
        man = self.geometry.manifold(mid)
        out = np.asarray(self.fn("exact_sigma", mid)(x, y), dtype=float)
        if man.dim == 2:
            return out.reshape(2, 2, -1)
        return out.reshape(2, -1)

    def f_at(self, mid, x, y):
        return np.asarray(self.fn("f", mid)(x, y), dtype=float).reshape(2, -1)

    def traction_at(self, j, x, y):
        key = ("tractions", j)
        if key not in self._fns:
            self._fns[key] = ex.lambdify(self.tractions[j])
        return np.asarray(self._fns[key](x, y), dtype=float).reshape(2, -1)

    def g_callables(self) -> dict:
        out = {}
        for mid, expr in self.g_u.items():
            fn = ex.lambdify(expr)
            out[mid] = (lambda f: lambda x, y: np.asarray(f(x, y)).reshape(2))(fn)
        return out

    def f_callables(self) -> dict:
        out = {}
        for mid, expr in self.f.items():
            fn = ex.lambdify(expr)
            out[mid] = (lambda f: lambda x, y: np.asarray(f(x, y)).reshape(2))(fn)
        return out


def _plane_stress_sigma(u: sp.Matrix, mu: float, lam: float) -> sp.Matrix:
    J = ex.jacobian(u)
    sym = (J + J.T) / 2
    return 2 * mu * sym + lam * sp.trace(J) * sp.eye(2)


def _rotation_of(u: sp.Matrix) -> sp.Expr:
    return (sp.diff(u[0], Y) - sp.diff(u[1], X)) / 2


def _row_divergence(sig: sp.Matrix) -> sp.Matrix:
    return sp.Matrix([
        sp.diff(sig[0, 0], X) + sp.diff(sig[0, 1], Y),
        sp.diff(sig[1, 0], X) + sp.diff(sig[1, 1], Y),
    ])


def _interface_compliance_sym(T: sp.Matrix, n, mu_p, lam_p) -> sp.Matrix:
    nvec = sp.Matrix([float(n[0]), float(n[1])])
    return (T - lam_p / (2 * mu_p + lam_p) * (T.dot(nvec)) * nvec) / (2 * mu_p)


_UNIT_SQUARE = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]


def manufactured_case(
    case_id: str,
    epsilon: float = 1e-2,
    material: MaterialLaw | None = None,
) -> ManufacturedCase:
    """Construct one of the shipped manufactured cases (MMS-1, MMS-2, MMS-3)."""
    if material is None:
        material = MaterialLaw(mu=1.0, lam=1.0, mu_perp=1.0, lam_perp=1.0)
    if case_id == "MMS-1":
        return _mms1(material)
    if case_id == "MMS-2":
        return _mms2(epsilon, material)
    if case_id == "MMS-3":
        return _mms3(epsilon, material)
    raise ValueError(f"unknown manufactured case {case_id!r}")


def _mms1(material: MaterialLaw) -> ManufacturedCase:
    geometry = decompose(_UNIT_SQUARE, [])
    mid = geometry.manifolds_of_dim(2)[0].id
    mu, lam = material.mu_of(mid), material.lam_of(mid)
    u = sp.Matrix([
        sp.sin(sp.pi * X) * sp.sin(sp.pi * Y) / 10,
        sp.cos(sp.pi * X) * sp.cos(sp.pi * Y) / 10,
    ])
    sig = _plane_stress_sigma(u, mu, lam)
    return ManufacturedCase(
        id="MMS-1", geometry=geometry, material=material,
        exact_u={mid: u}, exact_sigma={mid: sig},
        exact_r={mid: _rotation_of(u)}, tractions={},
        f={mid: _row_divergence(sig)}, g_u={mid: u},
        note="smooth trigonometric displacement on the unit square",
    )


def _mms2(epsilon: float, material: MaterialLaw) -> ManufacturedCase:
    geometry = decompose(
        _UNIT_SQUARE, [((0.0, 0.5), (1.0, 0.5), epsilon, epsilon**2)]
    )
    seg = geometry.manifolds_of_dim(1)[0]
    bulks = geometry.manifolds_of_dim(2)
    top = next(m.id for m in bulks if m.centroid()[1] > 0.5)
    bot = next(m.id for m in bulks if m.centroid()[1] < 0.5)
    j_top = next(j for j in geometry.J_hat[seg.id]
                 if geometry.interface(j).upper == top)
    j_bot = next(j for j in geometry.J_hat[seg.id]
                 if geometry.interface(j).upper == bot)
    mu_t, lam_t = material.mu_of(top), material.lam_of(top)
    mu_b, lam_b = material.mu_of(bot), material.lam_of(bot)
    mu_i, lam_i = material.mu_of(seg.id), material.lam_of(seg.id)
    mupt, lampt = material.mu_perp_of(j_top), material.lam_perp_of(j_top)
    mupb, lampb = material.mu_perp_of(j_bot), material.lam_perp_of(j_bot)
    eps = sp.Float(epsilon)

    # inclusion displacement and the side tractions are chosen; the bulk
    # displacements follow from the interface law and the traction condition
    u_inc = sp.Matrix([
        sp.sin(sp.pi * X) / 10 + X / 20,
        sp.cos(sp.pi * X) / 10,
    ])
    T_top = sp.Matrix([sp.sin(sp.pi * X) * sp.Rational(3, 10) + sp.Rational(1, 10),
                       sp.cos(sp.pi * X) * sp.Rational(1, 5)])
    T_bot = sp.Matrix([-sp.sin(sp.pi * X) * sp.Rational(1, 5),
                       sp.cos(sp.pi * X) * sp.Rational(3, 20) - sp.Rational(1, 10)])

    n_top = np.array([0.0, -1.0])
    n_bot = np.array([0.0, 1.0])
    u_hat_top = u_inc - _interface_compliance_sym(T_top, n_top, mupt, lampt)
    u_hat_bot = u_inc - _interface_compliance_sym(T_bot, n_bot, mupb, lampb)

    dy = Y - sp.Rational(1, 2)

    def bulk_field(u_hat, T, sign, q, mu, lam):
        # value u_hat on the line; normal derivative fixed by the traction
        p1 = sign * T[0] / mu - sp.diff(u_hat[1], X)
        p2 = (sign * T[1] - lam * sp.diff(u_hat[0], X)) / (2 * mu + lam)
        return sp.Matrix([
            u_hat[0] + dy * p1 + dy**2 * q[0],
            u_hat[1] + dy * p2 + dy**2 * q[1],
        ])

    q_top = sp.Matrix([sp.sin(2 * X) / 20, sp.cos(X) / 25])
    q_bot = sp.Matrix([sp.cos(2 * X) / 25, sp.sin(X) / 20])
    # sign: traction is n . sigma with n = (0, -1) above and (0, +1) below
    u_top = bulk_field(u_hat_top, T_top, -1, q_top, mu_t, lam_t)
    u_bot = bulk_field(u_hat_bot, T_bot, +1, q_bot, mu_b, lam_b)

    sig_top = _plane_stress_sigma(u_top, mu_t, lam_t)
    sig_bot = _plane_stress_sigma(u_bot, mu_b, lam_b)
    # inclusion stress: scaled one-dimensional law in the local frame
    sig_inc = sp.Matrix([
        eps * (2 * mu_i + lam_i) * sp.diff(u_inc[0], X),
        eps * 2 * mu_i * sp.diff(u_inc[1], X),
    ])
    f_inc = sp.Matrix([
        (2 * mu_i + lam_i) * sp.diff(u_inc[0], X, 2),
        2 * mu_i * sp.diff(u_inc[1], X, 2),
    ]) - (T_top + T_bot) / eps**2

    return ManufacturedCase(
        id="MMS-2", geometry=geometry, material=material,
        exact_u={top: u_top, bot: u_bot, seg.id: u_inc},
        exact_sigma={top: sig_top, bot: sig_bot, seg.id: sig_inc},
        exact_r={top: _rotation_of(u_top), bot: _rotation_of(u_bot)},
        tractions={j_top: T_top, j_bot: T_bot},
        f={top: _row_divergence(sig_top), bot: _row_divergence(sig_bot),
           seg.id: f_inc},
        g_u={top: u_top, bot: u_bot, seg.id: u_inc},
        note=f"horizontal inclusion at y = 1/2 with epsilon = {epsilon:g}",
    )


def _mms3(epsilon: float, material: MaterialLaw) -> ManufacturedCase:
    geometry = decompose(
        _UNIT_SQUARE,
        [((0.0, 0.5), (1.0, 0.5), epsilon, epsilon**2),
         ((0.5, 0.0), (0.5, 1.0), epsilon, epsilon**2)],
    )
    f_expr = sp.Matrix([sp.sin(sp.pi * X) * sp.cos(sp.pi * Y), X * Y])
    g_expr = sp.Matrix([sp.sin(sp.pi * X + 1) / 10, (X - Y) / 10])
    f = {m.id: f_expr for m in geometry.manifolds}
    g = {m.id: g_expr for m in geometry.manifolds}
    return ManufacturedCase(
        id="MMS-3", geometry=geometry, material=material,
        exact_u=None, exact_sigma=None, exact_r=None, tractions=None,
        f=f, g_u=g,
        note="crossing inclusions; reference by overkill refinement",
    )


def strong_form_residual(case: ManufacturedCase, npts: int = 20, seed: int = 7) -> float:
    """Largest pointwise residual of the generalized strong system.

    Checks the constitutive law, momentum balance, stress symmetry, and the
    interface law at LCG-random points of every manifold.
    """
    if not case.has_exact:
        raise ValueError(f"{case.id} has no closed-form solution")
    rng = LCG(seed)
    geometry = case.geometry
    material = case.material
    worst = 0.0
    for man in geometry.manifolds:
        if man.dim == 2:
            mid = man.id
            mu, lam = material.mu_of(mid), material.lam_of(mid)
            u, sig = case.exact_u[mid], case.exact_sigma[mid]
            J = ex.jacobian(u)
            chi = (J - J.T) / 2
            res_cons = sp.Matrix(
                (sig - lam / (2 * mu + 2 * lam) * sp.trace(sig) * sp.eye(2)) / (2 * mu)
            ) - (J - chi)
            res_mom = _row_divergence(sig) - case.f[mid]
            res_sym = sig[0, 1] - sig[1, 0]
            fns = [ex.lambdify(res_cons), ex.lambdify(res_mom), ex.lambdify(res_sym)]
            walk = man.vertices
            lo, hi = walk.min(axis=0), walk.max(axis=0)
            got = 0
            while got < npts:
                p = np.array([lo[0] + (hi[0] - lo[0]) * rng.uniform(),
                              lo[1] + (hi[1] - lo[1]) * rng.uniform()])
                from mdelast.geometry import _point_in_walk

                if not _point_in_walk(p, walk):
                    continue
                got += 1
                for fn in fns:
                    worst = max(worst, float(np.abs(np.asarray(fn(p[0], p[1]))).max()))
        elif man.dim == 1:
            mid = man.id
            mu, lam = material.mu_of(mid), material.lam_of(mid)
            eps = man.epsilon
            u, sig = case.exact_u[mid], case.exact_sigma[mid]
            t = man.tangent
            du = ex.directional(u, t)
            Q = man.frame
            du_local = sp.Matrix([
                Q[0, 0] * du[0] + Q[0, 1] * du[1],
                Q[1, 0] * du[0] + Q[1, 1] * du[1],
            ])
            comp = sp.Matrix([
                (sig[0] - lam / (2 * mu + lam) * sig[0]) / (2 * mu),
                sig[1] / (2 * mu),
            ])
            res_cons = comp - eps * du_local
            jump_T = sp.zeros(2, 1)
            for j in geometry.J_hat[mid]:
                jump_T += case.tractions[j]
            # ambient divergence of the scaled stress: d/ds along the tangent
            dsig = ex.directional(sig, t)
            div_amb = sp.Matrix([
                Q[0, 0] * dsig[0] + Q[1, 0] * dsig[1],
                Q[0, 1] * dsig[0] + Q[1, 1] * dsig[1],
            ]) * eps
            res_mom = div_amb - jump_T - eps**2 * case.f[mid]
            fns = [ex.lambdify(res_cons), ex.lambdify(res_mom)]
            a, b = man.vertices
            for _ in range(npts):
                s = rng.uniform()
                p = a + s * (b - a)
                for fn in fns:
                    worst = max(worst, float(np.abs(np.asarray(fn(p[0], p[1]))).max()))
    for itf in geometry.interfaces:
        if case.tractions is None or itf.id not in case.tractions:
            continue
        lo = geometry.manifold(itf.lower)
        up = geometry.manifold(itf.upper)
        if up.dim != 2:
            continue
        mupj = material.mu_perp_of(itf.id)
        lampj = material.lam_perp_of(itf.id)
        delta = _interface_compliance_sym(
            case.tractions[itf.id], itf.normal, mupj, lampj
        )
        res = case.exact_u[lo.id] - case.exact_u[up.id] - delta
        Texp = case.exact_sigma[up.id] * sp.Matrix([float(itf.normal[0]),
                                                    float(itf.normal[1])])
        res_T = Texp - case.tractions[itf.id]
        fns = [ex.lambdify(res), ex.lambdify(res_T)]
        a, b = lo.vertices
        for _ in range(npts):
            s = rng.uniform()
            p = a + s * (b - a)
            for fn in fns:
                worst = max(worst, float(np.abs(np.asarray(fn(p[0], p[1]))).max()))
    return worst


# ----------------------------------------------------------------------------
# error norms against exact or reference solutions
# ----------------------------------------------------------------------------


def _bulk_sigma_dofmap(bd):
    from mdelast.assembly import _bulk_sigma_dofmap as impl

    return impl(bd)


def _bulk_sigma_values(coeffs, bd, pts):
    """Discrete bulk stress at (nt, nq, 2) points: (nt, nq, 2, 2)."""
    phi = bdm_eval_many(bd, pts)
    dofmap = _bulk_sigma_dofmap(bd)
    c = np.where(dofmap >= 0, coeffs[np.clip(dofmap, 0, None)], 0.0)
    out = np.empty(pts.shape[:2] + (2, 2))
    for r in range(2):
        out[:, :, r, :] = np.einsum("tqdc,td->tqc", phi, c[:, 6 * r:6 * r + 6])
    return out


def error_norms(case: ManufacturedCase, sol: SolutionFields, spaces: SpaceSet) -> dict:
    """Weighted error norms against the exact solution, with dimension splits."""
    geometry = spaces.geometry
    mesh = spaces.mesh
    E = spaces.epsilon_of_sigma_dofs()
    D = divergence_matrix(spaces)
    div_coeff = D @ (E * sol.sigma.coeffs)  # exact U_h representation
    off_u = spaces.offset_u
    off_r = spaces.offset_r

    # Sigma-norm contributions split by the dimension of the carrying
    # manifold; interface traces count toward the lower manifold they sit on
    s2_omega_d = {0: 0.0, 1: 0.0, 2: 0.0}
    s2_gamma_d = {0: 0.0, 1: 0.0, 2: 0.0}
    s2_div_d = {0: 0.0, 1: 0.0, 2: 0.0}
    u2 = 0.0
    r2 = 0.0

    for bd in spaces.bulk.values():
        mid = bd.mid
        coords = mesh.tri_coords(bd.tri_gidx)
        pts, wts = tri_points(coords, degree=8)
        sig_h = _bulk_sigma_values(sol.sigma.coeffs, bd, pts)
        flat = pts.reshape(-1, 2)
        sig_ex = case.sigma_at(mid, flat[:, 0], flat[:, 1]).reshape(
            2, 2, pts.shape[0], pts.shape[1]
        ).transpose(2, 3, 0, 1)
        diff = sig_ex - sig_h
        s2_omega_d[2] += float(np.einsum("tq,tqab->", wts, diff**2))
        f_ex = case.f_at(mid, flat[:, 0], flat[:, 1]).reshape(
            2, pts.shape[0], pts.shape[1]
        ).transpose(1, 2, 0)
        dvals = div_coeff[bd.u_dof - off_u]  # (nt, 2) constants
        ddiff = f_ex - dvals[:, None, :]  # epsilon = epsilon_max = 1 on bulk
        s2_div_d[2] += float(np.einsum("tq,tqa->", wts, ddiff**2))
        u_ex = case.u_at(mid, flat[:, 0], flat[:, 1]).reshape(
            2, pts.shape[0], pts.shape[1]
        ).transpose(1, 2, 0)
        u_h = sol.u.u_bulk(mid)
        udiff = u_ex - u_h[:, None, :]
        u2 += float(np.einsum("tq,tqa->", wts, udiff**2))
        r_fn = ex.lambdify(case.exact_r[mid])
        r_ex = np.asarray(r_fn(flat[:, 0], flat[:, 1]), dtype=float).reshape(
            pts.shape[0], pts.shape[1]
        )
        r_h = sol.r.r_bulk(mid)
        eps_m = geometry.manifold(mid).epsilon
        r2 += eps_m**2 * float(np.einsum("tq,tq->", wts, (r_ex - r_h[:, None])**2))

    gx, gw = gauss01(6)
    for sd in spaces.seg.values():
        mid = sd.mid
        emax = epsilon_max(geometry, mid)
        eps = sd.epsilon
        for k in range(len(sd.cells)):
            nl = sd.cell_nodes[k]
            pa, pb = sd.node_coords[nl[0]], sd.node_coords[nl[1]]
            pp = pa[None, :] + gx[:, None] * (pb - pa)[None, :]
            L = sd.lengths[k]
            sig_h = sol.sigma.stress_seg(mid, k, gx)  # (q, 2) local
            sig_ex = case.sigma_at(mid, pp[:, 0], pp[:, 1]).T
            s2_omega_d[1] += L * float(gw @ np.sum((sig_ex - sig_h)**2, axis=1))
            # momentum residual: the divergence equals eps^2 f exactly for
            # the true solution
            f_ex = case.f_at(mid, pp[:, 0], pp[:, 1]).T
            dof = sd.u_dof[k] - off_u
            dv = div_coeff[dof]  # (2, nprof)
            dh = np.outer(np.ones_like(gx), dv[:, 0])
            if dv.shape[1] == 2:
                dh += np.outer(gx - 0.5, dv[:, 1])
            s2_div_d[1] += (L / emax**2) * float(
                gw @ np.sum((eps**2 * f_ex - dh)**2, axis=1)
            )
            u_ex = case.u_at(mid, pp[:, 0], pp[:, 1]).T
            u_h = sol.u.u_seg(mid, k, gx)
            u2 += emax**2 * L * float(gw @ np.sum((u_ex - u_h)**2, axis=1))

    for pd in spaces.pts.values():
        emax = epsilon_max(geometry, pd.mid)
        u_ex = case.u_at(pd.mid, pd.coords[0], pd.coords[1])[:, 0] \
            if pd.mid in case.exact_u else None
        if u_ex is not None:
            u_h = sol.u.u_point(pd.mid)
            u2 += emax**2 * float(np.sum((u_ex - u_h)**2))
            f_ex = case.f_at(pd.mid, pd.coords[0], pd.coords[1])[:, 0]
            dv = div_coeff[pd.u_dof - off_u]
            s2_div_d[0] += float(np.sum((pd.epsilon**2 * f_ex - dv)**2)) / emax**2

    for itf in geometry.interfaces:
        if case.tractions is None or itf.id not in case.tractions:
            continue
        sd = spaces.seg[itf.lower]
        T_h = sol.sigma.trace(itf.id, gx)  # (ncell, q, 2)
        for k in range(len(sd.cells)):
            nl = sd.cell_nodes[k]
            pa, pb = sd.node_coords[nl[0]], sd.node_coords[nl[1]]
            pp = pa[None, :] + gx[:, None] * (pb - pa)[None, :]
            T_ex = case.traction_at(itf.id, pp[:, 0], pp[:, 1]).T
            s2_gamma_d[1] += sd.lengths[k] * float(
                gw @ np.sum((T_ex - T_h[k])**2, axis=1)
            )

    split = {
        d: s2_omega_d[d] + s2_gamma_d[d] + s2_div_d[d] for d in (0, 1, 2)
    }
    err_sigma = math.sqrt(sum(split.values()))
    return {
        "err_sigma": err_sigma,
        "err_u": math.sqrt(u2),
        "err_r": math.sqrt(r2),
        "err_sigma_d1": math.sqrt(split[1]),
        "err_sigma_d2": math.sqrt(split[2]),
    }


# ----------------------------------------------------------------------------
# reference (overkill) comparison for cases without closed forms
# ----------------------------------------------------------------------------


def _ancestor_map(fine: MixedMesh, coarse: MixedMesh) -> np.ndarray:
    """Map each fine triangle to its ancestor in the coarse mesh."""
    chain = []
    m = fine
    while m is not coarse:
        if m.parent is None:
            raise ValueError("meshes are not nested")
        chain.append(m.tri_parent)
        m = m.parent
    idx = np.arange(len(fine.tris))
    for par in chain:
        idx = par[idx]
    return idx


def _ancestor_map_cells(fine: MixedMesh, coarse: MixedMesh) -> np.ndarray:
    chain = []
    m = fine
    while m is not coarse:
        chain.append(m.cell1_parent)
        m = m.parent
    idx = np.arange(len(fine.cells1))
    for par in chain:
        idx = par[idx]
    return idx


def reference_error(
    sol_c: SolutionFields, spaces_c: SpaceSet,
    sol_f: SolutionFields, spaces_f: SpaceSet,
) -> dict:
    """Weighted norm of the difference between nested coarse/fine solutions.

    Quadrature runs on the fine mesh; the coarse fields are evaluated through
    the refinement ancestry, so every integrand is smooth per fine cell.
    """
    geometry = spaces_f.geometry
    mesh_f = spaces_f.mesh
    mesh_c = spaces_c.mesh
    anc_t = _ancestor_map(mesh_f, mesh_c)
    anc_c = _ancestor_map_cells(mesh_f, mesh_c)

    E_f = spaces_f.epsilon_of_sigma_dofs()
    E_c = spaces_c.epsilon_of_sigma_dofs()
    div_f = divergence_matrix(spaces_f) @ (E_f * sol_f.sigma.coeffs)
    div_c = divergence_matrix(spaces_c) @ (E_c * sol_c.sigma.coeffs)

    s2 = {0: 0.0, 1: 0.0, 2: 0.0}
    s2_div = {0: 0.0, 1: 0.0, 2: 0.0}
    s2_gam = {0: 0.0, 1: 0.0, 2: 0.0}
    u2 = 0.0
    r2 = 0.0

    for bd_f in spaces_f.bulk.values():
        mid = bd_f.mid
        bd_c = spaces_c.bulk[mid]
        tl_of_c = {int(g): k for k, g in enumerate(bd_c.tri_gidx)}
        coords = mesh_f.tri_coords(bd_f.tri_gidx)
        pts, wts = tri_points(coords, degree=4)
        sig_f = _bulk_sigma_values(sol_f.sigma.coeffs, bd_f, pts)
        u_f = sol_f.u.u_bulk(mid)
        r_f = sol_f.r.r_bulk(mid)
        dv_f = div_f[bd_f.u_dof - spaces_f.offset_u]
        u_c_all = sol_c.u.u_bulk(mid)
        r_c_all = sol_c.r.r_bulk(mid)
        dv_c_all = div_c[bd_c.u_dof - spaces_c.offset_u]
        for tlf, gtf in enumerate(bd_f.tri_gidx):
            tlc = tl_of_c[int(anc_t[gtf])]
            sig_c = sol_c.sigma.stress_bulk(mid, tlc, pts[tlf])
            d = sig_f[tlf] - sig_c
            s2[2] += float(wts[tlf] @ np.sum(d**2, axis=(1, 2)))
            du = u_f[tlf] - u_c_all[tlc]
            u2 += float(wts[tlf].sum() * np.sum(du**2))
            dr = r_f[tlf] - r_c_all[tlc]
            r2 += float(wts[tlf].sum()) * dr**2
            dd = dv_f[tlf] - dv_c_all[tlc]
            s2_div[2] += float(wts[tlf].sum() * np.sum(dd**2))

    gx, gw = gauss01(4)
    for sd_f in spaces_f.seg.values():
        mid = sd_f.mid
        sd_c = spaces_c.seg[mid]
        emax = epsilon_max(geometry, mid)
        cell_of_c = {int(g): k for k, g in enumerate(sd_c.cells)}
        for kf, cf in enumerate(sd_f.cells):
            kc = cell_of_c[int(anc_c[cf])]
            L = sd_f.lengths[kf]
            nl = sd_f.cell_nodes[kf]
            pa, pb = sd_f.node_coords[nl[0]], sd_f.node_coords[nl[1]]
            pp = pa[None, :] + gx[:, None] * (pb - pa)[None, :]
            s_c = (sd_c.node_s[sd_c.cell_nodes[kc][0]],
                   sd_c.node_s[sd_c.cell_nodes[kc][1]])
            s_f = (pp - geometry.manifold(mid).vertices[0]) @ geometry.manifold(mid).tangent
            xi_c = (s_f - s_c[0]) / (s_c[1] - s_c[0])
            sig_d = sol_f.sigma.stress_seg(mid, kf, gx) - sol_c.sigma.stress_seg(mid, kc, xi_c)
            s2[1] += L * float(gw @ np.sum(sig_d**2, axis=1))
            u_d = sol_f.u.u_seg(mid, kf, gx) - sol_c.u.u_seg(mid, kc, xi_c)
            u2 += emax**2 * L * float(gw @ np.sum(u_d**2, axis=1))
            dvf = div_f[sd_f.u_dof[kf] - spaces_f.offset_u]
            dvc = div_c[sd_c.u_dof[kc] - spaces_c.offset_u]
            dh_f = np.outer(np.ones_like(gx), dvf[:, 0])
            if dvf.shape[1] == 2:
                dh_f += np.outer(gx - 0.5, dvf[:, 1])
            dh_c = np.outer(np.ones_like(gx), dvc[:, 0])
            if dvc.shape[1] == 2:
                dh_c += np.outer(xi_c - 0.5, dvc[:, 1])
            s2_div[1] += (L / emax**2) * float(gw @ np.sum((dh_f - dh_c)**2, axis=1))
            # interface traction differences on both sides
            for j in geometry.J_hat[mid]:
                T_f = sol_f.sigma.trace(j, gx)[kf]
                T_c = sol_c.sigma.trace(j, xi_c)[kc]
                if T_c.shape[0] != len(gx):
                    T_c = np.repeat(T_c, len(gx), axis=0)
                s2_gam[1] += L * float(gw @ np.sum((T_f - T_c)**2, axis=1))

    for pd_f in spaces_f.pts.values():
        emax = epsilon_max(geometry, pd_f.mid)
        du = sol_f.u.u_point(pd_f.mid) - sol_c.u.u_point(pd_f.mid)
        u2 += emax**2 * float(np.sum(du**2))
        dv = div_f[pd_f.u_dof - spaces_f.offset_u] - div_c[
            spaces_c.pts[pd_f.mid].u_dof - spaces_c.offset_u
        ]
        s2_div[0] += float(np.sum(dv**2)) / emax**2
        one = np.array([0.0])
        for j in geometry.J_hat[pd_f.mid]:
            dT = sol_f.sigma.trace(j, one)[0, 0] - sol_c.sigma.trace(j, one)[0, 0]
            s2_gam[0] += float(np.sum(dT**2))

    split = {d: s2[d] + s2_gam[d] + s2_div[d] for d in (0, 1, 2)}
    return {
        "err_sigma": math.sqrt(sum(split.values())),
        "err_u": math.sqrt(u2),
        "err_r": math.sqrt(r2),
        "err_sigma_d1": math.sqrt(split[1]),
        "err_sigma_d2": math.sqrt(split[2]),
    }


# ----------------------------------------------------------------------------
# study drivers
# ----------------------------------------------------------------------------


def convergence_study(
    case: ManufacturedCase,
    family: FamilyChoice,
    levels: int,
    h0: float = 0.25,
    extra_reference: int = 2,
) -> dict:
    """Solve on a uniform refinement ladder and fit convergence rates.

    Returns rows (level, h, errors, incremental rates) plus least-squares
    rates over the last three levels.  Cases without a closed form are
    compared against an overkill reference two refinements past the finest
    level.
    """
    if levels < 3:
        raise ValueError("a rate needs at least 3 levels")
    if case.has_exact:
        gate = strong_form_residual(case)
        if gate > 1e-10:
            raise ValueError(
                f"{case.id}: exact fields violate the strong system "
                f"(residual {gate:.3e}); refusing to measure rates"
            )
    meshes = [build_mesh(case.geometry, h0)]
    total = levels + (extra_reference if not case.has_exact else 0)
    for _ in range(total - 1):
        meshes.append(refine(meshes[-1]))

    sols = []
    spaces_list = []
    f_call = case.f_callables()
    g_call = case.g_callables()
    for lvl in range(levels):
        spaces = build_spaces(meshes[lvl], family)
        system = assemble_system(meshes[lvl], spaces, case.material,
                                 f=f_call, g_u=g_call)
        sol = solve(system)
        sols.append(sol)
        spaces_list.append(spaces)

    if case.has_exact:
        errs = [error_norms(case, sols[lvl], spaces_list[lvl]) for lvl in range(levels)]
    else:
        spaces_ref = build_spaces(meshes[-1], family)
        system = assemble_system(meshes[-1], spaces_ref, case.material,
                                 f=f_call, g_u=g_call)
        sol_ref = solve(system)
        errs = [
            reference_error(sols[lvl], spaces_list[lvl], sol_ref, spaces_ref)
            for lvl in range(levels)
        ]

    rows = []
    for lvl in range(levels):
        row = {"level": lvl, "h": meshes[lvl].h}
        row.update(errs[lvl])
        for key in ("sigma", "u", "r"):
            if lvl == 0:
                row[f"rate_{key}"] = float("nan")
            else:
                e0, e1 = errs[lvl - 1][f"err_{key}"], errs[lvl][f"err_{key}"]
                row[f"rate_{key}"] = (
                    math.log(e0 / e1) / math.log(2.0) if e1 > 0 and e0 > 0 else float("inf")
                )
        rows.append(row)

    rates = {}
    for key in ("sigma", "u", "r", "sigma_d1", "sigma_d2"):
        pts = [(row["h"], row[f"err_{key}"]) for row in rows[-3:]]
        pts = [(h, e) for h, e in pts if e > 0]
        if len(pts) >= 2:
            lh = np.log([p[0] for p in pts])
            le = np.log([p[1] for p in pts])
            rates[key] = float(np.polyfit(lh, le, 1)[0])
        else:
            rates[key] = float("inf")
    return {"rows": rows, "rates": rates, "case": case.id,
            "family": family.variant}


def write_rate_csv(study: dict, path: str):
    cols = ["level", "h", "err_sigma", "err_u", "err_r",
            "rate_sigma", "rate_u", "rate_r", "err_sigma_d1", "err_sigma_d2"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in study["rows"]:
            writer.writerow([row[c] for c in cols])


def conservation_check(sol: SolutionFields, f, geometry, spaces: SpaceSet) -> float:
    """Largest per-cell residual of the local momentum balance, relative.

    Computes max over cells of |integral(div eps sigma_h - eps^2 Pi f)| using
    the same projection quadrature as the assembled right side, normalized by
    the norm of the squared-epsilon body force (absolute when f = 0).
    """
    E = spaces.epsilon_of_sigma_dofs()
    D = divergence_matrix(spaces)
    dv = D @ (E * sol.sigma.coeffs)
    if f is None:
        proj = np.zeros(spaces.n_u)
    else:
        proj = project_u(f, spaces)
    eps_u = spaces.epsilon_of_u_dofs()
    diff = dv - eps_u**2 * proj
    Mu = u_mass_matrix(spaces)
    cellint = np.abs(Mu @ diff)
    # the profile basis is orthogonal; the plain cell integral is the
    # zeroth-profile row, but all rows must vanish for local conservation
    worst = float(cellint.max()) if len(cellint) else 0.0
    if f is None:
        return worst
    fnorm = math.sqrt(float((eps_u**2 * proj) @ (Mu @ (eps_u**2 * proj))))
    return worst / fnorm if fnorm > 0 else worst


def weak_symmetry_check(sol: SolutionFields, spaces: SpaceSet) -> float:
    """Largest rotation-test residual of the asymmetry constraint."""
    from mdelast.assembly import skw_matrix
    import scipy.sparse as sps

    E = sps.diags(spaces.epsilon_of_sigma_dofs())
    Bs = skw_matrix(spaces) @ E
    vals = Bs @ sol.sigma.coeffs
    return float(np.abs(vals).max()) if len(vals) else 0.0


def complex_check(spaces: SpaceSet, trials: int = 100, seed: int = 11) -> float:
    """max over random potentials of ||div curl w|| / ||w||."""
    from mdelast.assembly import w_mass_matrix

    D = divergence_matrix(spaces)
    C = curl_matrix(spaces)
    DC = (D @ C).tocsr()
    Mu = u_mass_matrix(spaces)
    Mw = w_mass_matrix(spaces)
    rng = LCG(seed)
    worst = 0.0
    for _ in range(trials):
        w = rng.vector(spaces.n_w)
        num = DC @ w
        nn = math.sqrt(float(num @ (Mu @ num)))
        dd = math.sqrt(float(w @ (Mw @ w)))
        worst = max(worst, nn / dd)
    return worst


def infsup_estimate(
    geometry: MixedDimGeometry,
    family: FamilyChoice,
    levels: int = 3,
    epsilons: list | None = None,
    h0: float = 0.5,
    max_dofs: int = 6000,
) -> list[dict]:
    """Smallest generalized singular value of b in the weighted norms.

    For each (level, epsilon) the constant is the square root of the smallest
    eigenvalue of B N_sigma^-1 B^T against the multiplier norm.  Dense desk-
    scale eigen-solve; oversized systems are refused with advice.
    """
    if levels < 2:
        raise ValueError("need at least 2 levels")
    eps_list = list(epsilons) if epsilons is not None else [None]
    rows = []
    for eps in eps_list:
        geom = geometry if eps is None else geometry_with_epsilon(geometry, eps)
        mesh = build_mesh(geom, h0)
        for lvl in range(levels):
            if lvl > 0:
                mesh = refine(mesh)
            spaces = build_spaces(mesh, family)
            if spaces.total_dim > max_dofs:
                raise ValueError(
                    f"{spaces.total_dim} DOFs exceed the dense eigen-solve "
                    f"budget {max_dofs}; use a coarser mesh"
                )
            beta = _infsup_constant(spaces)
            rows.append({
                "level": lvl, "h": mesh.h,
                "epsilon": eps if eps is not None else float("nan"),
                "constant": beta, "n_dofs": spaces.total_dim,
            })
    return rows


def _infsup_constant(spaces: SpaceSet) -> float:
    from mdelast.assembly import assemble_b

    mats = norm_matrices(spaces)
    B_div, B_skw = assemble_b(spaces.mesh, spaces)
    import scipy.sparse as sps

    B = sps.vstack([B_div, B_skw]).toarray()
    Ns = mats["N_sigma"].toarray()
    Nm = np.zeros((spaces.n_u + spaces.n_r,) * 2)
    Nm[: spaces.n_u, : spaces.n_u] = mats["N_u"].toarray()
    Nm[spaces.n_u:, spaces.n_u:] = mats["N_r"].toarray()
    Xs = sla.cho_solve(sla.cho_factor(Ns), B.T)
    S = B @ Xs
    S = 0.5 * (S + S.T)
    vals = sla.eigh(S, Nm, eigvals_only=True)
    lam_min = float(vals[0])
    return math.sqrt(max(lam_min, 0.0))


def geometry_with_epsilon(geometry: MixedDimGeometry, eps: float) -> MixedDimGeometry:
    """Copy of a geometry with inclusion epsilons replaced.

    Segments get ``eps``; junction points get ``eps**2`` to keep the
    cross-sectional relation and the upper bound by adjacent values.
    """
    manifolds = []
    for m in geometry.manifolds:
        if m.dim == geometry.ambient_dim:
            manifolds.append(m)
        else:
            new_eps = eps if m.dim == 1 else eps**2
            manifolds.append(Manifold(
                id=m.id, dim=m.dim, vertices=m.vertices,
                epsilon=new_eps, boundary_tags=m.boundary_tags,
            ))
    return MixedDimGeometry(
        manifolds=manifolds, interfaces=geometry.interfaces,
        ambient_dim=geometry.ambient_dim, polygon=geometry.polygon,
        boundary_types=geometry.boundary_types,
        boundary_values=geometry.boundary_values,
        epsilon_max_factor=geometry.epsilon_max_factor,
        gamma_factor=geometry.gamma_factor,
    )


# ----------------------------------------------------------------------------
# discrete space conditions
# ----------------------------------------------------------------------------


def condition_s2_residual(spaces: SpaceSet) -> dict:
    """Divergence containment and interface trace equality of the stress space.

    Containment is checked pointwise: the divergence of every stress basis
    function (and every interface normal trace) must coincide with its
    displacement-space representation at quadrature points.  Equality of the
    traces with the lower displacement space is a rank condition on the
    facet trace matrix.
    """
    mesh = spaces.mesh
    geometry = spaces.geometry
    D = divergence_matrix(spaces).tocsc()
    worst_div = 0.0
    gx, _gw = gauss01(4)

    from mdelast.elements import bdm_eval, seg_shape_deriv

    gq, gqw = gauss01(6)
    for bd in spaces.bulk.values():
        off = spaces.offset_u
        for tl in range(len(bd.tri_gidx)):
            # independent oracle: boundary flux of each basis field equals
            # area times the represented divergence (Gauss theorem)
            flux = np.zeros(6)
            for le in range(3):
                rec = bd.edges[bd.tri_edges[tl, le]]
                pts = mesh.vertices[rec.lo][None, :] + gq[:, None] * (
                    mesh.vertices[rec.hi] - mesh.vertices[rec.lo]
                )[None, :]
                phi = bdm_eval(bd, tl, pts)  # (q, 6, 2)
                s_out = 1.0 if float(
                    rec.n_e @ (rec.midpoint - bd.centers[tl])
                ) > 0 else -1.0
                flux += s_out * rec.length * (gqw @ (phi @ rec.n_e))
            area = bd.areas[tl]
            for r in range(2):
                urow = bd.u_dof[tl, r] - off
                for le in range(3):
                    ei = bd.tri_edges[tl, le]
                    for m in range(2):
                        dof = bd.sigma_dof[ei, r, m]
                        if dof < 0:
                            continue
                        rep = D[urow, dof]
                        worst_div = max(
                            worst_div, abs(flux[2 * le + m] - area * rep) / area
                        )

    for sd in spaces.seg.values():
        Q = sd.frame
        off = spaces.offset_u
        dshp = seg_shape_deriv(spaces.family, gx)  # (q, nn)
        for k in range(len(sd.cells)):
            L = sd.lengths[k]
            nl = sd.cell_nodes[k]
            for nn, node in enumerate(nl):
                for lr in range(2):
                    dof = sd.sigma_dof[node, lr]
                    if dof < 0:
                        continue
                    dval = dshp[:, nn] / L  # d/ds of this shape
                    for comp in range(2):
                        target = Q[lr, comp] * dval
                        prof0 = D[sd.u_dof[k, comp, 0] - off, dof]
                        rep = np.full_like(gx, prof0)
                        if sd.u_dof.shape[2] == 2:
                            rep = rep + D[sd.u_dof[k, comp, 1] - off, dof] * (gx - 0.5)
                        worst_div = max(worst_div, float(np.abs(target - rep).max()))

    # trace equality: the facet traces of the upper space span the lower one
    worst_rank = 0.0
    trace_ok = True
    for itf in geometry.interfaces:
        tr = mesh.trace[itf.id]
        lo = geometry.manifold(itf.lower)
        if tr["kind"] == "side":
            sd = spaces.seg[itf.lower]
            bd = spaces.bulk[itf.upper]
            tl_of = {int(g): kk for kk, g in enumerate(bd.tri_gidx)}
            nprof = sd.u_dof.shape[2]
            for k in range(len(sd.cells)):
                tl = tl_of[int(tr["tri"][k])]
                ei = bd.tri_edges[tl, int(tr["local_edge"][k])]
                avail = sum(
                    1 for m in range(2) if bd.sigma_dof[ei, 0, m] >= 0
                )
                if avail < nprof:
                    trace_ok = False
        else:
            sd = spaces.seg[itf.upper]
            node = 0 if tr["tsign"] < 0 else len(sd.cells)
            if np.any(sd.sigma_dof[node] < 0):
                trace_ok = False
    return {
        "div_residual": worst_div,
        "trace_spans": trace_ok,
        "rank_defect": worst_rank,
        "ok": worst_div <= 1e-12 and trace_ok,
    }


def condition_s3a_residual(spaces: SpaceSet) -> float:
    """Pointwise exactness of the curl representation in the stress space.

    Evaluates the curl of every local potential shape at quadrature points
    and compares with the stress-basis expansion given by the curl matrix.
    """
    from mdelast.elements import (
        bary_gradients,
        bdm_eval,
        w_shape,
        w_shape_grad,
        seg_shape,
    )
    from mdelast.quadrature import tri_rule

    mesh = spaces.mesh
    geometry = spaces.geometry
    C = curl_matrix(spaces).tocsc()
    worst = 0.0
    bary, _bw = tri_rule(4)
    shp = w_shape(bary)  # (nq, 6)

    for bd in spaces.bulk.values():
        for tl in range(len(bd.tri_gidx)):
            coords = mesh.vertices[mesh.tris[bd.tri_gidx[tl]]]
            bg = bary_gradients(coords)
            grads = w_shape_grad(bg, bary)  # (nq, 6, 2)
            pts = bary @ coords
            phi = bdm_eval(bd, tl, pts)  # (nq, 6, 2)
            sdof = np.empty(12, dtype=int)
            for r in range(2):
                for le in range(3):
                    ei = bd.tri_edges[tl, le]
                    for m in range(2):
                        sdof[6 * r + 2 * le + m] = bd.sigma_dof[ei, r, m]
            wdof = np.empty(12, dtype=int)
            for c in range(3):
                wdof[2 * c:2 * c + 2] = bd.w_vertex_dof[bd.w_class[tl, c]]
            for le in range(3):
                wdof[6 + 2 * le:8 + 2 * le] = bd.w_bubble_dof[bd.tri_edges[tl, le]]
            Cloc = np.zeros((12, 12))
            for a in range(12):
                if sdof[a] < 0:
                    continue
                for b in range(12):
                    if wdof[b] >= 0:
                        Cloc[a, b] = C[sdof[a], wdof[b]]
            for b in range(12):
                if wdof[b] < 0:
                    continue
                sh, comp = divmod(b, 2) if b < 6 else (3 + (b - 6) // 2, (b - 6) % 2)
                # curl tensor: row `comp` is the rotated gradient of shape sh
                curl = np.zeros((len(bary), 2, 2))
                curl[:, comp, 0] = -grads[:, sh, 1]
                curl[:, comp, 1] = grads[:, sh, 0]
                rep = np.zeros_like(curl)
                for a in range(12):
                    if Cloc[a, b] == 0.0 or sdof[a] < 0:
                        continue
                    r, d6 = divmod(a, 6)
                    rep[:, r, :] += Cloc[a, b] * phi[:, d6, :]
                worst = max(worst, float(np.abs(curl - rep).max()))

    gx, _gw = gauss01(4)
    for sd in spaces.seg.values():
        man = geometry.manifold(sd.mid)
        t, Q = man.tangent, sd.frame
        sshp = seg_shape(spaces.family, gx)  # (q, nn)
        tl_of = {}
        for j in geometry.J_hat[sd.mid]:
            bd = spaces.bulk[geometry.interface(j).upper]
            tl_of[j] = {int(g): kk for kk, g in enumerate(bd.tri_gidx)}
        for k in range(len(sd.cells)):
            nl = sd.cell_nodes[k]
            sdof = sd.sigma_dof[nl]  # (nn, 2)
            # exact curl at the points: sum over sides of -s_j Q w_hat
            curl = np.zeros((len(gx), 2))
            wcols = {}
            for j in geometry.J_hat[sd.mid]:
                itf = geometry.interface(j)
                tr = mesh.trace[j]
                bd = spaces.bulk[itf.upper]
                n = itf.normal
                s_j = float(-n[1] * t[0] + n[0] * t[1])
                tl = tl_of[j][int(tr["tri"][k])]
                ei = bd.tri_edges[tl, int(tr["local_edge"][k])]
                va = int(mesh.cells1[sd.cells[k]][0])
                vb = int(mesh.cells1[sd.cells[k]][1])

                def cls(vid):
                    tt = mesh.tris[bd.tri_gidx[tl]]
                    for c in range(3):
                        if int(tt[c]) == vid:
                            return bd.w_class[tl, c]
                    raise RuntimeError

                for comp in range(2):
                    wa = bd.w_vertex_dof[cls(va), comp]
                    wb = bd.w_vertex_dof[cls(vb), comp]
                    wbub = bd.w_bubble_dof[ei, comp]
                    for wdof, prof in ((wa, 1 - gx), (wb, gx),
                                       (wbub, 4 * gx * (1 - gx))):
                        if wdof < 0:
                            continue
                        wcols.setdefault(wdof, np.zeros((len(gx), 2)))
                        wcols[wdof] += np.outer(-s_j * prof, Q[:, comp])
            for wdof, curlvals in sorted(wcols.items()):
                rep = np.zeros_like(curlvals)
                for nn in range(len(nl)):
                    for lr in range(2):
                        dof = sdof[nn, lr]
                        if dof < 0:
                            continue
                        rep[:, lr] += C[dof, wdof] * sshp[:, nn]
                worst = max(worst, float(np.abs(curlvals - rep).max()))
    return worst
