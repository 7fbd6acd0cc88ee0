"""Assembly of the saddle-point system for the discrete weak form.

The stress block applies the compliance inner product on manifolds and
interfaces; the constraint block pairs the (exactly represented) weighted
divergence with displacements and the asymmetry with rotations.  All epsilon
weights enter here: operators themselves are geometry-pure.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from mdelast import expressions as ex
from mdelast.elements import FamilyChoice, SpaceSet, bdm_eval_many, seg_shape
from mdelast.geometry import MixedDimGeometry
from mdelast.mdops import divergence_matrix
from mdelast.quadrature import gauss01, tri_points

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class MaterialLaw:
    """Lame parameters per manifold and interface.

    ``mu``/``lam`` may be scalars or dicts keyed by manifold id; likewise
    ``mu_perp``/``lam_perp`` keyed by interface id.
    """

    mu: object = 1.0
    lam: object = 1.0
    mu_perp: object = 1.0
    lam_perp: object = 1.0

    def mu_of(self, mid: int) -> float:
        return float(self.mu[mid] if isinstance(self.mu, dict) else self.mu)

    def lam_of(self, mid: int) -> float:
        return float(self.lam[mid] if isinstance(self.lam, dict) else self.lam)

    def mu_perp_of(self, j: int) -> float:
        return float(self.mu_perp[j] if isinstance(self.mu_perp, dict) else self.mu_perp)

    def lam_perp_of(self, j: int) -> float:
        return float(self.lam_perp[j] if isinstance(self.lam_perp, dict) else self.lam_perp)

    def check(self, geometry: MixedDimGeometry):
        for m in geometry.manifolds:
            if m.dim == 0:
                continue
            mu, lam = self.mu_of(m.id), self.lam_of(m.id)
            if mu <= 0 or 2 * mu + m.dim * lam <= 0:
                raise ValueError(
                    f"manifold {m.id}: need mu > 0 and 2 mu + {m.dim} lambda > 0"
                )
        for itf in geometry.interfaces:
            mp, lp = self.mu_perp_of(itf.id), self.lam_perp_of(itf.id)
            if mp <= 0 or 2 * mp + lp <= 0:
                raise ValueError(
                    f"interface {itf.id}: need mu_perp > 0 and 2 mu_perp + lambda_perp > 0"
                )

    def eigen_range(self, geometry: MixedDimGeometry) -> tuple[float, float]:
        """Extreme eigenvalues of the compliance over manifolds and interfaces."""
        vals = []
        for m in geometry.manifolds:
            if m.dim == 0:
                continue
            mu, lam = self.mu_of(m.id), self.lam_of(m.id)
            vals += [1.0 / (2 * mu), 1.0 / (2 * mu + m.dim * lam)]
        for itf in geometry.interfaces:
            mp, lp = self.mu_perp_of(itf.id), self.lam_perp_of(itf.id)
            vals += [1.0 / (2 * mp), 1.0 / (2 * mp + lp)]
        return min(vals), max(vals)


def compliance_apply(material: MaterialLaw, sigma_val: np.ndarray, manifold) -> np.ndarray:
    """Stress-to-strain map on a manifold: (2 mu)^-1 (sigma - c tr(sigma) [I; 0])."""
    d = manifold.dim
    if not 1 <= d <= 2:
        raise ValueError("compliance is defined on manifolds of dimension 1..n")
    sigma_val = np.asarray(sigma_val, dtype=float).reshape(2, d)
    mu = material.mu_of(manifold.id)
    lam = material.lam_of(manifold.id)
    tr = float(np.trace(sigma_val[:d, :]))
    eye = np.zeros((2, d))
    eye[:d, :d] = np.eye(d)
    return (sigma_val - lam / (2 * mu + d * lam) * tr * eye) / (2 * mu)


def interface_compliance(
    material: MaterialLaw, traction: np.ndarray, normal: np.ndarray, j: int
) -> np.ndarray:
    """Traction-to-displacement-jump map on an interface."""
    t = np.asarray(traction, dtype=float)
    n = np.asarray(normal, dtype=float)
    mp = material.mu_perp_of(j)
    lp = material.lam_perp_of(j)
    return (t - lp / (2 * mp + lp) * float(t @ n) * n) / (2 * mp)


# ----------------------------------------------------------------------------
# matrices
# ----------------------------------------------------------------------------


def _bulk_sigma_dofmap(bd) -> np.ndarray:
    """(nt, 12) global stress ids per triangle, -1 where removed.

    Local index = 6 * row + 2 * local_edge + moment.
    """
    nt = len(bd.tri_gidx)
    out = -np.ones((nt, 12), dtype=int)
    for tl in range(nt):
        for le in range(3):
            ei = bd.tri_edges[tl, le]
            for r in range(2):
                for m in range(2):
                    out[tl, 6 * r + 2 * le + m] = bd.sigma_dof[ei, r, m]
    return out


def _scatter(rows_local, cols_local, block, rowmap, colmap, rows, cols, vals):
    """Append a dense local block into COO lists, skipping removed dofs."""
    for a in range(block.shape[0]):
        ra = rowmap[rows_local[a]]
        if ra < 0:
            continue
        for b in range(block.shape[1]):
            cb = colmap[cols_local[b]]
            if cb < 0:
                continue
            rows.append(ra)
            cols.append(cb)
            vals.append(block[a, b])


def assemble_a(
    mesh, spaces: SpaceSet, material: MaterialLaw, geometry: MixedDimGeometry = None
) -> sps.csr_matrix:
    """Compliance-weighted stress inner product over manifolds and interfaces."""
    geometry = geometry or spaces.geometry
    material.check(geometry)
    return _stress_form(spaces, material)


def stress_mass_matrix(spaces: SpaceSet) -> sps.csr_matrix:
    """Plain L2(Omega) stress mass (Frobenius), no interface part."""
    return _stress_form(spaces, None, omega_only=True)


def trace_mass_matrix(spaces: SpaceSet) -> sps.csr_matrix:
    """Interface trace mass: sum over interfaces of the traction L2 products."""
    return _stress_form(spaces, None, gamma_only=True)


def _stress_form(spaces, material, omega_only=False, gamma_only=False):
    geometry = spaces.geometry
    mesh = spaces.mesh
    rows, cols, vals = [], [], []

    if not gamma_only:
        for bd in spaces.bulk.values():
            if material is None:
                mu, c = 0.5, 0.0
            else:
                mu = material.mu_of(bd.mid)
                lam = material.lam_of(bd.mid)
                c = lam / (2 * mu + 2 * lam)
            coords = mesh.tri_coords(bd.tri_gidx)
            pts, wts = tri_points(coords, degree=4)
            phi = bdm_eval_many(bd, pts)  # (nt, nq, 6, 2)
            G1 = np.einsum("tq,tqdc,tqec->tde", wts, phi, phi)
            G2 = np.einsum("tq,tqda,tqeb->tdaeb", wts, phi, phi)
            dofmap = _bulk_sigma_dofmap(bd)
            nt = len(bd.tri_gidx)
            loc = np.zeros((nt, 12, 12))
            for r in range(2):
                sl = slice(6 * r, 6 * r + 6)
                loc[:, sl, sl] += G1
            for r in range(2):
                for rp in range(2):
                    loc[:, 6 * r:6 * r + 6, 6 * rp:6 * rp + 6] -= c * G2[:, :, r, :, rp]
            loc /= (2 * mu)
            # mirror the local blocks so the assembled matrix is symmetric
            # to the last bit, not just to rounding
            loc = 0.5 * (loc + loc.transpose(0, 2, 1))
            for tl in range(nt):
                dm = dofmap[tl]
                keep = np.flatnonzero(dm >= 0)
                ix = dm[keep]
                rows.extend(np.repeat(ix, len(ix)))
                cols.extend(np.tile(ix, len(ix)))
                vals.extend(loc[tl][np.ix_(keep, keep)].ravel())

        gx, gw = gauss01(3)
        for sd in spaces.seg.values():
            if material is None:
                mu, c1 = 0.5, 0.0
            else:
                mu = material.mu_of(sd.mid)
                lam = material.lam_of(sd.mid)
                c1 = lam / (2 * mu + lam)
            shp = seg_shape(spaces.family, gx)  # (q, nn)
            M = shp.T @ (gw[:, None] * shp)  # unit-length mass
            M = 0.5 * (M + M.T)
            for k in range(len(sd.cells)):
                Mk = M * sd.lengths[k]
                nl = sd.cell_nodes[k]
                for lr in range(2):
                    fac = (1.0 - (c1 if lr == 0 else 0.0)) / (2 * mu)
                    dofs = sd.sigma_dof[nl, lr]
                    keep = np.flatnonzero(dofs >= 0)
                    ix = dofs[keep]
                    rows.extend(np.repeat(ix, len(ix)))
                    cols.extend(np.tile(ix, len(ix)))
                    vals.extend((fac * Mk[np.ix_(keep, keep)]).ravel())

    if not omega_only:
        tl_of = {bd.mid: {int(g): k for k, g in enumerate(bd.tri_gidx)}
                 for bd in spaces.bulk.values()}
        for itf in geometry.interfaces:
            tr = mesh.trace[itf.id]
            if material is None:
                mp, cp = 0.5, 0.0
            else:
                mp = material.mu_perp_of(itf.id)
                lp = material.lam_perp_of(itf.id)
                cp = lp / (2 * mp + lp)
            if tr["kind"] == "side":
                bd = spaces.bulk[itf.upper]
                n = itf.normal
                G = np.array([1.0, 1.0 / 12.0])
                for p in range(len(tr["tri"])):
                    tl = tl_of[bd.mid][int(tr["tri"][p])]
                    ei = bd.tri_edges[tl, int(tr["local_edge"][p])]
                    L = bd.edges[ei].length
                    for r in range(2):
                        for rp in range(2):
                            for m in range(2):
                                da = bd.sigma_dof[ei, r, m]
                                db = bd.sigma_dof[ei, rp, m]
                                if da < 0 or db < 0:
                                    continue
                                kern = (1.0 if r == rp else 0.0) - cp * n[r] * n[rp]
                                rows.append(da)
                                cols.append(db)
                                vals.append(kern * G[m] * L / (2 * mp))
            else:
                sd = spaces.seg[itf.upper]
                node = 0 if tr["tsign"] < 0 else len(sd.cells)
                for lr in range(2):
                    for lrp in range(2):
                        da = sd.sigma_dof[node, lr]
                        db = sd.sigma_dof[node, lrp]
                        if da < 0 or db < 0:
                            continue
                        kern = (1.0 if lr == lrp else 0.0)
                        kern -= cp * (1.0 if lr == 0 and lrp == 0 else 0.0)
                        rows.append(da)
                        cols.append(db)
                        vals.append(kern / (2 * mp))

    n = spaces.n_sigma
    return sps.csr_matrix((vals, (rows, cols)), shape=(n, n))


def u_mass_matrix(spaces: SpaceSet, weights: np.ndarray | None = None) -> sps.csr_matrix:
    """Displacement mass; optional per-dof weight applied inside the product.

    The segment profile basis {1, xi - 1/2} is orthogonal per cell, and the
    point inner product is the plain dot product, so the mass is diagonal.
    """
    diag = np.zeros(spaces.n_u)
    off = spaces.offset_u
    for bd in spaces.bulk.values():
        for comp in range(2):
            diag[bd.u_dof[:, comp] - off] = bd.areas
    for sd in spaces.seg.values():
        nprof = sd.u_dof.shape[2]
        for k in range(len(sd.cells)):
            L = sd.lengths[k]
            for comp in range(2):
                diag[sd.u_dof[k, comp, 0] - off] = L
                if nprof == 2:
                    diag[sd.u_dof[k, comp, 1] - off] = L / 12.0
    for pd in spaces.pts.values():
        diag[pd.u_dof - off] = 1.0
    if weights is not None:
        diag = diag * weights**2
    return sps.diags(diag).tocsr()


def r_mass_matrix(spaces: SpaceSet, weights: np.ndarray | None = None) -> sps.csr_matrix:
    diag = np.zeros(spaces.n_r)
    off = spaces.offset_r
    for bd in spaces.bulk.values():
        diag[bd.r_dof - off] = bd.areas
    if weights is not None:
        diag = diag * weights**2
    return sps.diags(diag).tocsr()


def w_mass_matrix(spaces: SpaceSet) -> sps.csr_matrix:
    """L2 mass of the curl-potential space (hierarchical quadratic pairs)."""
    from mdelast.elements import bary_gradients, w_shape
    from mdelast.quadrature import tri_rule

    mesh = spaces.mesh
    bary, bw = tri_rule(4)
    shp = w_shape(bary)  # (nq, 6)
    Mref = shp.T @ (bw[:, None] * shp)
    Mref = 0.5 * (Mref + Mref.T)
    rows, cols, vals = [], [], []
    for bd in spaces.bulk.values():
        for tl in range(len(bd.tri_gidx)):
            dofs = np.empty((6, 2), dtype=int)
            for c in range(3):
                dofs[c] = bd.w_vertex_dof[bd.w_class[tl, c]]
            for le in range(3):
                dofs[3 + le] = bd.w_bubble_dof[bd.tri_edges[tl, le]]
            loc = Mref * bd.areas[tl]
            for comp in range(2):
                dd = dofs[:, comp]
                keep = np.flatnonzero(dd >= 0)
                ix = dd[keep]
                rows.extend(np.repeat(ix, len(ix)))
                cols.extend(np.tile(ix, len(ix)))
                vals.extend(loc[np.ix_(keep, keep)].ravel())
    n = spaces.n_w
    return sps.csr_matrix((vals, (rows, cols)), shape=(n, n))


def skw_matrix(spaces: SpaceSet) -> sps.csr_matrix:
    """Rows (skw sigma, s) for the piecewise-constant rotation space."""
    mesh = spaces.mesh
    rows, cols, vals = [], [], []
    off = spaces.offset_r
    for bd in spaces.bulk.values():
        coords = mesh.tri_coords(bd.tri_gidx)
        pts, wts = tri_points(coords, degree=4)
        phi = bdm_eval_many(bd, pts)  # (nt, nq, 6, 2)
        # skw sigma = sigma_12 - sigma_21: row 0 contributes +phi_y, row 1 -phi_x
        s0 = np.einsum("tq,tqd->td", wts, phi[..., 1])
        s1 = -np.einsum("tq,tqd->td", wts, phi[..., 0])
        dofmap = _bulk_sigma_dofmap(bd)
        for tl in range(len(bd.tri_gidx)):
            rrow = bd.r_dof[tl] - off
            for r, s in ((0, s0), (1, s1)):
                for d6 in range(6):
                    dof = dofmap[tl, 6 * r + d6]
                    if dof >= 0:
                        rows.append(rrow)
                        cols.append(dof)
                        vals.append(s[tl, d6])
    return sps.csr_matrix((vals, (rows, cols)), shape=(spaces.n_r, spaces.n_sigma))


def assemble_b(mesh, spaces: SpaceSet, geometry: MixedDimGeometry = None):
    """Constraint rows: weighted divergence against u, asymmetry against r."""
    E = sps.diags(spaces.epsilon_of_sigma_dofs())
    D = divergence_matrix(spaces)
    B_div = (u_mass_matrix(spaces) @ D @ E).tocsr()
    B_skw = (skw_matrix(spaces) @ E).tocsr()
    return B_div, B_skw


@dataclass
class SaddleSystem:
    """Symmetric block system [[A, B^T], [B, 0]] with the weak-form right side."""

    A: sps.csr_matrix
    B_div: sps.csr_matrix
    B_skw: sps.csr_matrix
    rhs: np.ndarray
    spaces: SpaceSet
    material: MaterialLaw

    @property
    def B(self) -> sps.csr_matrix:
        return sps.vstack([self.B_div, self.B_skw]).tocsr()

    def matrix(self) -> sps.csr_matrix:
        B = self.B
        K = sps.bmat([[self.A, B.T], [B, None]], format="csr")
        return K


def assemble_rhs(f, g_u, spaces: SpaceSet, geometry: MixedDimGeometry = None) -> np.ndarray:
    """Right-hand side: boundary displacement work and squared-epsilon body force.

    ``f`` and ``g_u`` are callables (x, y) -> (2,) or dicts keyed by manifold
    id; ``g_u`` may also be a list of per-polygon-edge callables (as parsed
    from the geometry file).  ``None`` means zero.  The boundary functional
    integrates over the displacement part of every manifold boundary,
    including inclusion endpoints that end on the displacement boundary.
    """
    from mdelast.elements import project_u

    geometry = geometry or spaces.geometry
    mesh = spaces.mesh
    rhs = np.zeros(spaces.total_dim)
    per_edge = isinstance(g_u, (list, tuple))

    def resolve(spec, mid):
        if spec is None:
            return None
        return spec[mid] if isinstance(spec, dict) else spec

    gx, gw = gauss01(5)
    for bd in spaces.bulk.values():
        g = None if per_edge else resolve(g_u, bd.mid)
        if g is None and not per_edge:
            continue
        for ei, rec in enumerate(bd.edges):
            if rec.kind != "boundary_u":
                continue
            if per_edge:
                g = g_u[rec.pedge]
            _gt, _le, tl = rec.tris[0]
            s_out = 1.0 if float(rec.n_e @ (rec.midpoint - bd.centers[tl])) > 0 else -1.0
            pts = mesh.vertices[rec.lo][None, :] + gx[:, None] * (
                mesh.vertices[rec.hi] - mesh.vertices[rec.lo]
            )[None, :]
            gv = np.stack([np.asarray(g(p[0], p[1]), dtype=float) for p in pts])
            for r in range(2):
                for m, q in ((0, np.ones_like(gx)), (1, gx - 0.5)):
                    dof = bd.sigma_dof[ei, r, m]
                    if dof >= 0:
                        rhs[dof] += s_out * rec.length * float((gw * q) @ gv[:, r])

    for sd in spaces.seg.values():
        man = geometry.manifold(sd.mid)
        g = None if per_edge else resolve(g_u, sd.mid)
        if g is None and not per_edge:
            continue
        for label, node, tsign in (("a", 0, -1.0), ("b", len(sd.cells), 1.0)):
            if man.boundary_tags.get(label) != "displacement":
                continue
            if per_edge:
                g = g_u[man.boundary_tags[label + "_edge"]]
            p = sd.node_coords[node]
            gval = np.asarray(g(p[0], p[1]), dtype=float)
            gl = sd.frame @ gval
            for lr in range(2):
                dof = sd.sigma_dof[node, lr]
                if dof >= 0:
                    rhs[dof] += sd.epsilon * tsign * gl[lr]

    if f is not None:
        proj = project_u(
            f if callable(f) else {mid: f[mid] for mid in f}, spaces
        )
        eps_u = spaces.epsilon_of_u_dofs()
        Mu = u_mass_matrix(spaces)
        rhs[spaces.offset_u:spaces.offset_u + spaces.n_u] = Mu @ (eps_u**2 * proj)
    return rhs


def assemble_system(
    mesh, spaces: SpaceSet, material: MaterialLaw, f=None, g_u=None
) -> SaddleSystem:
    A = assemble_a(mesh, spaces, material)
    B_div, B_skw = assemble_b(mesh, spaces)
    rhs = assemble_rhs(f, g_u, spaces)
    return SaddleSystem(A=A, B_div=B_div, B_skw=B_skw, rhs=rhs,
                        spaces=spaces, material=material)


# ----------------------------------------------------------------------------
# weighted norm operators
# ----------------------------------------------------------------------------


def norm_matrices(spaces: SpaceSet) -> dict:
    """Gram matrices of the weighted norms on the discrete spaces."""
    geometry = spaces.geometry
    E = sps.diags(spaces.epsilon_of_sigma_dofs())
    D = divergence_matrix(spaces)
    DE = (D @ E).tocsr()
    w_emax = spaces.epsilon_max_of_u_dofs()
    M_sig = stress_mass_matrix(spaces)
    T_gam = trace_mass_matrix(spaces)
    Mu_inv_emax = u_mass_matrix(spaces, weights=1.0 / w_emax)
    N_sigma = (M_sig + T_gam + DE.T @ Mu_inv_emax @ DE).tocsr()
    N_u = u_mass_matrix(spaces, weights=w_emax)
    eps_r = np.zeros(spaces.n_r)
    for bd in spaces.bulk.values():
        eps_r[bd.r_dof - spaces.offset_r] = geometry.manifold(bd.mid).epsilon
    N_r = r_mass_matrix(spaces, weights=eps_r)
    return {
        "E": E, "D": D, "DE": DE, "M_sigma": M_sig, "T_gamma": T_gam,
        "Mu_inv_emax": Mu_inv_emax, "N_sigma": N_sigma, "N_u": N_u, "N_r": N_r,
        "M_u": u_mass_matrix(spaces), "M_r": r_mass_matrix(spaces),
    }


# ----------------------------------------------------------------------------
# configuration file
# ----------------------------------------------------------------------------


def load_config(path: str) -> dict:
    """Read the TOML run configuration.

    Sections: ``[family] variant, k``; ``[material] mu, lambda``;
    ``[interface] mu_perp, lambda_perp``; ``[bc] g_u``; ``[load] f``.
    """
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    fam = data.get("family", {})
    family = FamilyChoice(
        variant=fam.get("variant", "full"), order=int(fam.get("k", 0))
    )
    mat = data.get("material", {})
    itf = data.get("interface", {})
    material = MaterialLaw(
        mu=float(mat.get("mu", 1.0)),
        lam=float(mat.get("lambda", 1.0)),
        mu_perp=float(itf.get("mu_perp", 1.0)),
        lam_perp=float(itf.get("lambda_perp", 1.0)),
    )
    out = {"family": family, "material": material, "g_u": None, "f": None}
    bc = data.get("bc", {})
    if "g_u" in bc:
        out["g_u"] = ex.parse_vector(bc["g_u"])
    load = data.get("load", {})
    if "f" in load:
        out["f"] = ex.parse_vector(load["f"])
    return out
