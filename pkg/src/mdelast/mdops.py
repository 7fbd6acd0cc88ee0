"""Mixed-dimensional operators: jump, divergence, gradient, skw, and curl.

The divergence and curl are realized as exact sparse matrices between the
discrete spaces: the divergence of any discrete stress is representable in
the displacement space (condition S2) and the curl of any potential is
representable in the stress space (condition S3a), so no quadrature enters.
Operators are unweighted; all epsilon scalings are applied at assembly.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sps
import sympy as sp

from mdelast import expressions as ex
from mdelast.elements import SpaceSet, bdm_div
from mdelast.fields import MixedField
from mdelast.geometry import GeometryError, MixedDimGeometry


def jump(interface_values: dict, geometry: MixedDimGeometry, i: int):
    """Sum of interface values over all sides of manifold i."""
    hats = geometry.J_hat[i]
    if not hats:
        return 0.0
    missing = [j for j in hats if j not in interface_values]
    if missing:
        raise GeometryError(f"jump on manifold {i}: missing interface data {missing}")
    total = None
    for j in hats:
        v = interface_values[j]
        total = v if total is None else total + v
    return total


def skw_apply(sigma_val, d: int):
    """Asymmetric part of an n x d matrix: b12 - b21 for d = 2."""
    if d <= 1:
        raise ValueError("skw is undefined on manifolds of dimension <= 1")
    if d == 3:
        raise NotImplementedError("three-dimensional skw is not implemented")
    if d != 2:
        raise ValueError(f"unsupported dimension {d}")
    b = np.asarray(sigma_val)
    return b[0, 1] - b[1, 0]


# ----------------------------------------------------------------------------
# exact operator matrices
# ----------------------------------------------------------------------------


def divergence_matrix(spaces: SpaceSet) -> sps.csr_matrix:
    """Unweighted mixed-dimensional divergence: stress -> displacement coeffs.

    Bulk rows take the row-wise in-plane divergence; inclusion rows combine
    the in-plane derivative with the (negative) jump of the adjacent bulk
    normal traces; point rows collect the incoming end tractions.
    """
    mesh = spaces.mesh
    geometry = spaces.geometry
    rows, cols, vals = [], [], []
    off = spaces.offset_u

    for bd in spaces.bulk.values():
        divs = bdm_div(bd)  # (nt, 6)
        for tl in range(len(bd.tri_gidx)):
            for r in range(2):
                urow = bd.u_dof[tl, r] - off
                for le in range(3):
                    ei = bd.tri_edges[tl, le]
                    for m in range(2):
                        dof = bd.sigma_dof[ei, r, m]
                        if dof >= 0:
                            rows.append(urow)
                            cols.append(dof)
                            vals.append(divs[tl, 2 * le + m])

    tl_of = {}
    for bd in spaces.bulk.values():
        tl_of[bd.mid] = {int(g): k for k, g in enumerate(bd.tri_gidx)}

    for sd in spaces.seg.values():
        Q = sd.frame
        nprof = sd.u_dof.shape[2]
        # in-plane derivative of the nodal stress, mapped to ambient rows
        for k in range(len(sd.cells)):
            L = sd.lengths[k]
            nl = sd.cell_nodes[k]
            if len(nl) == 3:
                mean_c = np.array([-1.0, 1.0, 0.0]) / L
                leg_c = np.array([4.0, 4.0, -8.0]) / L
            else:
                mean_c = np.array([-1.0, 1.0]) / L
                leg_c = None
            for lr in range(2):
                for nn, node in enumerate(nl):
                    dof = sd.sigma_dof[node, lr]
                    if dof < 0:
                        continue
                    for comp in range(2):
                        rows.append(sd.u_dof[k, comp, 0] - off)
                        cols.append(dof)
                        vals.append(Q[lr, comp] * mean_c[nn])
                        if nprof == 2 and leg_c is not None:
                            rows.append(sd.u_dof[k, comp, 1] - off)
                            cols.append(dof)
                            vals.append(Q[lr, comp] * leg_c[nn])
        # jump of the bulk normal traces
        for j in geometry.J_hat[sd.mid]:
            tr = mesh.trace[j]
            itf = geometry.interface(j)
            bd = spaces.bulk[itf.upper]
            for k in range(len(sd.cells)):
                tl = tl_of[bd.mid][int(tr["tri"][k])]
                ei = bd.tri_edges[tl, int(tr["local_edge"][k])]
                sgn = float(tr["nsign"][k])
                flip = -1.0 if tr["flip"][k] else 1.0
                for r in range(2):
                    d0 = bd.sigma_dof[ei, r, 0]
                    if d0 >= 0:
                        rows.append(sd.u_dof[k, r, 0] - off)
                        cols.append(d0)
                        vals.append(-sgn)
                    d1 = bd.sigma_dof[ei, r, 1]
                    if d1 >= 0 and nprof == 2:
                        rows.append(sd.u_dof[k, r, 1] - off)
                        cols.append(d1)
                        vals.append(-sgn * flip)

    for pd in spaces.pts.values():
        for j in geometry.J_hat[pd.mid]:
            tr = mesh.trace[j]
            itf = geometry.interface(j)
            sd = spaces.seg[itf.upper]
            node = 0 if tr["tsign"] < 0 else len(sd.cells)
            for lr in range(2):
                dof = sd.sigma_dof[node, lr]
                if dof < 0:
                    continue
                for comp in range(2):
                    rows.append(pd.u_dof[comp] - off)
                    cols.append(dof)
                    vals.append(-tr["tsign"] * sd.frame[lr, comp])

    return sps.csr_matrix(
        (vals, (rows, cols)), shape=(spaces.n_u, spaces.n_sigma)
    )


def curl_matrix(spaces: SpaceSet) -> sps.csr_matrix:
    """Curl of the potential space into the stress space (n = 2, exact).

    On the bulk each potential row contributes its rotated gradient; the
    normal moments follow from the tangential derivative of the edge trace.
    On inclusions the curl is the (negative) jump of the side traces scaled
    by the in-plane projection of the rotated interface normal, expressed in
    the local stress frame.
    """
    mesh = spaces.mesh
    geometry = spaces.geometry
    rows, cols, vals = [], [], []

    tl_of = {}
    for bd in spaces.bulk.values():
        tl_of[bd.mid] = {int(g): k for k, g in enumerate(bd.tri_gidx)}

    def corner_class(bd, tl, vid):
        t = mesh.tris[bd.tri_gidx[tl]]
        for c in range(3):
            if int(t[c]) == vid:
                return bd.w_class[tl, c]
        raise GeometryError("vertex not in facet triangle")

    for bd in spaces.bulk.values():
        for ei, rec in enumerate(bd.edges):
            _gt, _le, tl = rec.tris[0]
            cl_lo = corner_class(bd, tl, rec.lo)
            cl_hi = corner_class(bd, tl, rec.hi)
            for r in range(2):
                d0 = bd.sigma_dof[ei, r, 0]
                if d0 >= 0:
                    wlo = bd.w_vertex_dof[cl_lo, r]
                    whi = bd.w_vertex_dof[cl_hi, r]
                    rows.extend([d0, d0])
                    cols.extend([wlo, whi])
                    vals.extend([1.0 / rec.length, -1.0 / rec.length])
                d1 = bd.sigma_dof[ei, r, 1]
                bub = bd.w_bubble_dof[ei, r]
                if d1 >= 0 and bub >= 0:
                    rows.append(d1)
                    cols.append(bub)
                    vals.append(8.0 / rec.length)

    for sd in spaces.seg.values():
        man = geometry.manifold(sd.mid)
        t = man.tangent
        Q = sd.frame
        ncell = len(sd.cells)
        for j in geometry.J_hat[sd.mid]:
            itf = geometry.interface(j)
            tr = mesh.trace[j]
            bd = spaces.bulk[itf.upper]
            n = itf.normal
            s_j = float(-n[1] * t[0] + n[0] * t[1])  # rotated normal . tangent
            for node_v in range(ncell + 1):
                k = min(node_v, ncell - 1)
                tl = tl_of[bd.mid][int(tr["tri"][k])]
                vid = int(mesh.cells1[sd.cells[k]][0 if node_v == k else 1])
                cl = corner_class(bd, tl, vid)
                for lr in range(2):
                    dof = sd.sigma_dof[node_v, lr]
                    if dof < 0:
                        continue
                    for comp in range(2):
                        rows.append(dof)
                        cols.append(bd.w_vertex_dof[cl, comp])
                        vals.append(-s_j * Q[lr, comp])
            if spaces.family.variant == "full":
                for k in range(ncell):
                    tl = tl_of[bd.mid][int(tr["tri"][k])]
                    ei = bd.tri_edges[tl, int(tr["local_edge"][k])]
                    va = int(mesh.cells1[sd.cells[k]][0])
                    vb = int(mesh.cells1[sd.cells[k]][1])
                    cla = corner_class(bd, tl, va)
                    clb = corner_class(bd, tl, vb)
                    bubs = bd.w_bubble_dof[ei]
                    node_m = ncell + 1 + k
                    for lr in range(2):
                        dof = sd.sigma_dof[node_m, lr]
                        if dof < 0:
                            continue
                        for comp in range(2):
                            f = -s_j * Q[lr, comp]
                            rows.extend([dof, dof])
                            cols.extend(
                                [bd.w_vertex_dof[cla, comp], bd.w_vertex_dof[clb, comp]]
                            )
                            vals.extend([0.5 * f, 0.5 * f])
                            if bubs[comp] >= 0:
                                rows.append(dof)
                                cols.append(bubs[comp])
                                vals.append(f)

    return sps.csr_matrix(
        (vals, (rows, cols)), shape=(spaces.n_sigma, spaces.n_w)
    )


# ----------------------------------------------------------------------------
# operator application on fields
# ----------------------------------------------------------------------------


def md_divergence(sigma: MixedField, geometry=None, spaces=None) -> MixedField:
    """Unweighted divergence of a discrete stress as a displacement field."""
    spaces = spaces or sigma.spaces
    D = divergence_matrix(spaces)
    return MixedField("displacement", D @ sigma.coeffs, spaces)


def md_curl(w: MixedField) -> MixedField:
    """Curl of a discrete potential; the result lies in the stress space."""
    if w.role != "potential":
        raise ValueError("md_curl expects a potential field")
    if w.spaces.geometry.ambient_dim == 3:
        raise NotImplementedError("the three-dimensional curl is not implemented")
    C = curl_matrix(w.spaces)
    return MixedField("stress", C @ w.coeffs, w.spaces)


def md_gradient(u, geometry: MixedDimGeometry = None):
    """Mixed-dimensional gradient: per-manifold part and interface part.

    Accepts either a discrete displacement MixedField or a dict mapping
    manifold id to a sympy 2-vector (or constants).  Returns a pair: the
    tangential row-wise gradients per manifold, and per interface the
    difference between the lower value and the upper trace.
    """
    if isinstance(u, MixedField):
        return _md_gradient_discrete(u)
    fields = {}
    for mid, val in u.items():
        if isinstance(val, sp.MatrixBase):
            fields[mid] = sp.Matrix(val)
        else:
            fields[mid] = sp.Matrix([sp.sympify(v) for v in np.atleast_1d(val)])

    grads = {}
    for mid, vec in fields.items():
        man = geometry.manifold(mid)
        if man.dim == 2:
            grads[mid] = ex.jacobian(vec)
        elif man.dim == 1:
            grads[mid] = ex.directional(vec, man.tangent)
        else:
            grads[mid] = None

    on_gamma = {}
    for itf in geometry.interfaces:
        if itf.lower not in fields or itf.upper not in fields:
            continue
        lower = fields[itf.lower]
        upper = fields[itf.upper]
        on_gamma[itf.id] = sp.simplify(lower - upper)
    return grads, on_gamma


def _md_gradient_discrete(u: MixedField):
    """Cellwise gradients and facet-midpoint interface differences."""
    if u.role != "displacement":
        raise ValueError("md_gradient expects a displacement field")
    spaces = u.spaces
    geometry = spaces.geometry
    grads = {}
    for bd in spaces.bulk.values():
        # piecewise constants carry no in-plane gradient
        grads[bd.mid] = np.zeros((len(bd.tri_gidx), 2, 2))
    mid_xi = np.array([0.0, 1.0])
    for sd in spaces.seg.values():
        out = np.zeros((len(sd.cells), 2, 1))
        for k in range(len(sd.cells)):
            vals = u.u_seg(sd.mid, k, mid_xi)
            out[k, :, 0] = (vals[1] - vals[0]) / sd.lengths[k]
        grads[sd.mid] = out
    for pd in spaces.pts.values():
        grads[pd.mid] = None

    on_gamma = {}
    half = np.array([0.5])
    for itf in geometry.interfaces:
        tr = spaces.mesh.trace[itf.id]
        up = geometry.manifold(itf.upper)
        if tr["kind"] == "side":
            sd = spaces.seg[itf.lower]
            bd = spaces.bulk[itf.upper]
            tl_of = {int(g): k for k, g in enumerate(bd.tri_gidx)}
            ub = u.u_bulk(bd.mid)
            diff = np.zeros((len(sd.cells), 2))
            for k in range(len(sd.cells)):
                lo_val = u.u_seg(sd.mid, k, half)[0]
                hi_val = ub[tl_of[int(tr["tri"][k])]]
                diff[k] = lo_val - hi_val
            on_gamma[itf.id] = diff
        else:
            sd = spaces.seg[itf.upper]
            cell = 0 if tr["tsign"] < 0 else len(sd.cells) - 1
            xi = np.array([0.0 if tr["tsign"] < 0 else 1.0])
            hi_val = u.u_seg(sd.mid, cell, xi)[0]
            lo_val = u.u_point(itf.lower)
            on_gamma[itf.id] = (lo_val - hi_val)[None, :]
    return grads, on_gamma
