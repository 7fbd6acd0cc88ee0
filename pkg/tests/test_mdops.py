import numpy as np
import pytest
import sympy as sp

from mdelast import expressions as ex
from mdelast.elements import canonical_interpolate
from mdelast.fields import MixedField
from mdelast.geometry import GeometryError
from mdelast.mdops import (
    curl_matrix,
    divergence_matrix,
    jump,
    md_curl,
    md_divergence,
    md_gradient,
    skw_apply,
)
from mdelast.quadrature import gauss01, tri_points
from mdelast.verify import LCG


class TestJump:
    def test_two_sides_sum(self, isolated_geometry):
        g = isolated_geometry
        seg = g.manifolds_of_dim(1)[0]
        j1, j2 = g.J_hat[seg.id]
        assert jump({j1: 1.0, j2: 1.0}, g, seg.id) == pytest.approx(2.0)

    def test_single_interface_identity(self, cross_geometry):
        g = cross_geometry
        pt = g.manifolds_of_dim(0)[0]
        j = g.J_hat[pt.id][0]
        vals = {jj: np.zeros(2) for jj in g.J_hat[pt.id]}
        vals[j] = np.array([0.3, -0.1])
        out = jump(vals, g, pt.id)
        assert np.allclose(out, [0.3, -0.1])

    def test_h_crossbar_sums_its_two_sides(self, h_geometry):
        g = h_geometry
        crossbar = next(
            m for m in g.manifolds_of_dim(1)
            if abs(m.tangent[0]) > 0.9  # the horizontal piece
        )
        sides = g.J_hat[crossbar.id]
        assert len(sides) == 2
        out = jump({sides[0]: 2.0, sides[1]: 3.0}, g, crossbar.id)
        assert out == pytest.approx(5.0)

    def test_missing_data_errors(self, isolated_geometry):
        g = isolated_geometry
        seg = g.manifolds_of_dim(1)[0]
        with pytest.raises(GeometryError, match="missing"):
            jump({g.J_hat[seg.id][0]: 1.0}, g, seg.id)


class TestSkw:
    def test_paper_formula(self):
        assert skw_apply(np.array([[1.0, 2.0], [3.0, 4.0]]), 2) == pytest.approx(-1.0)

    def test_symmetric_matrix_vanishes(self):
        m = np.array([[2.0, 5.0], [5.0, -1.0]])
        assert skw_apply(m, 2) == pytest.approx(0.0)

    def test_antisymmetric(self):
        a = 0.7
        m = np.array([[0.0, a], [-a, 0.0]])
        assert skw_apply(m, 2) == pytest.approx(2 * a)

    def test_low_dimension_undefined(self):
        with pytest.raises(ValueError, match="undefined"):
            skw_apply(np.zeros((2, 1)), 1)

    def test_three_d_unimplemented(self):
        with pytest.raises(NotImplementedError):
            skw_apply(np.zeros((3, 3)), 3)


class TestDivergence:
    def test_constant_stress_interior(self, square_spaces):
        const = np.array([[1.0, 0.5], [0.2, -1.0]])
        coeffs = canonical_interpolate(lambda x, y: const, square_spaces)
        sigma = MixedField("stress", coeffs, square_spaces)
        div = md_divergence(sigma, spaces=square_spaces)
        assert np.abs(div.coeffs).max() <= 1e-12

    def test_linear_stress(self, square_spaces):
        coeffs = canonical_interpolate(
            lambda x, y: np.array([[x, 0.0], [0.0, y]]), square_spaces
        )
        sigma = MixedField("stress", coeffs, square_spaces)
        div = md_divergence(sigma, spaces=square_spaces)
        off = square_spaces.offset_u
        for bd in square_spaces.bulk.values():
            vals = div.coeffs[bd.u_dof - off]
            assert np.abs(vals - 1.0).max() <= 1e-12

    def test_segment_feels_both_side_tractions(self, mms2_spaces_full):
        # zero inclusion stress, traction g on each side: divergence is -2g
        spaces = mms2_spaces_full
        g = np.array([0.4, -0.7])
        geometry = spaces.geometry
        seg = geometry.manifolds_of_dim(1)[0]
        fields = {}
        for j in geometry.J_hat[seg.id]:
            itf = geometry.interface(j)
            n = itf.normal
            # constant tensor with row_k . n = g_k
            sig = np.outer(g, n)
            fields[itf.upper] = (lambda s: lambda x, y: s)(sig)
        fields[seg.id] = lambda x, y: np.zeros(2)
        coeffs = canonical_interpolate(fields, spaces)
        sigma = MixedField("stress", coeffs, spaces)
        div = md_divergence(sigma, spaces=spaces)
        off = spaces.offset_u
        sd = spaces.seg[seg.id]
        prof0 = div.coeffs[sd.u_dof[:, :, 0] - off]
        assert np.abs(prof0 - (-2 * g)).max() <= 1e-12

    def test_linearity(self, mms2_spaces_full):
        spaces = mms2_spaces_full
        rng = LCG(5)
        a = rng.vector(spaces.n_sigma)
        b = rng.vector(spaces.n_sigma)
        al, be = 0.3, -1.7
        D = divergence_matrix(spaces)
        lhs = D @ (al * a + be * b)
        rhs = al * (D @ a) + be * (D @ b)
        assert np.abs(lhs - rhs).max() <= 1e-12 * max(1.0, np.abs(rhs).max())


class TestCurl:
    def test_constant_potential(self, square_spaces):
        w = MixedField("potential", np.zeros(square_spaces.n_w), square_spaces)
        bd = next(iter(square_spaces.bulk.values()))
        w.coeffs[bd.w_vertex_dof[:, 0]] = 2.5
        w.coeffs[bd.w_vertex_dof[:, 1]] = -1.0
        sig = md_curl(w)
        assert np.abs(sig.coeffs).max() <= 1e-12

    def test_linear_potential_rotated_gradient(self, square_spaces):
        # w = (x, 0) has curl row [0, 1] in the first stress row
        spaces = square_spaces
        mesh = spaces.mesh
        w = np.zeros(spaces.n_w)
        bd = next(iter(spaces.bulk.values()))
        for tl, gt in enumerate(bd.tri_gidx):
            for c in range(3):
                vid = int(mesh.tris[gt][c])
                w[bd.w_vertex_dof[bd.w_class[tl, c], 0]] = mesh.vertices[vid][0]
        sig = md_curl(MixedField("potential", w, spaces))
        pts = mesh.tri_coords(bd.tri_gidx).mean(axis=1)
        vals = sig.stress_bulk(bd.mid, 0, pts[0][None, :])[0]
        assert np.allclose(vals[0], [0.0, 1.0], atol=1e-12)
        assert np.allclose(vals[1], [0.0, 0.0], atol=1e-12)

    @pytest.mark.parametrize("geom", ["square", "mms2"])
    def test_div_curl_vanishes(self, geom, square_spaces, mms2_spaces_full):
        spaces = {"square": square_spaces, "mms2": mms2_spaces_full}[geom]
        D = divergence_matrix(spaces)
        C = curl_matrix(spaces)
        rng = LCG(13)
        for _ in range(20):
            w = rng.vector(spaces.n_w)
            sig = C @ w
            num = np.abs(D @ sig).max()
            den = max(np.abs(sig).max(), 1e-30)
            assert num <= 1e-12 * max(1.0, den) + 1e-13

    def test_single_basis_function(self, mms2_spaces_full):
        spaces = mms2_spaces_full
        D = divergence_matrix(spaces)
        C = curl_matrix(spaces)
        e = np.zeros(spaces.n_w)
        e[spaces.n_w // 2] = 1.0
        assert np.abs(D @ (C @ e)).max() <= 1e-12


class TestAdjointIdentity:
    def test_integration_by_parts(self, mms2_spaces_full):
        """(eps D u, tau) + (u, D . eps tau) = 0 for tau with no boundary trace.

        Independent quadrature on the left, the assembled operator on the
        right, with per-manifold polynomial displacements so every integral
        is exact.
        """
        spaces = mms2_spaces_full
        geometry = spaces.geometry
        mesh = spaces.mesh
        X, Y = ex.X, ex.Y
        u_sym = {}
        for m in geometry.manifolds:
            if m.dim == 2:
                up = m.centroid()[1] > 0.5
                u_sym[m.id] = (
                    sp.Matrix([X**2 + Y, X - Y**2]) if up
                    else sp.Matrix([X * Y, 2 * X + Y**2])
                )
            elif m.dim == 1:
                u_sym[m.id] = sp.Matrix([X**2 / 2 + 1, X - 3])
            else:
                u_sym[m.id] = sp.Matrix([1, -2])
        u_fn = {mid: ex.lambdify(v) for mid, v in u_sym.items()}

        rng = LCG(99)
        tau = rng.vector(spaces.n_sigma)
        # essential removal of the displacement-boundary trace
        for bd in spaces.bulk.values():
            for ei, rec in enumerate(bd.edges):
                if rec.kind == "boundary_u":
                    for dof in bd.sigma_dof[ei].ravel():
                        if dof >= 0:
                            tau[dof] = 0.0
        for sd in spaces.seg.values():
            man = geometry.manifold(sd.mid)
            for label, node in (("a", 0), ("b", len(sd.cells))):
                if man.boundary_tags.get(label) == "displacement":
                    for dof in sd.sigma_dof[node]:
                        if dof >= 0:
                            tau[dof] = 0.0
        field = MixedField("stress", tau, spaces)

        lhs = 0.0
        # (eps grad u, tau) over manifolds
        for bd in spaces.bulk.values():
            grad_fn = ex.lambdify(ex.jacobian(u_sym[bd.mid]))
            coords = mesh.tri_coords(bd.tri_gidx)
            pts, wts = tri_points(coords, degree=4)
            for tl in range(len(bd.tri_gidx)):
                tv = field.stress_bulk(bd.mid, tl, pts[tl])
                gv = np.stack([
                    np.asarray(grad_fn(p[0], p[1]), dtype=float) for p in pts[tl]
                ])
                lhs += float(wts[tl] @ np.sum(gv * tv, axis=(1, 2)))
        gx, gw = gauss01(5)
        for sd in spaces.seg.values():
            man = geometry.manifold(sd.mid)
            t, Q = man.tangent, sd.frame
            du_fn = ex.lambdify(ex.directional(u_sym[sd.mid], t))
            for k in range(len(sd.cells)):
                nl = sd.cell_nodes[k]
                pa, pb = sd.node_coords[nl[0]], sd.node_coords[nl[1]]
                pp = pa[None, :] + gx[:, None] * (pb - pa)[None, :]
                tv = field.stress_seg(sd.mid, k, gx)
                du = np.stack([
                    np.asarray(du_fn(p[0], p[1]), dtype=float).reshape(2) for p in pp
                ])
                du_loc = du @ Q.T
                lhs += sd.epsilon * sd.lengths[k] * float(
                    gw @ np.sum(du_loc * tv, axis=1)
                )
        # interface parts: eps_hat (u_lower - trace of u_upper) . (n . tau_hat)
        for itf in geometry.interfaces:
            tr = mesh.trace[itf.id]
            lo = geometry.manifold(itf.lower)
            up = geometry.manifold(itf.upper)
            if tr["kind"] == "side":
                sd = spaces.seg[lo.id]
                T = field.trace(itf.id, gx)
                for k in range(len(sd.cells)):
                    nl = sd.cell_nodes[k]
                    pa, pb = sd.node_coords[nl[0]], sd.node_coords[nl[1]]
                    pp = pa[None, :] + gx[:, None] * (pb - pa)[None, :]
                    du = np.stack([
                        np.asarray(u_fn[lo.id](p[0], p[1])).reshape(2)
                        - np.asarray(u_fn[up.id](p[0], p[1])).reshape(2)
                        for p in pp
                    ])
                    lhs += up.epsilon * sd.lengths[k] * float(
                        gw @ np.sum(du * T[k], axis=1)
                    )
            else:
                p = lo.vertices[0]
                du = (
                    np.asarray(u_fn[lo.id](p[0], p[1])).reshape(2)
                    - np.asarray(u_fn[up.id](p[0], p[1])).reshape(2)
                )
                T = field.trace(itf.id, np.array([0.0]))[0, 0]
                lhs += up.epsilon * float(du @ T)

        # (u, D . eps tau) by quadrature of the displacement-space function
        E = spaces.epsilon_of_sigma_dofs()
        dv = divergence_matrix(spaces) @ (E * tau)
        off = spaces.offset_u
        rhs = 0.0
        for bd in spaces.bulk.values():
            coords = mesh.tri_coords(bd.tri_gidx)
            pts, wts = tri_points(coords, degree=4)
            vals = dv[bd.u_dof - off]
            for tl in range(len(bd.tri_gidx)):
                uv = np.stack([
                    np.asarray(u_fn[bd.mid](p[0], p[1])).reshape(2) for p in pts[tl]
                ])
                rhs += float(wts[tl] @ (uv @ vals[tl]))
        for sd in spaces.seg.values():
            for k in range(len(sd.cells)):
                nl = sd.cell_nodes[k]
                pa, pb = sd.node_coords[nl[0]], sd.node_coords[nl[1]]
                pp = pa[None, :] + gx[:, None] * (pb - pa)[None, :]
                cf = dv[sd.u_dof[k] - off]
                prof = np.outer(np.ones_like(gx), cf[:, 0])
                if cf.shape[1] == 2:
                    prof += np.outer(gx - 0.5, cf[:, 1])
                uv = np.stack([
                    np.asarray(u_fn[sd.mid](p[0], p[1])).reshape(2) for p in pp
                ])
                rhs += sd.lengths[k] * float(gw @ np.sum(uv * prof, axis=1))
        for pd in spaces.pts.values():
            uv = np.asarray(u_fn[pd.mid](pd.coords[0], pd.coords[1])).reshape(2)
            rhs += float(uv @ dv[pd.u_dof - off])

        scale = max(abs(lhs), abs(rhs), 1.0)
        assert abs(lhs + rhs) <= 1e-10 * scale


class TestGradient:
    def test_constant_everywhere(self, mms2_geometry):
        u = {m.id: sp.Matrix([1, 2]) for m in mms2_geometry.manifolds}
        grads, on_gamma = md_gradient(u, mms2_geometry)
        for mid, g in grads.items():
            if g is not None:
                assert all(sp.simplify(c) == 0 for c in g)
        for diff in on_gamma.values():
            assert all(sp.simplify(c) == 0 for c in diff)

    def test_identity_gradient(self, square_geometry):
        mid = square_geometry.manifolds_of_dim(2)[0].id
        grads, _ = md_gradient({mid: sp.Matrix([ex.X, ex.Y])}, square_geometry)
        assert grads[mid] == sp.eye(2)

    def test_interface_difference(self, mms2_geometry):
        g = mms2_geometry
        seg = g.manifolds_of_dim(1)[0]
        u = {m.id: sp.Matrix([0, 0]) for m in g.manifolds_of_dim(2)}
        u[seg.id] = sp.Matrix([3, -1])
        _, on_gamma = md_gradient(u, g)
        for j in g.J_hat[seg.id]:
            assert on_gamma[j] == sp.Matrix([3, -1])


class TestDiscreteGradient:
    def test_constant_field_has_zero_gradient(self, mms2_spaces_full):
        from mdelast.elements import project_u

        spaces = mms2_spaces_full
        u = MixedField(
            "displacement",
            project_u(lambda x, y: np.array([2.0, -1.0]), spaces),
            spaces,
        )
        grads, on_gamma = md_gradient(u)
        for mid, g in grads.items():
            if g is not None:
                assert np.abs(g).max() <= 1e-13
        for diff in on_gamma.values():
            assert np.abs(diff).max() <= 1e-13

    def test_interface_difference_reads_sides(self, mms2_spaces_full):
        spaces = mms2_spaces_full
        geometry = spaces.geometry
        seg = geometry.manifolds_of_dim(1)[0]
        coeffs = np.zeros(spaces.n_u)
        sd = spaces.seg[seg.id]
        coeffs[sd.u_dof[:, 0, 0] - spaces.offset_u] = 3.0
        u = MixedField("displacement", coeffs, spaces)
        _, on_gamma = md_gradient(u)
        for j in geometry.J_hat[seg.id]:
            assert np.allclose(on_gamma[j][:, 0], 3.0)
            assert np.allclose(on_gamma[j][:, 1], 0.0)


def test_complex_property_with_boundary_touching_traction_segment():
    """Segment ending on a zero-traction boundary still closes the complex."""
    from mdelast.geometry import decompose
    from mdelast.meshing import build_mesh
    from mdelast.elements import FamilyChoice, build_spaces
    from mdelast.verify import complex_check

    spec = [
        {"edge": 0, "type": "displacement"},
        {"edge": 1, "type": "traction"},
        {"edge": 2, "type": "displacement"},
        {"edge": 3, "type": "traction"},
    ]
    g = decompose(
        [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        [((0.0, 0.5), (1.0, 0.5), 1e-2, 1e-4)],
        spec,
    )
    seg = g.manifolds_of_dim(1)[0]
    assert seg.boundary_tags["a"] == "traction"
    mesh = build_mesh(g, 0.25)
    for variant in ("full", "reduced"):
        spaces = build_spaces(mesh, FamilyChoice(variant))
        assert complex_check(spaces, trials=50) <= 1e-12
