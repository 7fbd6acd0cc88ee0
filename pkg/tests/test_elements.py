import numpy as np
import pytest

from mdelast.elements import (
    FamilyChoice,
    UnsupportedFamilyError,
    build_spaces,
    canonical_interpolate,
    project_u,
)
from mdelast.fields import MixedField
from mdelast.geometry import decompose
from mdelast.mdops import divergence_matrix
from mdelast.meshing import build_mesh, refine
from mdelast.quadrature import gauss01


def test_single_triangle_dof_counts():
    g = decompose([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [])
    mesh = build_mesh(g, 10.0)
    assert len(mesh.tris) == 1
    spaces = build_spaces(mesh, FamilyChoice("full"))
    assert spaces.n_sigma == 12
    assert spaces.n_u == 2
    assert spaces.n_r == 1


def test_two_cell_segment_stress_dofs(mms2_geometry):
    mesh = build_mesh(mms2_geometry, 0.9)
    seg = mms2_geometry.manifolds_of_dim(1)[0]
    assert len(mesh.cells_of[seg.id]) == 2
    # 2 components x 5 continuous-quadratic nodes
    spaces = build_spaces(mesh, FamilyChoice("full"))
    sd = spaces.seg[seg.id]
    assert int((sd.sigma_dof >= 0).sum()) == 10


def test_point_manifold_dofs(cross_geometry):
    mesh = build_mesh(cross_geometry, 0.25)
    spaces = build_spaces(mesh, FamilyChoice("full"))
    pt = cross_geometry.manifolds_of_dim(0)[0]
    assert len(spaces.pts[pt.id].u_dof) == 2


def test_unsupported_order_errors(square_mesh):
    with pytest.raises(UnsupportedFamilyError, match="k = 1"):
        build_spaces(square_mesh, FamilyChoice("full", 1))


def test_reduced_family_drops_interface_moments(mms2_spaces_reduced):
    spaces = mms2_spaces_reduced
    for bd in spaces.bulk.values():
        for ei, rec in enumerate(bd.edges):
            if rec.kind == "iface":
                assert np.all(bd.sigma_dof[ei, :, 1] == -1)
                assert np.all(bd.sigma_dof[ei, :, 0] >= 0)
                assert np.all(bd.w_bubble_dof[ei] == -1)


def test_potential_space_splits_slit_vertices(mms2_spaces_full, mms2_mesh):
    # vertices strictly inside the inclusion line get one copy per side
    spaces = mms2_spaces_full
    nclass = sum(len(bd.w_vertex_dof) for bd in spaces.bulk.values())
    used_vertices = {
        int(v) for bd in spaces.bulk.values()
        for t in mms2_mesh.tris[bd.tri_gidx] for v in t
    }
    assert nclass > len(used_vertices)


def test_interpolation_reproduces_constants(mms2_spaces_full):
    spaces = mms2_spaces_full
    const = np.array([[1.3, 0.2], [0.4, -0.7]])
    coeffs = canonical_interpolate(lambda x, y: const, spaces)
    field = MixedField("stress", coeffs, spaces)
    for mid, bd in spaces.bulk.items():
        pts = spaces.mesh.tri_coords(bd.tri_gidx).mean(axis=1)
        for tl in (0, len(bd.tri_gidx) // 2):
            vals = field.stress_bulk(mid, tl, pts[tl][None, :])
            assert np.abs(vals[0] - const).max() <= 1e-12
    for mid, sd in spaces.seg.items():
        Q = sd.frame
        t = spaces.geometry.manifold(mid).tangent
        expect = Q @ const @ t
        vals = field.stress_seg(mid, 0, np.array([0.3, 0.9]))
        assert np.abs(vals - expect).max() <= 1e-12


def test_commuting_interpolation(mms2_spaces_full):
    # div(Pi sigma) equals the displacement-space projection of div(sigma)
    spaces = mms2_spaces_full
    geometry = spaces.geometry
    coeffs = canonical_interpolate(
        lambda x, y: np.array([[x, 0.0], [0.0, y]]), spaces
    )
    D = divergence_matrix(spaces)
    got = D @ coeffs
    # exact mixed-dimensional divergence: [1, 1] on the bulk; on the
    # inclusion the in-plane part is (1, 0) and the side tractions cancel
    expect = np.zeros(spaces.n_u)
    off = spaces.offset_u
    for bd in spaces.bulk.values():
        expect[bd.u_dof[:, 0] - off] = 1.0
        expect[bd.u_dof[:, 1] - off] = 1.0
    for sd in spaces.seg.values():
        expect[sd.u_dof[:, 0, 0] - off] = 1.0
    assert np.abs(got - expect).max() <= 1e-12


@pytest.mark.parametrize("variant", ["full", "reduced"])
def test_interpolation_approximation_order(square_geometry, variant):
    mesh = build_mesh(square_geometry, 0.4)
    errs, hs = [], []
    f = lambda x, y: np.array([
        [np.sin(np.pi * x) * np.cos(np.pi * y), np.cos(np.pi * x * y)],
        [np.exp(x - y) / 3, np.sin(np.pi * y)],
    ])
    for _ in range(3):
        spaces = build_spaces(mesh, FamilyChoice(variant))
        coeffs = canonical_interpolate(f, spaces)
        field = MixedField("stress", coeffs, spaces)
        err2 = 0.0
        from mdelast.quadrature import tri_points

        for mid, bd in spaces.bulk.items():
            coords = spaces.mesh.tri_coords(bd.tri_gidx)
            pts, wts = tri_points(coords, degree=8)
            for tl in range(len(bd.tri_gidx)):
                vals = field.stress_bulk(mid, tl, pts[tl])
                exact = np.stack([f(p[0], p[1]) for p in pts[tl]])
                err2 += float(wts[tl] @ ((vals - exact) ** 2).sum(axis=(1, 2)))
        errs.append(np.sqrt(err2))
        hs.append(mesh.h)
        mesh = refine(mesh)
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert 1.7 <= slope <= 2.3


def test_facet_orientation_invariance(mms2_spaces_full):
    """Flipping the edge frame flips the mean moment, not the function."""
    spaces = mms2_spaces_full
    bd = next(iter(spaces.bulk.values()))
    rec = next(r for r in bd.edges if r.kind == "interior")
    gx, gw = gauss01(5)
    mesh = spaces.mesh
    pts = mesh.vertices[rec.lo][None, :] + gx[:, None] * (
        mesh.vertices[rec.hi] - mesh.vertices[rec.lo]
    )[None, :]
    f = lambda x, y: np.array([x + 2 * y, np.sin(x)])
    vals = np.stack([f(p[0], p[1]) for p in pts])
    vn = vals @ rec.n_e
    n1 = float(gw @ vn)
    n2 = 12.0 * float((gw * (gx - 0.5)) @ vn)
    # flipped frame: reversed parameter and negated normal
    vn_f = (vals @ (-rec.n_e))[::-1]
    n1_f = float(gw @ vn_f)
    n2_f = 12.0 * float((gw * (gx - 0.5)) @ vn_f)
    assert n1_f == pytest.approx(-n1, abs=1e-14)
    assert n2_f == pytest.approx(n2, abs=1e-14)
    # both parametrizations reconstruct the same normal trace
    recon = n1 + n2 * (gx - 0.5)
    recon_f = -(n1_f + n2_f * (gx - 0.5))[::-1]
    assert np.abs(recon - recon_f).max() <= 1e-13


def test_normal_continuity_across_interior_facets(mms2_spaces_full):
    spaces = mms2_spaces_full
    rng = np.random.default_rng(3)
    coeffs = rng.standard_normal(spaces.n_sigma)
    field = MixedField("stress", coeffs, spaces)
    gx, _ = gauss01(3)
    mesh = spaces.mesh
    for bd in spaces.bulk.values():
        tl_of = {int(g): k for k, g in enumerate(bd.tri_gidx)}
        for rec in bd.edges:
            if rec.kind != "interior" or len(rec.tris) != 2:
                continue
            pts = mesh.vertices[rec.lo][None, :] + gx[:, None] * (
                mesh.vertices[rec.hi] - mesh.vertices[rec.lo]
            )[None, :]
            sides = []
            for gt, _le, tl in rec.tris:
                vals = field.stress_bulk(bd.mid, tl, pts)
                sides.append(vals @ rec.n_e)
            assert np.abs(sides[0] - sides[1]).max() <= 1e-12


def test_zero_traction_edges_have_zero_trace(isolated_geometry):
    # immersed tips remove the endpoint stress DOFs
    mesh = build_mesh(isolated_geometry, 0.2)
    spaces = build_spaces(mesh, FamilyChoice("full"))
    sd = next(iter(spaces.seg.values()))
    ncell = len(sd.cells)
    assert np.all(sd.sigma_dof[0] == -1)
    assert np.all(sd.sigma_dof[ncell] == -1)


def test_project_u_reproduces_space_functions(mms2_spaces_full):
    spaces = mms2_spaces_full
    vals = project_u(lambda x, y: np.array([2.0, -1.0]), spaces)
    off = spaces.offset_u
    for bd in spaces.bulk.values():
        assert np.allclose(vals[bd.u_dof[:, 0] - off], 2.0, atol=1e-13)
        assert np.allclose(vals[bd.u_dof[:, 1] - off], -1.0, atol=1e-13)
    for pd in spaces.pts.values():
        assert np.allclose(vals[pd.u_dof - off], [2.0, -1.0], atol=1e-14)
