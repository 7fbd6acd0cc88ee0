"""Finite element spaces for the mixed-dimensional elasticity families.

For the two-dimensional lowest-order member of the full family the stress on
the bulk uses two rows of the 6-DOF normal-continuous linear H(div) triangle
element, displacements are piecewise constant vectors, the rotation
multiplier is a piecewise constant scalar, and the auxiliary curl potential
is a pair of continuous quadratics.  Inclusion stresses are continuous
quadratic Lagrange pairs and inclusion displacements discontinuous linears.
The reduced family lowers every trace onto the interfaces by one polynomial
order.

Stress DOFs on the bulk are normal moments against {1, xi - 1/2} in a global
low-to-high edge frame, so shared edges carry identical functionals on both
elements and no per-element orientation signs are needed.  Edges on an
interface are sided: the two sides of a slit are distinct edges.  The curl
potential duplicates vertices across slits (one DOF per triangle fan).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mdelast.meshing import MeshError, MixedMesh, _edge_key
from mdelast.quadrature import gauss01, tri_points


class UnsupportedFamilyError(NotImplementedError):
    pass


@dataclass(frozen=True)
class FamilyChoice:
    variant: str = "full"
    order: int = 0

    def __post_init__(self):
        if self.variant not in ("full", "reduced"):
            raise ValueError(f"unknown family variant {self.variant!r}")


@dataclass
class EdgeRec:
    """A (possibly sided) bulk mesh edge with its global frame."""

    lo: int
    hi: int
    kind: str  # interior | iface | boundary_u | boundary_s
    tris: list
    iface: tuple | None = None   # (interface id, facet position)
    pedge: int | None = None     # polygon edge for boundary kinds
    length: float = 0.0
    t_e: np.ndarray | None = None
    n_e: np.ndarray | None = None
    midpoint: np.ndarray | None = None


@dataclass
class BulkData:
    mid: int
    tri_gidx: np.ndarray
    edges: list
    tri_edges: np.ndarray         # (nt, 3) edge-record index per local edge
    basis_coeff: np.ndarray       # (nt, 6, 6) monomial coeffs per edge dof
    centers: np.ndarray
    scales: np.ndarray
    areas: np.ndarray
    sigma_dof: np.ndarray         # (nedges, 2 rows, 2 moments), -1 if removed
    u_dof: np.ndarray             # (nt, 2)
    r_dof: np.ndarray             # (nt,)
    w_class: np.ndarray           # (nt, 3) vertex-copy class per corner
    w_vertex_dof: np.ndarray      # (nclass, 2)
    w_bubble_dof: np.ndarray      # (nedges, 2), -1 if removed


@dataclass
class SegData:
    mid: int
    cells: np.ndarray             # global 1-cell indices, in arclength order
    node_coords: np.ndarray       # vertex nodes then (full family) midpoints
    node_s: np.ndarray
    cell_nodes: np.ndarray        # (ncell, 3 or 2) local node ids per cell
    sigma_dof: np.ndarray         # (nnode, 2 local rows), -1 if removed
    u_dof: np.ndarray             # (ncell, 2 comps, nprof)
    lengths: np.ndarray
    frame: np.ndarray             # rows (tangent, check normal)
    epsilon: float


@dataclass
class PointData:
    mid: int
    vertex: int
    coords: np.ndarray
    u_dof: np.ndarray             # (2,)
    epsilon: float


@dataclass
class SpaceSet:
    """Discrete stress/displacement/rotation spaces plus the curl potential.

    Global block order: stress by manifold dimension descending, then
    displacement (same manifold order), then rotation.  The potential space
    W is numbered separately; it never enters the saddle system.
    """

    mesh: MixedMesh
    family: FamilyChoice
    bulk: dict = field(default_factory=dict)
    seg: dict = field(default_factory=dict)
    pts: dict = field(default_factory=dict)
    n_sigma: int = 0
    n_u: int = 0
    n_r: int = 0
    n_w: int = 0

    @property
    def geometry(self):
        return self.mesh.geometry

    @property
    def offset_u(self) -> int:
        return self.n_sigma

    @property
    def offset_r(self) -> int:
        return self.n_sigma + self.n_u

    @property
    def total_dim(self) -> int:
        return self.n_sigma + self.n_u + self.n_r

    def epsilon_of_sigma_dofs(self) -> np.ndarray:
        """Per-stress-DOF manifold epsilon (diagonal of the scaling operator)."""
        eps = np.zeros(self.n_sigma)
        for bd in self.bulk.values():
            e = self.geometry.manifold(bd.mid).epsilon
            ids = bd.sigma_dof[bd.sigma_dof >= 0]
            eps[ids] = e
        for sd in self.seg.values():
            ids = sd.sigma_dof[sd.sigma_dof >= 0]
            eps[ids] = sd.epsilon
        return eps

    def epsilon_max_of_u_dofs(self) -> np.ndarray:
        from mdelast.geometry import epsilon_max

        w = np.zeros(self.n_u)
        for bd in self.bulk.values():
            w[bd.u_dof.ravel() - self.offset_u] = epsilon_max(self.geometry, bd.mid)
        for sd in self.seg.values():
            w[sd.u_dof.ravel() - self.offset_u] = epsilon_max(self.geometry, sd.mid)
        for pd in self.pts.values():
            w[pd.u_dof - self.offset_u] = epsilon_max(self.geometry, pd.mid)
        return w

    def epsilon_of_u_dofs(self) -> np.ndarray:
        w = np.zeros(self.n_u)
        for bd in self.bulk.values():
            w[bd.u_dof.ravel() - self.offset_u] = self.geometry.manifold(bd.mid).epsilon
        for sd in self.seg.values():
            w[sd.u_dof.ravel() - self.offset_u] = sd.epsilon
        for pd in self.pts.values():
            w[pd.u_dof - self.offset_u] = pd.epsilon
        return w


def build_spaces(mesh: MixedMesh, family: FamilyChoice) -> SpaceSet:
    """Construct the DOF maps of the chosen family on a mixed mesh."""
    if family.order != 0:
        raise UnsupportedFamilyError(
            f"only order k = 0 is implemented (requested k = {family.order})"
        )
    geometry = mesh.geometry
    if geometry.ambient_dim != 2:
        raise UnsupportedFamilyError("spaces are implemented for n = 2 only")
    spaces = SpaceSet(mesh=mesh, family=family)

    # facet lookup: (triangle, local edge) -> (interface, facet position)
    iface_of_facet = {}
    for j, tr in mesh.trace.items():
        if tr["kind"] != "side":
            continue
        for pos, (ti, le) in enumerate(zip(tr["tri"], tr["local_edge"])):
            iface_of_facet[(int(ti), int(le))] = (j, pos)
    bfacet_type = {}
    for mid, facets in mesh.boundary_facets.items():
        for ti, le, pe in facets:
            kind = geometry.boundary_types[pe]
            bfacet_type[(ti, le)] = ("boundary_u" if kind == "displacement"
                                     else "boundary_s", pe)

    counters = {"sigma": 0, "u": 0, "r": 0, "w": 0}

    bulk_order = sorted(m.id for m in geometry.manifolds_of_dim(2))
    seg_order = sorted(m.id for m in geometry.manifolds_of_dim(1))
    pt_order = sorted(m.id for m in geometry.manifolds_of_dim(0))

    for mid in bulk_order:
        spaces.bulk[mid] = _build_bulk(
            mesh, mid, family, iface_of_facet, bfacet_type, counters
        )
    for mid in seg_order:
        spaces.seg[mid] = _build_seg(mesh, mid, family, counters)
    spaces.n_sigma = counters["sigma"]

    off = spaces.n_sigma
    for mid in bulk_order:
        bd = spaces.bulk[mid]
        nt = len(bd.tri_gidx)
        bd.u_dof = off + counters["u"] + np.arange(2 * nt).reshape(nt, 2)
        counters["u"] += 2 * nt
    for mid in seg_order:
        sd = spaces.seg[mid]
        ncell = len(sd.cells)
        nprof = 2 if family.variant == "full" else 1
        sd.u_dof = off + counters["u"] + np.arange(2 * nprof * ncell).reshape(
            ncell, 2, nprof
        )
        counters["u"] += 2 * nprof * ncell
    for mid in pt_order:
        m = geometry.manifold(mid)
        spaces.pts[mid] = PointData(
            mid=mid, vertex=mesh.point_vertex[mid], coords=m.vertices[0],
            u_dof=off + counters["u"] + np.arange(2), epsilon=m.epsilon,
        )
        counters["u"] += 2
    spaces.n_u = counters["u"]

    off = spaces.n_sigma + spaces.n_u
    for mid in bulk_order:
        bd = spaces.bulk[mid]
        nt = len(bd.tri_gidx)
        bd.r_dof = off + counters["r"] + np.arange(nt)
        counters["r"] += nt
    spaces.n_r = counters["r"]

    _build_w_all(mesh, [spaces.bulk[mid] for mid in bulk_order], family, counters)
    spaces.n_w = counters["w"]
    return spaces


def _build_bulk(mesh, mid, family, iface_of_facet, bfacet_type, counters):
    geometry = mesh.geometry
    tri_gidx = mesh.tri_of[mid]
    tris = mesh.tris[tri_gidx]
    verts = mesh.vertices

    # sided edge records: interface facets stay unglued
    edges: list[EdgeRec] = []
    tri_edges = -np.ones((len(tri_gidx), 3), dtype=int)
    open_edges: dict[tuple, int] = {}
    for tl, gt in enumerate(tri_gidx):
        t = mesh.tris[gt]
        for le in range(3):
            a, b = int(t[(le + 1) % 3]), int(t[(le + 2) % 3])
            key = _edge_key(a, b)
            facet = iface_of_facet.get((int(gt), le))
            if facet is not None:
                rec = EdgeRec(lo=key[0], hi=key[1], kind="iface",
                              tris=[(int(gt), le, tl)], iface=facet)
                tri_edges[tl, le] = len(edges)
                edges.append(rec)
                continue
            bnd = bfacet_type.get((int(gt), le))
            if bnd is not None:
                rec = EdgeRec(lo=key[0], hi=key[1], kind=bnd[0],
                              tris=[(int(gt), le, tl)], pedge=bnd[1])
                tri_edges[tl, le] = len(edges)
                edges.append(rec)
                continue
            if key in open_edges:
                ei = open_edges.pop(key)
                edges[ei].tris.append((int(gt), le, tl))
                tri_edges[tl, le] = ei
            else:
                rec = EdgeRec(lo=key[0], hi=key[1], kind="interior", tris=[(int(gt), le, tl)])
                open_edges[key] = len(edges)
                tri_edges[tl, le] = len(edges)
                edges.append(rec)
    if open_edges:
        raise MeshError(f"bulk manifold {mid}: unmatched interior edges {open_edges}")

    for rec in edges:
        d = verts[rec.hi] - verts[rec.lo]
        rec.length = float(np.linalg.norm(d))
        rec.t_e = d / rec.length
        rec.n_e = np.array([rec.t_e[1], -rec.t_e[0]])
        rec.midpoint = 0.5 * (verts[rec.lo] + verts[rec.hi])

    centers = verts[tris].mean(axis=1)
    scales = np.linalg.norm(verts[tris] - centers[:, None, :], axis=2).max(axis=1)
    v1 = verts[tris[:, 1]] - verts[tris[:, 0]]
    v2 = verts[tris[:, 2]] - verts[tris[:, 0]]
    areas = 0.5 * np.abs(v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0])

    basis_coeff = _bdm_basis_coeff(mesh, tri_gidx, tri_edges, edges, centers, scales)

    sigma_dof = -np.ones((len(edges), 2, 2), dtype=int)
    for ei, rec in enumerate(edges):
        if rec.kind == "boundary_s":
            continue
        moments = (0,) if (family.variant == "reduced" and rec.kind == "iface") else (0, 1)
        for row in range(2):
            for m in moments:
                sigma_dof[ei, row, m] = counters["sigma"]
                counters["sigma"] += 1

    return BulkData(
        mid=mid, tri_gidx=tri_gidx, edges=edges, tri_edges=tri_edges,
        basis_coeff=basis_coeff, centers=centers, scales=scales, areas=areas,
        sigma_dof=sigma_dof, u_dof=None, r_dof=None,
        w_class=None, w_vertex_dof=None, w_bubble_dof=None,
    )


def _bdm_basis_coeff(mesh, tri_gidx, tri_edges, edges, centers, scales):
    """Per-triangle dual basis of the 6 normal-moment functionals.

    Monomials are local and scaled, m = [1, (x-c)/s, (y-c)/s] per component;
    DOF d = 2 * local_edge + moment.
    """
    nt = len(tri_gidx)
    gx, gw = gauss01(2)
    V = np.zeros((nt, 6, 6))
    for tl in range(nt):
        c = centers[tl]
        s = scales[tl]
        for le in range(3):
            rec = edges[tri_edges[tl, le]]
            pts = mesh.vertices[rec.lo][None, :] + gx[:, None] * (
                mesh.vertices[rec.hi] - mesh.vertices[rec.lo]
            )[None, :]
            xl = (pts - c) / s
            # v(x) = (c1 + c2 X + c3 Y, c4 + c5 X + c6 Y), X = (x-cx)/s
            mono = np.stack(
                [np.ones(len(gx)), xl[:, 0], xl[:, 1]], axis=1
            )  # (q, 3)
            for comp in range(2):
                base = 3 * comp
                vn = rec.n_e[comp] * mono  # (q, 3) contribution to v . n_e
                V[tl, 2 * le + 0, base:base + 3] += gw @ vn
                V[tl, 2 * le + 1, base:base + 3] += 12.0 * (gw * (gx - 0.5)) @ vn
    return np.linalg.inv(V)


def _build_seg(mesh, mid, family, counters):
    geometry = mesh.geometry
    man = geometry.manifold(mid)
    cells = mesh.cells_of[mid]
    ncell = len(cells)
    a = man.vertices[0]
    t = man.tangent

    vcoords = [mesh.vertices[mesh.cells1[cells[0]][0]]]
    for ci in cells:
        vcoords.append(mesh.vertices[mesh.cells1[ci][1]])
    vcoords = np.array(vcoords)
    if family.variant == "full":
        mids = 0.5 * (vcoords[:-1] + vcoords[1:])
        node_coords = np.vstack([vcoords, mids])
        cell_nodes = np.array(
            [[k, k + 1, ncell + 1 + k] for k in range(ncell)], dtype=int
        )
    else:
        node_coords = vcoords
        cell_nodes = np.array([[k, k + 1] for k in range(ncell)], dtype=int)
    node_s = (node_coords - a) @ t
    lengths = np.linalg.norm(vcoords[1:] - vcoords[:-1], axis=1)

    nnode = len(node_coords)
    sigma_dof = -np.ones((nnode, 2), dtype=int)
    removed = set()
    for label, node in (("a", 0), ("b", ncell)):
        if man.boundary_tags.get(label) in ("tip", "traction"):
            removed.add(node)
    for node in range(nnode):
        if node in removed:
            continue
        for row in range(2):
            sigma_dof[node, row] = counters["sigma"]
            counters["sigma"] += 1

    return SegData(
        mid=mid, cells=cells, node_coords=node_coords, node_s=node_s,
        cell_nodes=cell_nodes, sigma_dof=sigma_dof, u_dof=None,
        lengths=lengths, frame=man.frame, epsilon=man.epsilon,
    )


def _build_w_all(mesh, bulks: list, family, counters):
    """Curl-potential DOFs: vertex fans split across slits, edge bubbles.

    Traces on zero-traction boundary runs are forced constant (bubbles
    dropped, endpoint values identified) so that the rotated gradients stay
    inside the constrained stress space; the reduced family also drops
    bubbles on interface edges.  Where an inclusion endpoint carries a
    zero-traction tag, the potential is identified across every sector
    meeting that vertex, including sectors of different bulk manifolds, so
    the inclusion rows of the curl land in the constrained stress space.
    """
    offsets = {}
    total = 0
    for bd in bulks:
        offsets[bd.mid] = total
        total += 3 * len(bd.tri_gidx)
    parent = list(range(total))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    def corner_index(bd, tl, vid):
        t = mesh.tris[bd.tri_gidx[tl]]
        for c in range(3):
            if int(t[c]) == vid:
                return offsets[bd.mid] + 3 * tl + c
        raise MeshError("vertex not in triangle")

    for bd in bulks:
        for rec in bd.edges:
            if rec.kind == "interior" and len(rec.tris) == 2:
                (_g1, _le1, tl1), (_g2, _le2, tl2) = rec.tris
                for vid in (rec.lo, rec.hi):
                    union(corner_index(bd, tl1, vid), corner_index(bd, tl2, vid))
        # constant trace along zero-traction boundary runs
        for rec in bd.edges:
            if rec.kind == "boundary_s":
                (_g1, _le1, tl1) = rec.tris[0]
                union(corner_index(bd, tl1, rec.lo), corner_index(bd, tl1, rec.hi))
    # single-valued potential where a slit endpoint carries a zero-traction tag
    geometry = mesh.geometry
    for man in geometry.manifolds_of_dim(1):
        for label, node_idx in (("a", 0), ("b", 1)):
            if man.boundary_tags.get(label) != "traction":
                continue
            p = man.vertices[node_idx]
            hits = np.flatnonzero(np.all(np.abs(mesh.vertices - p) < 1e-13, axis=1))
            if not len(hits):
                continue
            vid = int(hits[0])
            owners = [
                corner_index(bd, tl, vid)
                for bd in bulks
                for tl, gt in enumerate(bd.tri_gidx)
                if vid in mesh.tris[gt]
            ]
            for o in owners[1:]:
                union(owners[0], o)

    roots = {}
    for bd in bulks:
        nt = len(bd.tri_gidx)
        w_class = np.zeros((nt, 3), dtype=int)
        for tl in range(nt):
            for c in range(3):
                r = find(offsets[bd.mid] + 3 * tl + c)
                if r not in roots:
                    roots[r] = counters["w"]
                    counters["w"] += 2
                w_class[tl, c] = roots[r]
        bd.w_class = w_class
    # per-manifold view: local class index -> the shared global DOF pair
    for bd in bulks:
        classes = sorted(set(bd.w_class.ravel().tolist()))
        remap = {g: k for k, g in enumerate(classes)}
        w_vertex_dof = np.zeros((len(classes), 2), dtype=int)
        for g, k in remap.items():
            w_vertex_dof[k] = [g, g + 1]
        nt = len(bd.tri_gidx)
        for tl in range(nt):
            for c in range(3):
                bd.w_class[tl, c] = remap[bd.w_class[tl, c]]
        bd.w_vertex_dof = w_vertex_dof

    for bd in bulks:
        w_bubble_dof = -np.ones((len(bd.edges), 2), dtype=int)
        for ei, rec in enumerate(bd.edges):
            if rec.kind == "boundary_s":
                continue
            if family.variant == "reduced" and rec.kind == "iface":
                continue
            w_bubble_dof[ei] = counters["w"] + np.arange(2)
            counters["w"] += 2
        bd.w_bubble_dof = w_bubble_dof


# ----------------------------------------------------------------------------
# basis evaluation helpers
# ----------------------------------------------------------------------------


def bdm_eval(bd: BulkData, tl: int, pts: np.ndarray) -> np.ndarray:
    """Values of the 6 edge-dof vector fields of one triangle: (npts, 6, 2)."""
    xl = (pts - bd.centers[tl]) / bd.scales[tl]
    mono = np.stack([np.ones(len(pts)), xl[:, 0], xl[:, 1]], axis=1)
    coeff = bd.basis_coeff[tl]  # (6 mono, 6 dof)
    out = np.empty((len(pts), 6, 2))
    out[:, :, 0] = mono @ coeff[0:3]
    out[:, :, 1] = mono @ coeff[3:6]
    return out


def bdm_eval_many(bd: BulkData, pts: np.ndarray) -> np.ndarray:
    """Vectorized bdm_eval over all triangles: pts (nt, nq, 2) -> (nt, nq, 6, 2)."""
    xl = (pts - bd.centers[:, None, :]) / bd.scales[:, None, None]
    mono = np.concatenate([np.ones(xl.shape[:2] + (1,)), xl], axis=2)  # (nt, nq, 3)
    out = np.empty(pts.shape[:2] + (6, 2))
    out[..., 0] = np.einsum("tqm,tmd->tqd", mono, bd.basis_coeff[:, 0:3, :])
    out[..., 1] = np.einsum("tqm,tmd->tqd", mono, bd.basis_coeff[:, 3:6, :])
    return out


def bdm_div(bd: BulkData) -> np.ndarray:
    """Constant divergence of each edge-dof field: (nt, 6)."""
    return (bd.basis_coeff[:, 1, :] + bd.basis_coeff[:, 5, :]) / bd.scales[:, None]


def seg_shape(family: FamilyChoice, xi: np.ndarray) -> np.ndarray:
    """Lagrange shapes per cell in the cell parameter: (nxi, nodes)."""
    xi = np.asarray(xi)
    if family.variant == "full":
        return np.stack(
            [(1 - xi) * (1 - 2 * xi), xi * (2 * xi - 1), 4 * xi * (1 - xi)], axis=-1
        )
    return np.stack([1 - xi, xi], axis=-1)


def seg_shape_deriv(family: FamilyChoice, xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi)
    if family.variant == "full":
        return np.stack([4 * xi - 3, 4 * xi - 1, 4 - 8 * xi], axis=-1)
    return np.stack([-np.ones_like(xi), np.ones_like(xi)], axis=-1)


def w_shape(bary: np.ndarray) -> np.ndarray:
    """Hierarchical quadratic shapes from barycentric points: (nq, 6).

    Order: three vertex hats, then the bubble of local edge k (opposite
    vertex k), scaled to one at the edge midpoint.
    """
    l0, l1, l2 = bary[:, 0], bary[:, 1], bary[:, 2]
    return np.stack([l0, l1, l2, 4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1], axis=1)


def w_shape_grad(bary_grad: np.ndarray, bary: np.ndarray) -> np.ndarray:
    """Gradients of the hierarchical shapes: (nq, 6, 2).

    ``bary_grad`` holds the constant barycentric gradients (3, 2).
    """
    nq = len(bary)
    g = np.empty((nq, 6, 2))
    for k in range(3):
        g[:, k, :] = bary_grad[k]
    for k in range(3):
        a, b = (k + 1) % 3, (k + 2) % 3
        g[:, 3 + k, :] = 4 * (
            bary[:, a, None] * bary_grad[b][None, :]
            + bary[:, b, None] * bary_grad[a][None, :]
        )
    return g


def bary_gradients(coords: np.ndarray) -> np.ndarray:
    """Barycentric gradients of a triangle (3, 2)."""
    v0, v1, v2 = coords
    d1 = v1 - v0
    d2 = v2 - v0
    area2 = float(d1[0] * d2[1] - d1[1] * d2[0])
    g = np.empty((3, 2))
    g[0] = np.array([v1[1] - v2[1], v2[0] - v1[0]]) / area2
    g[1] = np.array([v2[1] - v0[1], v0[0] - v2[0]]) / area2
    g[2] = np.array([v0[1] - v1[1], v1[0] - v0[0]]) / area2
    return g


# ----------------------------------------------------------------------------
# canonical interpolation and projections
# ----------------------------------------------------------------------------


def _resolve_fields(field_spec, spaces: SpaceSet):
    """Normalize a stress field spec to per-manifold callables."""
    geometry = spaces.geometry
    if callable(field_spec):
        out = {}
        for bd in spaces.bulk.values():
            out[bd.mid] = field_spec
        for sd in spaces.seg.values():
            man = geometry.manifold(sd.mid)
            Q = man.frame
            t = man.tangent

            def local(x, y, _f=field_spec, _Q=Q, _t=t):
                tens = np.asarray(_f(x, y))
                return _Q @ tens @ _t

            out[sd.mid] = local
        return out
    return dict(field_spec)


def canonical_interpolate(field, spaces: SpaceSet) -> np.ndarray:
    """Facet-moment interpolation of a smooth stress field.

    ``field`` is either one ambient-tensor callable f(x, y) -> (2, 2) or a
    dict keyed by manifold id: bulk entries return ambient (2, 2) tensors,
    segment entries the two local components (along-tangent row, along-normal
    row).  The divergence of the result matches the displacement-space
    projection of the divergence cell by cell.
    """
    fields = _resolve_fields(field, spaces)
    sigma = np.zeros(spaces.n_sigma)
    gx, gw = gauss01(5)
    mesh = spaces.mesh
    for bd in spaces.bulk.values():
        f = fields[bd.mid]
        for ei, rec in enumerate(bd.edges):
            pts = mesh.vertices[rec.lo][None, :] + gx[:, None] * (
                mesh.vertices[rec.hi] - mesh.vertices[rec.lo]
            )[None, :]
            vals = np.stack([np.asarray(f(p[0], p[1]), dtype=float) for p in pts])
            tn = vals @ rec.n_e  # (q, 2) rows . n_e
            for row in range(2):
                n1 = float(gw @ tn[:, row])
                n2 = 12.0 * float((gw * (gx - 0.5)) @ tn[:, row])
                for m, val in ((0, n1), (1, n2)):
                    dof = bd.sigma_dof[ei, row, m]
                    if dof >= 0:
                        sigma[dof] = val
    for sd in spaces.seg.values():
        f = fields[sd.mid]
        for node in range(len(sd.node_coords)):
            x, y = sd.node_coords[node]
            val = np.asarray(f(x, y), dtype=float).reshape(2)
            for row in range(2):
                dof = sd.sigma_dof[node, row]
                if dof >= 0:
                    sigma[dof] = val[row]
    return sigma


def project_u(field, spaces: SpaceSet) -> np.ndarray:
    """Componentwise L2 projection onto the displacement space.

    ``field`` maps manifold id to a callable f(x, y) -> (2,) ambient vector
    (points included); a bare callable applies everywhere.
    """
    def get(mid):
        return field if callable(field) else field[mid]

    u = np.zeros(spaces.n_u)
    off = spaces.offset_u
    mesh = spaces.mesh
    for bd in spaces.bulk.values():
        f = get(bd.mid)
        coords = mesh.tri_coords(bd.tri_gidx)
        pts, wts = tri_points(coords, degree=8)
        for tl in range(len(bd.tri_gidx)):
            vals = np.stack([np.asarray(f(p[0], p[1]), dtype=float) for p in pts[tl]])
            avg = (wts[tl] @ vals) / bd.areas[tl]
            u[bd.u_dof[tl] - off] = avg
    gx, gw = gauss01(6)
    for sd in spaces.seg.values():
        f = get(sd.mid)
        nprof = sd.u_dof.shape[2]
        for k in range(len(sd.cells)):
            nl = sd.cell_nodes[k]
            pa = sd.node_coords[nl[0]]
            pb = sd.node_coords[nl[1]]
            pts = pa[None, :] + gx[:, None] * (pb - pa)[None, :]
            vals = np.stack([np.asarray(f(p[0], p[1]), dtype=float) for p in pts])
            for comp in range(2):
                u[sd.u_dof[k, comp, 0] - off] = float(gw @ vals[:, comp])
                if nprof == 2:
                    u[sd.u_dof[k, comp, 1] - off] = 12.0 * float(
                        (gw * (gx - 0.5)) @ vals[:, comp]
                    )
    for pd in spaces.pts.values():
        f = get(pd.mid)
        u[pd.u_dof - off] = np.asarray(f(pd.coords[0], pd.coords[1]), dtype=float)
    return u


def project_r(field, spaces: SpaceSet) -> np.ndarray:
    """L2 projection of a scalar onto the rotation space (bulk constants)."""
    def get(mid):
        return field if callable(field) else field[mid]

    r = np.zeros(spaces.n_r)
    off = spaces.offset_r
    mesh = spaces.mesh
    for bd in spaces.bulk.values():
        f = get(bd.mid)
        coords = mesh.tri_coords(bd.tri_gidx)
        pts, wts = tri_points(coords, degree=8)
        for tl in range(len(bd.tri_gidx)):
            vals = np.array([float(f(p[0], p[1])) for p in pts[tl]])
            r[bd.r_dof[tl] - off] = float(wts[tl] @ vals) / bd.areas[tl]
    return r
