"""Conforming simplicial meshes on every manifold of the decomposition.

The bulk is triangulated by a constrained Delaunay procedure (scipy Delaunay
plus Sloan edge-flip recovery of the inclusion and boundary constraints), the
inclusions are meshed by equispaced subdivision, and bijective trace maps
identify interface facets with lower-dimensional cells.  Vertices on an
interface are shared between the bulk and inclusion meshes, so traces match
bitwise; function spaces introduce their own duplication where slits require
it.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay

from mdelast.geometry import MERGE_REL, GeometryError, MixedDimGeometry, _point_in_walk


class MeshError(RuntimeError):
    """Raised when a geometry cannot be meshed at the requested resolution."""


def _edge_key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


def _tri_local_edge(tri, a, b):
    """Local index of edge {a, b} in triangle `tri` (edge k is opposite vertex k)."""
    for k in range(3):
        if {tri[(k + 1) % 3], tri[(k + 2) % 3]} == {a, b}:
            return k
    raise MeshError("edge not part of triangle")


@dataclass
class MixedMesh:
    """Per-manifold cells over a shared vertex table, with trace maps.

    ``trace[j]`` aligns with the cell order of the lower manifold: for a
    segment-side interface it lists (triangle, local edge, flip, nsign) where
    ``flip`` says the facet's low-to-high vertex order opposes the cell
    direction and ``nsign`` is the interface normal expressed in the facet's
    global edge frame.  For a point interface it holds the adjacent end cell
    and the tangent-coordinate sign of the interface normal.
    """

    geometry: MixedDimGeometry
    vertices: np.ndarray
    tris: np.ndarray
    tri_mid: np.ndarray
    cells1: np.ndarray
    cell1_mid: np.ndarray
    point_vertex: dict
    trace: dict
    boundary_facets: dict
    h: float
    shape_ratio: float
    tri_parent: np.ndarray | None = None
    cell1_parent: np.ndarray | None = None
    parent: "MixedMesh | None" = None
    tri_of: dict = field(init=False)
    cells_of: dict = field(init=False)

    def __post_init__(self):
        self.tri_of = {}
        self.cells_of = {}
        for m in self.geometry.manifolds:
            if m.dim == 2:
                self.tri_of[m.id] = np.flatnonzero(self.tri_mid == m.id)
            elif m.dim == 1:
                self.cells_of[m.id] = np.flatnonzero(self.cell1_mid == m.id)

    def tri_coords(self, idx=None) -> np.ndarray:
        t = self.tris if idx is None else self.tris[idx]
        return self.vertices[t]

    def edge_vertices(self, tri_idx: int, local_edge: int) -> tuple[int, int]:
        t = self.tris[tri_idx]
        return int(t[(local_edge + 1) % 3]), int(t[(local_edge + 2) % 3])

    def interface_edge_keys(self) -> set:
        keys = set()
        for row in self.cells1:
            keys.add(_edge_key(int(row[0]), int(row[1])))
        return keys

    def cell_lengths(self, mid: int) -> np.ndarray:
        cells = self.cells1[self.cells_of[mid]]
        d = self.vertices[cells[:, 1]] - self.vertices[cells[:, 0]]
        return np.linalg.norm(d, axis=1)


def trace_cells(mesh: MixedMesh, j: int) -> list:
    """Facets of the upper mesh on interface j, ordered like the lower cells."""
    if j not in mesh.trace:
        raise MeshError(f"unknown interface {j}")
    tr = mesh.trace[j]
    if tr["kind"] == "side":
        return [(int(t), int(e)) for t, e in zip(tr["tri"], tr["local_edge"])]
    return [(int(tr["cell"]), int(tr["local_vertex"]))]


# ----------------------------------------------------------------------------
# mesh generation
# ----------------------------------------------------------------------------


def build_mesh(
    geometry: MixedDimGeometry,
    target_h: float,
    min_angle_deg: float = 5.0,
    max_shape_ratio: float = 30.0,
) -> MixedMesh:
    """Mesh every manifold, conforming to all lower-dimensional features."""
    if target_h <= 0:
        raise MeshError("target_h must be positive")
    poly = geometry.polygon
    if poly is None:
        raise GeometryError("geometry carries no bounding polygon; cannot mesh")
    diam = float(np.max(poly.max(axis=0) - poly.min(axis=0))) * math.sqrt(2.0)
    tol = MERGE_REL * diam

    seg_manifolds = geometry.manifolds_of_dim(1)
    h_eff = target_h
    if seg_manifolds:
        lmin = min(m.length for m in seg_manifolds)
        if lmin < 2 * tol:
            raise MeshError(
                f"degenerate segment of length {lmin:g} (below 2x geometric tolerance)"
            )
        if target_h > lmin:
            warnings.warn(
                f"target_h {target_h:g} exceeds shortest segment {lmin:g}; refining",
                stacklevel=2,
            )
            h_eff = lmin

    spacing = 0.72 * h_eff
    last_err = None
    for _attempt in range(4):
        try:
            mesh = _build_once(geometry, spacing, tol, min_angle_deg, max_shape_ratio)
        except MeshError as err:
            last_err = err
            spacing *= 0.75
            continue
        if mesh.h <= target_h * (1 + 1e-12):
            return mesh
        spacing *= 0.75
    if last_err is not None:
        raise last_err
    raise MeshError(f"could not reach target_h = {target_h:g}")


def _build_once(geometry, spacing, tol, min_angle_deg, max_shape_ratio):
    poly = geometry.polygon
    nedges = len(poly)

    verts: list[np.ndarray] = []
    vert_index: dict[tuple, int] = {}
    grid: dict[tuple, list[int]] = {}
    cell = max(tol * 16.0, 1e-300)

    def add_vertex(p) -> int:
        # merge points within the geometric tolerance; a spatial hash keeps
        # the lookup exact even when the same point is recomputed along a
        # different arithmetic path (for example a boundary-edge projection)
        key = (float(p[0]), float(p[1]))
        if key in vert_index:
            return vert_index[key]
        gx, gy = int(key[0] // cell), int(key[1] // cell)
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for idx in grid.get((gx + dx, gy + dy), ()):
                    q = verts[idx]
                    if abs(q[0] - key[0]) <= tol and abs(q[1] - key[1]) <= tol:
                        vert_index[key] = idx
                        return idx
        idx = len(verts)
        vert_index[key] = idx
        verts.append(np.array(key))
        grid.setdefault((gx, gy), []).append(idx)
        return idx

    # inclusion subdivisions (cells ordered along the manifold direction)
    seg_chains: dict[int, list[int]] = {}
    for m in geometry.manifolds_of_dim(1):
        ncell = max(1, math.ceil(m.length / spacing))
        chain = []
        for k in range(ncell + 1):
            p = m.vertices[0] + (k / ncell) * (m.vertices[1] - m.vertices[0])
            chain.append(add_vertex(p))
        seg_chains[m.id] = chain
    for m in geometry.manifolds_of_dim(0):
        add_vertex(m.vertices[0])

    # polygon boundary subdivisions; existing constraint vertices on an edge
    # (inclusion endpoints) are chained in
    bnd_pieces: list[tuple[int, int, int]] = []
    for k in range(nedges):
        a, b = poly[k], poly[(k + 1) % nedges]
        L = float(np.linalg.norm(b - a))
        d = (b - a) / L
        on_edge = []
        for key, idx in vert_index.items():
            p = np.array(key)
            t = float((p - a) @ d)
            dp = p - a
            if -tol <= t <= L + tol and abs(float(d[0] * dp[1] - d[1] * dp[0])) <= tol:
                on_edge.append((t, idx))
        params = sorted({0.0, L}.union(t for t, _ in on_edge if tol < t < L - tol))
        fine = [params[0]]
        for t0, t1 in zip(params, params[1:]):
            npc = max(1, math.ceil((t1 - t0) / spacing))
            fine.extend(t0 + (t1 - t0) * (kk + 1) / npc for kk in range(npc))
        chain = [add_vertex(a + t * d) for t in fine]
        for v0, v1 in zip(chain, chain[1:]):
            bnd_pieces.append((v0, v1, k))

    n_constraint = len(verts)

    # interior points on a hexagonal lattice, kept clear of all constraints
    cons_pts = np.array(verts)
    seg_list = []
    for m in geometry.manifolds_of_dim(1):
        seg_list.append((m.vertices[0], m.vertices[1]))
    for k in range(nedges):
        seg_list.append((poly[k], poly[(k + 1) % nedges]))
    xmin, ymin = poly.min(axis=0)
    xmax, ymax = poly.max(axis=0)
    row_h = spacing * math.sqrt(3.0) / 2.0
    clearance = 0.48 * spacing
    j = 0
    y = ymin + row_h * 0.6
    while y < ymax:
        x = xmin + (spacing * 0.5 if j % 2 else spacing * 0.9)
        while x < xmax:
            p = np.array([x, y])
            if _point_in_walk(p, poly) and _clear_of(p, seg_list, cons_pts, clearance):
                verts.append(p)
            x += spacing
        y += row_h
        j += 1

    vertices = np.array(verts)
    if len(vertices) < 3:
        raise MeshError("not enough points to triangulate")
    dt = Delaunay(vertices)
    tris = [tuple(int(v) for v in s) for s in dt.simplices]
    tris = [_ccw_tri(t, vertices) for t in tris]

    # recover all constraint edges by Sloan flips
    constraints = []
    for mid in sorted(seg_chains):
        chain = seg_chains[mid]
        constraints.extend(zip(chain, chain[1:]))
    constraints.extend((v0, v1) for v0, v1, _k in bnd_pieces)
    tris = _recover_edges(tris, vertices, constraints)

    # drop triangles outside the polygon
    keep = []
    for t in tris:
        c = vertices[list(t)].mean(axis=0)
        if _point_in_walk(c, poly):
            keep.append(t)
    tris = keep
    if not tris:
        raise MeshError("triangulation empty after clipping")

    tri_arr = np.array(tris, dtype=int)
    _check_quality(tri_arr, vertices, min_angle_deg, max_shape_ratio)

    # flood fill regions across non-interface edges, then match to manifolds
    iface_keys = set()
    for mid in seg_chains:
        chain = seg_chains[mid]
        iface_keys.update(_edge_key(a, b) for a, b in zip(chain, chain[1:]))
    tri_mid = _assign_regions(tri_arr, vertices, geometry, iface_keys)

    cells1_rows = []
    cell1_mid = []
    for mid in sorted(seg_chains):
        chain = seg_chains[mid]
        for a, b in zip(chain, chain[1:]):
            cells1_rows.append((a, b))
            cell1_mid.append(mid)
    cells1 = np.array(cells1_rows, dtype=int) if cells1_rows else np.zeros((0, 2), int)
    cell1_mid = np.array(cell1_mid, dtype=int) if cell1_mid else np.zeros((0,), int)

    point_vertex = {}
    for m in geometry.manifolds_of_dim(0):
        key = (float(m.vertices[0][0]), float(m.vertices[0][1]))
        point_vertex[m.id] = vert_index[key]

    mesh = MixedMesh(
        geometry=geometry, vertices=vertices, tris=tri_arr, tri_mid=tri_mid,
        cells1=cells1, cell1_mid=cell1_mid, point_vertex=point_vertex,
        trace={}, boundary_facets={}, h=0.0, shape_ratio=0.0,
    )
    _finalize(mesh)
    return mesh


def _clear_of(p, seg_list, cons_pts, clearance) -> bool:
    if len(cons_pts) and np.min(np.linalg.norm(cons_pts - p, axis=1)) < clearance:
        return False
    for a, b in seg_list:
        d = b - a
        L2 = float(d @ d)
        t = float(np.clip((p - a) @ d / L2, 0.0, 1.0))
        if np.linalg.norm(p - (a + t * d)) < clearance:
            return False
    return True


def _ccw_tri(t, vertices):
    a, b, c = vertices[t[0]], vertices[t[1]], vertices[t[2]]
    if float((b - a)[0] * (c - a)[1] - (b - a)[1] * (c - a)[0]) < 0:
        return (t[0], t[2], t[1])
    return t


def _orient(a, b, c, scale) -> int:
    ab = b - a
    ac = c - a
    v = float(ab[0] * ac[1] - ab[1] * ac[0])
    if abs(v) <= 1e-14 * scale:
        return 0
    return 1 if v > 0 else -1


def _edges_cross(p, q, u, v, scale) -> bool:
    o1 = _orient(u, v, p, scale)
    o2 = _orient(u, v, q, scale)
    o3 = _orient(p, q, u, scale)
    o4 = _orient(p, q, v, scale)
    return o1 * o2 < 0 and o3 * o4 < 0


def _recover_edges(tris, vertices, constraints):
    """Force every constraint pair to appear as a triangulation edge."""
    scale = float(np.max(vertices.max(axis=0) - vertices.min(axis=0))) ** 2
    tris = [tuple(t) for t in tris]
    edge_map: dict[tuple, list[int]] = {}

    def register(ti):
        t = tris[ti]
        for k in range(3):
            edge_map.setdefault(_edge_key(t[(k + 1) % 3], t[(k + 2) % 3]), []).append(ti)

    def unregister(ti):
        t = tris[ti]
        for k in range(3):
            key = _edge_key(t[(k + 1) % 3], t[(k + 2) % 3])
            edge_map[key].remove(ti)
            if not edge_map[key]:
                del edge_map[key]

    for ti in range(len(tris)):
        register(ti)

    for u, v in constraints:
        key = _edge_key(u, v)
        if key in edge_map:
            continue
        pu, pv = vertices[u], vertices[v]
        crossing = deque(
            k for k in list(edge_map)
            if u not in k and v not in k
            and _edges_cross(vertices[k[0]], vertices[k[1]], pu, pv, scale)
        )
        guard = 0
        limit = 40 * max(1, len(crossing)) ** 2 + 400
        while crossing:
            guard += 1
            if guard > limit:
                raise MeshError(
                    f"edge recovery stalled for constraint {u}-{v} (sliver geometry?)"
                )
            a, b = crossing.popleft()
            ekey = _edge_key(a, b)
            owners = edge_map.get(ekey)
            if not owners or len(owners) != 2:
                continue
            t1, t2 = owners
            c = next(x for x in tris[t1] if x not in ekey)
            d = next(x for x in tris[t2] if x not in ekey)
            pa, pb, pc, pd = vertices[a], vertices[b], vertices[c], vertices[d]
            convex = (
                _orient(pc, pd, pa, scale) * _orient(pc, pd, pb, scale) < 0
                and _orient(pa, pb, pc, scale) * _orient(pa, pb, pd, scale) < 0
            )
            if not convex:
                crossing.append((a, b))
                continue
            unregister(t1)
            unregister(t2)
            tris[t1] = _ccw_tri((a, c, d), vertices)
            tris[t2] = _ccw_tri((b, c, d), vertices)
            register(t1)
            register(t2)
            if _edge_key(c, d) != _edge_key(u, v) and c != u and c != v and d != u and d != v:
                if _edges_cross(pc, pd, pu, pv, scale):
                    crossing.append((c, d))
        if _edge_key(u, v) not in edge_map:
            raise MeshError(f"failed to recover constraint edge {u}-{v}")
    return tris


def _check_quality(tri_arr, vertices, min_angle_deg, max_shape_ratio):
    p = vertices[tri_arr]
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    lengths = np.linalg.norm(e, axis=2)
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    area2 = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    if np.any(area2 <= 0):
        raise MeshError("degenerate (zero-area) triangle")
    # min angle via law of sines: sin(angle_k) = area2 / (product of adjacent edges)
    lp = np.stack([lengths[:, 1] * lengths[:, 2],
                   lengths[:, 2] * lengths[:, 0],
                   lengths[:, 0] * lengths[:, 1]], axis=1)
    sines = np.clip(area2[:, None] / lp, -1.0, 1.0)
    min_angle = math.degrees(float(np.arcsin(sines).min()))
    if min_angle < min_angle_deg:
        raise MeshError(
            f"sliver triangle with angle {min_angle:.3f} deg below tolerance "
            f"{min_angle_deg:g}"
        )
    circum = lengths.prod(axis=1) / (2.0 * area2)
    inr = area2 / lengths.sum(axis=1)
    ratio = float((circum / inr).max())
    if ratio > max_shape_ratio:
        raise MeshError(f"shape-regularity ratio {ratio:.2f} exceeds {max_shape_ratio:g}")


def _assign_regions(tri_arr, vertices, geometry, iface_keys):
    nt = len(tri_arr)
    edge_map: dict[tuple, list[int]] = {}
    for ti, t in enumerate(tri_arr):
        for k in range(3):
            edge_map.setdefault(_edge_key(int(t[(k + 1) % 3]), int(t[(k + 2) % 3])), []).append(ti)
    region = -np.ones(nt, dtype=int)
    nregions = 0
    for seed in range(nt):
        if region[seed] >= 0:
            continue
        stack = [seed]
        region[seed] = nregions
        while stack:
            ti = stack.pop()
            t = tri_arr[ti]
            for k in range(3):
                key = _edge_key(int(t[(k + 1) % 3]), int(t[(k + 2) % 3]))
                if key in iface_keys:
                    continue
                for tj in edge_map[key]:
                    if region[tj] < 0:
                        region[tj] = nregions
                        stack.append(tj)
        nregions += 1

    bulk = geometry.manifolds_of_dim(2)
    reg_to_mid = {}
    if nregions == 1 and len(bulk) == 1:
        reg_to_mid[0] = bulk[0].id
    else:
        for r in range(nregions):
            ti = int(np.flatnonzero(region == r)[0])
            c = vertices[tri_arr[ti]].mean(axis=0)
            hits = [m.id for m in bulk if _point_in_walk(c, m.vertices)]
            if len(hits) != 1:
                raise MeshError(
                    f"mesh region {r} matches {len(hits)} bulk manifolds; "
                    "geometry and mesh are inconsistent"
                )
            reg_to_mid[r] = hits[0]
    if len(set(reg_to_mid.values())) != len(bulk) or nregions != len(bulk):
        raise MeshError(
            f"found {nregions} mesh regions for {len(bulk)} bulk manifolds"
        )
    return np.array([reg_to_mid[int(r)] for r in region], dtype=int)


def _finalize(mesh: MixedMesh):
    """Build trace maps, boundary facets, and size/quality metadata."""
    geometry = mesh.geometry
    vertices = mesh.vertices
    tri_arr = mesh.tris
    edge_map: dict[tuple, list[int]] = {}
    for ti, t in enumerate(tri_arr):
        for k in range(3):
            edge_map.setdefault(_edge_key(int(t[(k + 1) % 3]), int(t[(k + 2) % 3])), []).append(ti)

    trace = {}
    for itf in geometry.interfaces:
        lo = geometry.manifold(itf.lower)
        up = geometry.manifold(itf.upper)
        if lo.dim == 1:
            rows_tri, rows_edge, rows_flip, rows_nsign = [], [], [], []
            for ci in mesh.cells_of[lo.id]:
                a, b = int(mesh.cells1[ci][0]), int(mesh.cells1[ci][1])
                key = _edge_key(a, b)
                cands = [ti for ti in edge_map.get(key, []) if mesh.tri_mid[ti] == up.id]
                mid_pt = 0.5 * (vertices[a] + vertices[b])
                found = None
                for ti in cands:
                    c = vertices[tri_arr[ti]].mean(axis=0)
                    if float((c - mid_pt) @ itf.normal) < 0:
                        found = ti
                        break
                if found is None:
                    raise MeshError(
                        f"interface {itf.id}: no facet triangle on the correct side"
                    )
                ledge = _tri_local_edge(tri_arr[found], a, b)
                lo_v, hi_v = key
                t_e = vertices[hi_v] - vertices[lo_v]
                t_e = t_e / np.linalg.norm(t_e)
                n_e = np.array([t_e[1], -t_e[0]])
                rows_tri.append(found)
                rows_edge.append(ledge)
                rows_flip.append(a > b)
                rows_nsign.append(1.0 if float(itf.normal @ n_e) > 0 else -1.0)
            trace[itf.id] = {
                "kind": "side",
                "tri": np.array(rows_tri, dtype=int),
                "local_edge": np.array(rows_edge, dtype=int),
                "flip": np.array(rows_flip, dtype=bool),
                "nsign": np.array(rows_nsign, dtype=float),
            }
        else:
            # point interface: lower is the 0-manifold, upper the segment
            tsign = 1.0 if float(itf.normal @ up.tangent) > 0 else -1.0
            cells = mesh.cells_of[up.id]
            if tsign > 0:
                cell = int(cells[-1])
                local_vertex = 1
            else:
                cell = int(cells[0])
                local_vertex = 0
            vid = int(mesh.cells1[cell][local_vertex])
            if vid != mesh.point_vertex[lo.id]:
                raise MeshError(f"interface {itf.id}: trace vertex mismatch")
            trace[itf.id] = {
                "kind": "point", "cell": cell, "local_vertex": local_vertex,
                "tsign": tsign, "vertex": vid,
            }
    mesh.trace = trace

    # boundary facets: edges with a single incident triangle
    poly = geometry.polygon
    nedges = len(poly)
    boundary_facets = {m.id: [] for m in geometry.manifolds_of_dim(2)}
    diam = float(np.max(poly.max(axis=0) - poly.min(axis=0))) * math.sqrt(2.0)
    tol = 1e-9 * diam
    for key in sorted(edge_map):
        owners = edge_map[key]
        if len(owners) != 1:
            continue
        ti = owners[0]
        a, b = key
        pedge = None
        for k in range(nedges):
            pa, pb = poly[k], poly[(k + 1) % nedges]
            d = pb - pa
            L2 = float(d @ d)
            ok = True
            for p in (vertices[a], vertices[b]):
                t = float(np.clip((p - pa) @ d / L2, 0.0, 1.0))
                if np.linalg.norm(p - (pa + t * d)) > tol:
                    ok = False
                    break
            if ok:
                pedge = k
                break
        if pedge is None:
            raise MeshError(f"boundary facet {key} lies on no polygon edge")
        ledge = _tri_local_edge(tri_arr[ti], a, b)
        boundary_facets[int(mesh.tri_mid[ti])].append((int(ti), int(ledge), int(pedge)))
    mesh.boundary_facets = boundary_facets

    p = vertices[tri_arr]
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    lengths = np.linalg.norm(e, axis=2)
    h = float(lengths.max()) if len(lengths) else 0.0
    for mid in mesh.cells_of:
        if len(mesh.cells_of[mid]):
            h = max(h, float(mesh.cell_lengths(mid).max()))
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    area2 = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    circum = lengths.prod(axis=1) / (2.0 * area2)
    inr = area2 / lengths.sum(axis=1)
    mesh.h = h
    mesh.shape_ratio = float((circum / inr).max())


# ----------------------------------------------------------------------------
# uniform refinement
# ----------------------------------------------------------------------------


def refine(mesh: MixedMesh) -> MixedMesh:
    """Uniform refinement: triangles into 4, segment cells into 2.

    Edge midpoints are computed once per undirected edge, so interface
    vertices stay shared bitwise between bulk and inclusion meshes.
    """
    vertices = [v for v in mesh.vertices]
    midpoint_of: dict[tuple, int] = {}

    def midpoint(a: int, b: int) -> int:
        key = _edge_key(a, b)
        if key not in midpoint_of:
            midpoint_of[key] = len(vertices)
            vertices.append(0.5 * (mesh.vertices[key[0]] + mesh.vertices[key[1]]))
        return midpoint_of[key]

    new_tris = []
    new_tri_mid = []
    tri_parent = []
    for ti, t in enumerate(mesh.tris):
        v0, v1, v2 = (int(x) for x in t)
        m0 = midpoint(v1, v2)
        m1 = midpoint(v2, v0)
        m2 = midpoint(v0, v1)
        for child in ((v0, m2, m1), (v1, m0, m2), (v2, m1, m0), (m0, m1, m2)):
            new_tris.append(child)
            new_tri_mid.append(int(mesh.tri_mid[ti]))
            tri_parent.append(ti)

    new_cells = []
    new_cell_mid = []
    cell_parent = []
    for ci, c in enumerate(mesh.cells1):
        a, b = int(c[0]), int(c[1])
        m = midpoint(a, b)
        for child in ((a, m), (m, b)):
            new_cells.append(child)
            new_cell_mid.append(int(mesh.cell1_mid[ci]))
            cell_parent.append(ci)

    out = MixedMesh(
        geometry=mesh.geometry,
        vertices=np.array(vertices),
        tris=np.array(new_tris, dtype=int),
        tri_mid=np.array(new_tri_mid, dtype=int),
        cells1=np.array(new_cells, dtype=int) if new_cells else np.zeros((0, 2), int),
        cell1_mid=np.array(new_cell_mid, dtype=int) if new_cell_mid else np.zeros((0,), int),
        point_vertex=dict(mesh.point_vertex),
        trace={}, boundary_facets={}, h=0.0, shape_ratio=0.0,
        tri_parent=np.array(tri_parent, dtype=int),
        cell1_parent=np.array(cell_parent, dtype=int),
        parent=mesh,
    )
    _finalize(out)
    # uniform bisection halves every length; the recomputed value differs only
    # by midpoint rounding, so record the exact half
    out.h = mesh.h / 2.0
    return out


# ----------------------------------------------------------------------------
# plain-text export / import
# ----------------------------------------------------------------------------


def save_mesh(mesh: MixedMesh, path: str):
    """Whitespace-separated tables with exact decimal round trip."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("mdelast-mesh 1\n")
        fh.write(f"vertices {len(mesh.vertices)}\n")
        for v in mesh.vertices:
            fh.write(f"{float(v[0])!r} {float(v[1])!r}\n")
        fh.write(f"triangles {len(mesh.tris)}\n")
        for t, m in zip(mesh.tris, mesh.tri_mid):
            fh.write(f"{t[0]} {t[1]} {t[2]} {m}\n")
        fh.write(f"cells1 {len(mesh.cells1)}\n")
        for c, m in zip(mesh.cells1, mesh.cell1_mid):
            fh.write(f"{c[0]} {c[1]} {m}\n")
        fh.write(f"points0 {len(mesh.point_vertex)}\n")
        for mid in sorted(mesh.point_vertex):
            fh.write(f"{mid} {mesh.point_vertex[mid]}\n")
        side = [j for j in sorted(mesh.trace) if mesh.trace[j]["kind"] == "side"]
        fh.write(f"traces {len(side)}\n")
        for j in side:
            tr = mesh.trace[j]
            fh.write(f"trace {j} {len(tr['tri'])}\n")
            for t, e, f, s in zip(tr["tri"], tr["local_edge"], tr["flip"], tr["nsign"]):
                fh.write(f"{t} {e} {int(f)} {int(s)}\n")


def load_mesh(path: str, geometry: MixedDimGeometry) -> MixedMesh:
    with open(path, "r", encoding="utf-8") as fh:
        tokens = fh.read().split()
    pos = 0

    def take(n=1):
        nonlocal pos
        out = tokens[pos:pos + n]
        pos += n
        return out

    magic, version = take(2)
    if magic != "mdelast-mesh":
        raise MeshError(f"{path} is not a mesh file")
    _, nv = take(2)
    nv = int(nv)
    vertices = np.array([[float(x) for x in take(2)] for _ in range(nv)])
    _, nt = take(2)
    nt = int(nt)
    rows = [[int(x) for x in take(4)] for _ in range(nt)]
    tris = np.array([r[:3] for r in rows], dtype=int) if rows else np.zeros((0, 3), int)
    tri_mid = np.array([r[3] for r in rows], dtype=int) if rows else np.zeros((0,), int)
    _, nc = take(2)
    nc = int(nc)
    rows = [[int(x) for x in take(3)] for _ in range(nc)]
    cells1 = np.array([r[:2] for r in rows], dtype=int) if rows else np.zeros((0, 2), int)
    cell1_mid = np.array([r[2] for r in rows], dtype=int) if rows else np.zeros((0,), int)
    _, npt = take(2)
    point_vertex = {}
    for _ in range(int(npt)):
        mid, vid = (int(x) for x in take(2))
        point_vertex[mid] = vid

    mesh = MixedMesh(
        geometry=geometry, vertices=vertices, tris=tris, tri_mid=tri_mid,
        cells1=cells1, cell1_mid=cell1_mid, point_vertex=point_vertex,
        trace={}, boundary_facets={}, h=0.0, shape_ratio=0.0,
    )
    _finalize(mesh)
    return mesh
